fn main() {
    std::process::exit(oss_ethics::cli::main());
}
