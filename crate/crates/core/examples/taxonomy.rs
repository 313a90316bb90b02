// Validate and repair candidate label sets.

use oss_ethics::taxonomy::{parse_flag_ids, repair_flag_set, validate_flag_set, RepairPolicy, FLAGS};

fn main() {
    for flag in FLAGS.iter().filter(|f| f.active) {
        println!(
            "{:<4} {:<9} {}",
            flag.id.to_string(),
            format!("{:?}", flag.group),
            flag.name
        );
    }
    println!();

    let candidates: [&[&str]; 5] = [&["F1", "F3"], &["F11"], &["F11", "F7"], &["F1", "F6"], &[]];
    for raw in candidates {
        let ids = parse_flag_ids(raw.iter().copied()).expect("known flag ids");
        match validate_flag_set(&ids) {
            Ok(set) => println!("{raw:?}: valid {set}"),
            Err(violations) => {
                let fixed = repair_flag_set(&ids, RepairPolicy::default());
                println!(
                    "{raw:?}: {violations} -> {} (review: {}, {})",
                    fixed.flags,
                    fixed.needs_review,
                    fixed.notes.join("; ")
                );
            }
        }
    }
}
