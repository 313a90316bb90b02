// Render the bundled prompt for one contribution and diff two spec versions.

use oss_ethics::prompting::{default_spec, diff_specs, render_body, validate_spec};

fn main() {
    let spec = default_spec();
    assert!(validate_spec(&spec).is_empty());

    let rendering = render_body(&spec, "Thanks for the quick review!").expect("bundled spec renders");
    println!(
        "spec {} / prompt hash {}",
        rendering.spec_version,
        &rendering.content_hash[..16]
    );
    println!("{}", rendering.user_text);

    let mut next = spec.clone();
    next.version = "1.1.0".into();
    next.exemplars.truncate(next.exemplars.len() - 1);
    for change in diff_specs(&spec, &next) {
        println!("{change}");
    }
}
