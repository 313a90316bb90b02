// Classify the bundled fixture with a scripted model: no network needed.

use std::path::Path;
use std::sync::Arc;

use oss_ethics::classifier::{Classifier, MemoryCache, ModelConfig, ScriptedChat};
use oss_ethics::corpus::{load_dataset, Dataset};
use oss_ethics::prompting::default_spec;

fn main() {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/e2e");
    let dataset = Dataset::from_records(load_dataset(fixtures.join("dataset.jsonl")).unwrap());
    let chat = Arc::new(ScriptedChat::from_file(fixtures.join("transcript.json")).unwrap());

    let classifier = Classifier::new(chat, ModelConfig::default()).with_cache(Arc::new(MemoryCache::new()));
    let outcome = classifier
        .classify_batch(&dataset.contributions, &default_spec(), 4)
        .unwrap();

    for r in &outcome.records {
        let mut marks = String::new();
        if r.repaired {
            marks.push_str(" [repaired]");
        }
        if r.needs_review {
            marks.push_str(" [review]");
        }
        println!(
            "{:<16} {:<10} retries={}{marks}",
            r.contribution_id,
            r.labels.to_string(),
            r.retries
        );
    }
    let stats = classifier.stats();
    println!("model calls: {}, cache hits: {}", stats.model_calls, stats.cache_hits);

    // A second pass over the same inputs is answered from the cache.
    classifier
        .classify_batch(&dataset.contributions, &default_spec(), 4)
        .unwrap();
    println!("after second pass: {:?}", classifier.stats());
}
