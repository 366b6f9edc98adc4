//! Build the full table of primary correlators up to a dimension bound,
//! persist it, and reload it into a warm store.
//!
//! ```text
//! cargo run --example correlator_table
//! ```

use rspin::closed::{format_rational, ClosedOracle};
use rspin::scheduler::{Engine, Sign, ValueStore};
use rspin::theory::TheoryParams;

fn main() {
    let params = TheoryParams::new(7, 0, 1).unwrap();
    let engine = Engine::new(params, ClosedOracle::default(), Sign::Plus).unwrap();

    let report = engine.full_table(3, 1).unwrap();
    println!(
        "dimension <= 3: computed={} zero-by-rule={} blocked={}",
        report.computed,
        report.zero_by_rule,
        report.blocked.len()
    );
    for (key, value, provenance) in engine.store().snapshot() {
        println!("{key} = {} ; {provenance}", format_rational(&value));
    }
    for (key, missing) in &report.blocked {
        println!(
            "blocked {key}: needs {}",
            missing
                .iter()
                .map(|k| k.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        );
    }

    // round-trip through the cache format
    let dir = std::env::temp_dir();
    let path = dir.join("rspin-example-cache.txt");
    engine.store().save_cache(&path).unwrap();
    let warm = ValueStore::new();
    let loaded = warm.load_cache(&path).unwrap();
    println!("reloaded {loaded} cache entries from {}", path.display());
    let _ = std::fs::remove_file(&path);
}
