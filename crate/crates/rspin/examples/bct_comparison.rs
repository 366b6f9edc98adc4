//! The graph-sum transform: an independent second computation of every
//! `h = 0` correlator through the BCT recursion and a signed sum over
//! decorated trees.
//!
//! ```text
//! cargo run --example bct_comparison
//! ```

use rspin::closed::{format_rational, ClosedOracle};
use rspin::compare::{cross_validate, enumerate_graphs, transform, BctEvaluator};
use rspin::scheduler::{Engine, Outcome, Sign};
use rspin::theory::{CorrelatorKey, TheoryParams};
use rspin::trr::{EvalAttempt, Resolution};

fn main() {
    let params = TheoryParams::new(7, 0, 1).unwrap();
    let engine = Engine::new(params, ClosedOracle::default(), Sign::Plus).unwrap();

    // the graphs behind one descendant correlator
    let key: CorrelatorKey = "o|r=7,h=0,m=1|I=0:1;1:0|B=5,5".parse().unwrap();
    let descendants: Vec<u32> = key.internal.iter().map(|i| i.descendant).collect();
    let twists: Vec<i64> = key.internal.iter().map(|i| i.twist).collect();
    println!("graphs for {key}:");
    for graph in enumerate_graphs(&descendants, key.k()) {
        println!("  {graph}");
    }

    let bct = BctEvaluator::new(&engine).unwrap();
    let mut resolve = |k: &CorrelatorKey| match bct.compute(k) {
        Ok(Outcome::Value(v)) => Resolution::Known(v),
        _ => Resolution::Missing,
    };
    let direct = engine.compute(&key).unwrap();
    let graph_sum = transform(params, &twists, &descendants, key.k(), &mut resolve).unwrap();
    if let (Outcome::Value(d), EvalAttempt::Value(g)) = (&direct, &graph_sum) {
        println!(
            "\ndirect value {} vs graph sum {}\n",
            format_rational(d),
            format_rational(g)
        );
    }

    // and the full sweep up to dimension two
    let report = cross_validate(&engine, 2, false).unwrap();
    println!(
        "cross-validation to dimension 2: checked={} mismatches={} skipped={}",
        report.checked,
        report.mismatches.len(),
        report.skipped.len()
    );
}
