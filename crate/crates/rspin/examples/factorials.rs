//! The factorial family: for every theory the chain of states with one
//! internal insertion over minimal boundary twists takes the values
//! 0!, 1!, 2!, ... — the recursion's signature computation.
//!
//! ```text
//! cargo run --example factorials
//! ```

use rspin::closed::{format_rational, ClosedOracle};
use rspin::scheduler::{Engine, Outcome, Sign};
use rspin::theory::{CorrelatorKey, InternalInsertion, TheoryParams};

fn main() {
    for (r, h) in [(7, 0), (9, 0), (5, 1), (8, 1), (9, 2)] {
        let params = TheoryParams::new(r, h, 1).unwrap();
        let engine = Engine::new(params, ClosedOracle::default(), Sign::Plus).unwrap();
        let c = engine.constants();
        println!(
            "(r={r}, h={h}): minimal boundary twist {}, chain length {}",
            c.m_min, c.n
        );
        for k in 0..=c.n - 1 {
            let key = CorrelatorKey::open(
                params,
                vec![InternalInsertion::primary((k + 1) * (h + 1) - 1)],
                vec![c.m_min; k as usize + 1],
            )
            .unwrap();
            match engine.compute(&key).unwrap() {
                Outcome::Value(v) => println!("  {key} = {}", format_rational(&v)),
                Outcome::Blocked(_) => println!("  {key} blocked"),
            }
        }
    }
}
