//! The Fermat quintic theory `(r, h, m) = (5, 1, 5)`: boundary-only
//! correlators exist for `5d - 2` boundary insertions of twist one, vanish
//! for even `d`, and are open inputs for odd `d`.
//!
//! ```text
//! cargo run --example quintic
//! ```

use rspin::closed::{format_rational, ClosedOracle};
use rspin::scheduler::{Engine, Outcome, Sign};
use rspin::theory::{open_gate, CorrelatorKey, TheoryParams};

fn main() {
    let params = TheoryParams::new(5, 1, 5).unwrap();
    let engine = Engine::new(params, ClosedOracle::default(), Sign::Plus).unwrap();

    for d in 1..=4i64 {
        let k = 5 * d - 2;
        let key = CorrelatorKey::open(params, vec![], vec![1; k as usize]).unwrap();
        assert!(open_gate(&key).unwrap().is_admissible());
        match engine.compute(&key).unwrap() {
            Outcome::Value(v) => println!("d={d}: {key} = {}", format_rational(&v)),
            Outcome::Blocked(_) => {
                println!("d={d}: {key} = ? (odd d, not determined by the recursions)")
            }
        }
    }
}
