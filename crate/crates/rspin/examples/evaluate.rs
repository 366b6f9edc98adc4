//! Evaluate single correlators from canonical key strings.
//!
//! ```text
//! cargo run --example evaluate
//! ```

use rspin::closed::{format_rational, ClosedOracle};
use rspin::scheduler::{Engine, Outcome, Sign};
use rspin::theory::{CorrelatorKey, TheoryParams};

fn main() {
    let params = TheoryParams::new(7, 0, 1).unwrap();
    let engine = Engine::new(params, ClosedOracle::default(), Sign::Plus).unwrap();

    let queries = [
        "o|r=7,h=0,m=1|I=0:0|B=5",       // zero-dimensional, an initial value
        "o|r=7,h=0,m=1|I=3:0|B=5,5,5,5", // a factorial-chain member
        "o|r=7,h=0,m=1|I=0:1;1:0|B=5,5", // a descendant correlator
        "o|r=7,h=0,m=1|I=-|B=5,5,5",     // inadmissible twist data: zero
        "o|r=7,h=0,m=1|I=3:0;3:0|B=-",   // blocked on low-dimension input data
    ];

    for raw in queries {
        let key: CorrelatorKey = raw.parse().expect("canonical key string");
        match engine.compute(&key).unwrap() {
            Outcome::Value(v) => println!("{key} = {}", format_rational(&v)),
            Outcome::Blocked(missing) => {
                println!("{key} BLOCKED on:");
                for k in missing {
                    println!("    {k}");
                }
            }
        }
    }
}
