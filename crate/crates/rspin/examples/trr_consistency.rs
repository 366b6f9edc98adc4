//! One correlator, many recursions: expand a descendant correlator with
//! respect to every admissible marking and watch all expansions compute the
//! same exact number.
//!
//! ```text
//! cargo run --example trr_consistency
//! ```

use rspin::cli::marking_choices;
use rspin::closed::{format_rational, ClosedEval, ClosedOracle};
use rspin::scheduler::{Engine, Outcome, Sign};
use rspin::theory::{CorrelatorKey, Sector};
use rspin::trr::{evaluate, trr_expand, EvalAttempt, Resolution};

fn main() {
    // three admissible markings: one boundary twist and two internal ones
    let key: CorrelatorKey = "o|r=7,h=0,m=1|I=0:1;1:0;6:0|B=5".parse().unwrap();
    let engine = Engine::new(key.params, ClosedOracle::default(), Sign::Plus).unwrap();

    println!("expanding {key} with respect to every admissible marking\n");
    for mref in marking_choices(&key) {
        let expansion = trr_expand(&key, &mref).unwrap();
        println!(
            "raised tau^{}_{} wrt {} -> {} surviving terms",
            mref.raised.twist,
            mref.raised.descendant,
            mref.marking,
            expansion.terms.len()
        );
        print!("{expansion}");

        let mut resolve = |k: &CorrelatorKey| match k.sector {
            Sector::ClosedExtended => match engine.oracle().eval(k) {
                ClosedEval::Value(v) => Resolution::Known(v),
                ClosedEval::Unknown => Resolution::Missing,
            },
            Sector::Open => match engine.compute(k).unwrap() {
                Outcome::Value(v) => Resolution::Known(v),
                Outcome::Blocked(_) => Resolution::Missing,
            },
        };
        match evaluate(&expansion, &mut resolve) {
            EvalAttempt::Value(v) => println!("value: {}\n", format_rational(&v)),
            other => println!("undecided: {other:?}\n"),
        }
    }
}
