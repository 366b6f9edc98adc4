//! The closed-extended sector oracle: gate zeros, the three-point base
//! case, string-equation reduction, and table-backed external values.
//!
//! ```text
//! cargo run --example closed_oracle
//! ```

use rspin::closed::{parse_table, string_reduce, ClosedOracle};
use rspin::theory::CorrelatorKey;

fn main() {
    let oracle = ClosedOracle::default();
    let queries = [
        "ce|r=7,h=0,m=1|I=0:0;2:0;3:0|B=-",     // three-point base case
        "ce|r=7,h=0,m=1|I=-1:0;3:0;3:0|B=-",    // one negative twist allowed
        "ce|r=7,h=0,m=1|I=1:0;2:0;3:0|B=-",     // gate failure
        "ce|r=7,h=0,m=1|I=0:0;0:0;3:2;4:0|B=-", // string reduction chain
        "ce|r=7,h=0,m=1|I=1:0;2:0;4:0;5:0|B=-", // needs an external table
    ];
    for raw in queries {
        let key: CorrelatorKey = raw.parse().unwrap();
        println!("{key} -> {}", oracle.eval(&key));
    }

    // one reduction step, spelled out
    let key: CorrelatorKey = "ce|r=7,h=0,m=1|I=0:0;0:0;3:2;4:0|B=-".parse().unwrap();
    println!("\nstring reduction of {key}:");
    for (coef, child) in string_reduce(&key).unwrap() {
        println!("  {coef} * {child}");
    }

    // the same unknown key, answered by a loaded table
    let table = parse_table("ce|r=7,h=0,m=1|I=1:0;2:0;4:0;5:0|B=- = 3/7\n", "inline").unwrap();
    let oracle = ClosedOracle::new(table);
    let key: CorrelatorKey = "ce|r=7,h=0,m=1|I=1:0;2:0;4:0;5:0|B=-".parse().unwrap();
    println!("\nwith a table entry: {key} -> {}", oracle.eval(&key));
}
