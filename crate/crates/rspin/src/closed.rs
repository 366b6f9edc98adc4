//! Closed-extended `(r, m)` correlators: the closed factors of every
//! recursion term.
//!
//! Three sources cover a value, tried in order: the admissibility gate
//! (inadmissible keys are zero), the string equation together with the
//! zero-dimensional three-point base case (any admissible all-primary
//! three-point correlator equals one under the normalization used here,
//! which absorbs the overall factor `r` of the defining integral), and an
//! extensible external value table for everything the recursion cannot
//! reach. A value absent from all three is reported as [`ClosedEval::Unknown`]
//! rather than guessed, so the scheduler can list exactly which external
//! inputs a computation is blocked on.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use num_traits::{One, Zero};
use thiserror::Error;

use crate::theory::{closed_gate, CorrelatorKey, Gate, InternalInsertion, Rational, Sector};

#[derive(Debug, Error)]
pub enum TableError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: key {key} fails the closed-extended gate")]
    GateInconsistent {
        path: String,
        line: usize,
        key: String,
    },
    #[error("conflicting values for {key}: {a} vs {b}")]
    Conflict { key: String, a: String, b: String },
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Provenance tag of a table entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableSource(pub String);

/// External closed-extended values, keyed by canonical key string.
#[derive(Debug, Default, Clone)]
pub struct ClosedValueTable {
    entries: BTreeMap<CorrelatorKey, (Rational, TableSource)>,
}

impl ClosedValueTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &CorrelatorKey) -> Option<&Rational> {
        self.entries.get(key).map(|(v, _)| v)
    }

    /// Inserts an entry; duplicate keys with conflicting values are an error,
    /// as are entries whose key fails the closed gate.
    pub fn insert(
        &mut self,
        key: CorrelatorKey,
        value: Rational,
        source: TableSource,
    ) -> Result<(), TableError> {
        let key = key.canonicalize();
        if !closed_gate(&key)
            .map_err(|e| TableError::Conflict {
                key: key.to_string(),
                a: e.to_string(),
                b: String::new(),
            })?
            .is_admissible()
        {
            return Err(TableError::GateInconsistent {
                path: source.0.clone(),
                line: 0,
                key: key.to_string(),
            });
        }
        // guard the normalization: admissible all-primary three-point
        // correlators equal one here, so an import disagreeing with that is
        // using a different overall scale
        if key.l() == 3 && key.is_primary() && !value.is_one() {
            return Err(TableError::Conflict {
                key: key.to_string(),
                a: "1 (three-point normalization)".to_string(),
                b: value.to_string(),
            });
        }
        if let Some((old, _)) = self.entries.get(&key) {
            if *old != value {
                return Err(TableError::Conflict {
                    key: key.to_string(),
                    a: old.to_string(),
                    b: value.to_string(),
                });
            }
            return Ok(());
        }
        self.entries.insert(key, (value, source));
        Ok(())
    }

    /// Merges another table into this one (conflicts are errors).
    pub fn merge(&mut self, other: &ClosedValueTable) -> Result<(), TableError> {
        for (k, (v, s)) in &other.entries {
            self.insert(k.clone(), v.clone(), s.clone())?;
        }
        Ok(())
    }
}

/// Parses a rational literal `num/den` or a bare integer.
pub fn parse_rational(s: &str) -> Option<Rational> {
    let s = s.trim();
    if let Some((n, d)) = s.split_once('/') {
        let n: num_bigint::BigInt = n.trim().parse().ok()?;
        let d: num_bigint::BigInt = d.trim().parse().ok()?;
        if d.is_zero() {
            return None;
        }
        Some(Rational::new(n, d))
    } else {
        let n: num_bigint::BigInt = s.parse().ok()?;
        Some(Rational::from_integer(n))
    }
}

/// Prints a rational as `num/den`, denominator always explicit.
pub fn format_rational(v: &Rational) -> String {
    format!("{}/{}", v.numer(), v.denom())
}

/// Loads a table file: one `<canonical key string> = <num>/<den>` entry per
/// line, `#` comments, order-insensitive.
pub fn load_table(path: &Path) -> Result<ClosedValueTable, TableError> {
    let text = std::fs::read_to_string(path).map_err(|e| TableError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_table(&text, &path.display().to_string())
}

pub fn parse_table(text: &str, path: &str) -> Result<ClosedValueTable, TableError> {
    let mut table = ClosedValueTable::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        // the key string itself contains '=' signs; the separator is the last one
        let (key_str, value_str) = line.rsplit_once('=').ok_or_else(|| TableError::Parse {
            path: path.to_string(),
            line: line_no,
            message: "expected '<key> = <num>/<den>'".to_string(),
        })?;
        let key: CorrelatorKey = key_str.trim().parse().map_err(|e| TableError::Parse {
            path: path.to_string(),
            line: line_no,
            message: format!("{e}"),
        })?;
        if key.sector != Sector::ClosedExtended {
            return Err(TableError::Parse {
                path: path.to_string(),
                line: line_no,
                message: "table entries must be closed-extended ('ce') keys".to_string(),
            });
        }
        let value = parse_rational(value_str).ok_or_else(|| TableError::Parse {
            path: path.to_string(),
            line: line_no,
            message: format!("invalid rational {:?}", value_str.trim()),
        })?;
        if !closed_gate(&key).unwrap().is_admissible() {
            return Err(TableError::GateInconsistent {
                path: path.to_string(),
                line: line_no,
                key: key.to_string(),
            });
        }
        table.insert(key, value, TableSource(format!("{path}:{line_no}")))?;
    }
    Ok(table)
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum StringReduceError {
    #[error("string reduction requires a closed-extended key")]
    WrongSector,
    #[error("string reduction requires a (twist 0, descendant 0) insertion")]
    NoUnitInsertion,
}

/// One application of the string equation: removes one `τ^0_0` insertion and
/// emits one term per remaining insertion with positive descendant, that
/// descendant lowered by one. Coefficients are all `1`; terms whose key drops
/// below three insertions evaluate to zero downstream.
pub fn string_reduce(
    key: &CorrelatorKey,
) -> Result<Vec<(Rational, CorrelatorKey)>, StringReduceError> {
    if key.sector != Sector::ClosedExtended {
        return Err(StringReduceError::WrongSector);
    }
    let unit = InternalInsertion::primary(0);
    let pos = key
        .internal
        .iter()
        .position(|i| *i == unit)
        .ok_or(StringReduceError::NoUnitInsertion)?;
    let mut rest = key.internal.clone();
    rest.remove(pos);
    let mut out = Vec::new();
    for (j, ins) in rest.iter().enumerate() {
        if ins.descendant == 0 {
            continue;
        }
        let mut child = rest.clone();
        child[j] = InternalInsertion::new(ins.twist, ins.descendant - 1);
        // removing a twist-0 insertion cannot create a second -1 twist
        let child_key = CorrelatorKey::closed_extended(key.params, child).unwrap();
        out.push((Rational::one(), child_key));
    }
    Ok(out)
}

/// Result of evaluating a closed-extended correlator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClosedEval {
    Value(Rational),
    /// Not derivable from the gate, the string equation and the loaded
    /// table; the computation is blocked on this key.
    Unknown,
}

impl fmt::Display for ClosedEval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClosedEval::Value(v) => write!(f, "{v}"),
            ClosedEval::Unknown => write!(f, "unknown"),
        }
    }
}

/// The closed-sector oracle: gate, string reduction and base cases in front
/// of an external table.
#[derive(Debug, Default, Clone)]
pub struct ClosedOracle {
    table: ClosedValueTable,
}

impl ClosedOracle {
    pub fn new(table: ClosedValueTable) -> Self {
        ClosedOracle { table }
    }

    pub fn table(&self) -> &ClosedValueTable {
        &self.table
    }

    /// Evaluates a closed-extended correlator.
    ///
    /// Order matters: inadmissible keys are zero; admissible three-point
    /// all-primary keys equal one; keys holding a `τ^0_0` insertion reduce
    /// through the string equation; anything else is a table lookup.
    pub fn eval(&self, key: &CorrelatorKey) -> ClosedEval {
        let key = key.canonicalize();
        match closed_gate(&key).expect("closed-extended key") {
            Gate::Inadmissible(_) => return ClosedEval::Value(Rational::zero()),
            Gate::Admissible { .. } => {}
        }
        if key.l() == 3 && key.is_primary() {
            return ClosedEval::Value(Rational::one());
        }
        if key
            .internal
            .iter()
            .any(|i| i.twist == 0 && i.descendant == 0)
        {
            let mut total = Rational::zero();
            for (coef, child) in string_reduce(&key).unwrap() {
                if child.l() < 3 {
                    continue;
                }
                match self.eval(&child) {
                    ClosedEval::Value(v) => total += coef * v,
                    ClosedEval::Unknown => return ClosedEval::Unknown,
                }
            }
            return ClosedEval::Value(total);
        }
        match self.table.get(&key) {
            Some(v) => ClosedEval::Value(v.clone()),
            None => ClosedEval::Unknown,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::theory::{rational_int, TheoryParams};

    fn params(r: i64, h: i64, m: i64) -> TheoryParams {
        TheoryParams::new(r, h, m).unwrap()
    }

    fn ce(params: TheoryParams, ins: &[(i64, u32)]) -> CorrelatorKey {
        CorrelatorKey::closed_extended(
            params,
            ins.iter()
                .map(|&(t, d)| InternalInsertion::new(t, d))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn three_point_primaries_equal_one() {
        let oracle = ClosedOracle::default();
        let p = params(7, 0, 1);
        assert_eq!(
            oracle.eval(&ce(p, &[(0, 0), (2, 0), (3, 0)])),
            ClosedEval::Value(rational_int(1))
        );
        assert_eq!(
            oracle.eval(&ce(p, &[(-1, 0), (3, 0), (3, 0)])),
            ClosedEval::Value(rational_int(1))
        );
    }

    #[test]
    fn gate_failing_key_is_zero() {
        let oracle = ClosedOracle::default();
        let p = params(7, 0, 1);
        assert_eq!(
            oracle.eval(&ce(p, &[(1, 0), (2, 0), (3, 0)])),
            ClosedEval::Value(rational_int(0))
        );
    }

    #[test]
    fn string_reduce_examples() {
        let p = params(7, 0, 1);
        // one descendant slot
        let key = ce(p, &[(4, 0), (1, 2), (0, 0)]);
        let terms = string_reduce(&key).unwrap();
        assert_eq!(terms.len(), 1);
        assert_eq!(terms[0].1, ce(p, &[(4, 0), (1, 1)]));

        // two descendant slots
        let key = ce(p, &[(4, 0), (1, 1), (2, 1), (0, 0)]);
        assert_eq!(string_reduce(&key).unwrap().len(), 2);

        // no unit insertion
        let key = ce(p, &[(4, 0), (1, 1), (2, 1)]);
        assert_eq!(string_reduce(&key), Err(StringReduceError::NoUnitInsertion));
    }

    #[test]
    fn iterated_string_reduction_boundary_term() {
        // ⟨τ^a_0 τ^{a1}_d (τ^0_0)^{d+1}⟩ = 1 exactly when a = r-2-a1.
        let oracle = ClosedOracle::default();
        for r in 2..=9 {
            let p = params(r, 0, 1);
            for a1 in 0..=r - 2 {
                for d in 0..=3u32 {
                    for a in -1..=r - 1 {
                        let mut ins = vec![(a, 0), (a1, d)];
                        ins.extend(std::iter::repeat_n((0, 0), d as usize + 1));
                        if a == -1 && a1 == -1 {
                            continue;
                        }
                        let v = oracle.eval(&ce(p, &ins));
                        let expect = if a == r - 2 - a1 { 1 } else { 0 };
                        assert_eq!(
                            v,
                            ClosedEval::Value(rational_int(expect)),
                            "r={r} a={a} a1={a1} d={d}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn primary_with_unit_insertion_vanishes_for_n_at_least_4() {
        let oracle = ClosedOracle::default();
        let p = params(7, 0, 1);
        // Σa = 12 = 2r-2, admissible with D_W... n=4: m·D_W+Σd=1 needs D_W=1.
        let key = ce(p, &[(0, 0), (5, 0), (6, 0), (1, 0)]);
        assert!(closed_gate(&key).unwrap().is_admissible());
        assert_eq!(oracle.eval(&key), ClosedEval::Value(rational_int(0)));
    }

    #[test]
    fn table_parsing() {
        assert!(parse_table("", "t").unwrap().is_empty());

        let table = parse_table(
            "# comment\nce|r=7,h=0,m=1|I=1:0;2:0;4:0;5:0|B=- = 3/7\n",
            "t",
        )
        .unwrap();
        assert_eq!(table.len(), 1);
        let key = "ce|r=7,h=0,m=1|I=1:0;2:0;4:0;5:0|B=-"
            .parse::<CorrelatorKey>()
            .unwrap();
        assert_eq!(table.get(&key), Some(&crate::theory::rational(3, 7)));

        // conflicting duplicates
        let text = "ce|r=7,h=0,m=1|I=1:0;2:0;4:0;5:0|B=- = 3/7\n\
                    ce|r=7,h=0,m=1|I=1:0;2:0;4:0;5:0|B=- = 2/7\n";
        assert!(matches!(
            parse_table(text, "t"),
            Err(TableError::Conflict { .. })
        ));

        // agreeing duplicates are fine
        let text = "ce|r=7,h=0,m=1|I=1:0;2:0;4:0;5:0|B=- = 3/7\n\
                    ce|r=7,h=0,m=1|I=1:0;2:0;4:0;5:0|B=- = 3/7\n";
        assert!(parse_table(text, "t").is_ok());

        // gate-inconsistent entry
        let text = "ce|r=7,h=0,m=1|I=1:0;2:0;3:0|B=- = 1/1\n";
        assert!(matches!(
            parse_table(text, "t"),
            Err(TableError::GateInconsistent { .. })
        ));

        // a three-point entry disagreeing with the base normalization
        let text = "ce|r=7,h=0,m=1|I=0:0;2:0;3:0|B=- = 7/1\n";
        assert!(matches!(
            parse_table(text, "t"),
            Err(TableError::Conflict { .. })
        ));
        let text = "ce|r=7,h=0,m=1|I=0:0;2:0;3:0|B=- = 1/1\n";
        assert!(parse_table(text, "t").is_ok());

        // parse error carries the line number
        let text = "\n\nnot a line\n";
        match parse_table(text, "t") {
            Err(TableError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn table_lookup_reaches_oracle() {
        let mut table = ClosedValueTable::new();
        let p = params(7, 0, 1);
        let key = ce(p, &[(1, 0), (2, 0), (4, 0), (5, 0)]);
        table
            .insert(key.clone(), rational_int(4), TableSource("test".into()))
            .unwrap();
        let oracle = ClosedOracle::new(table);
        assert_eq!(oracle.eval(&key), ClosedEval::Value(rational_int(4)));
        let missing = ce(p, &[(1, 0), (3, 0), (3, 0), (5, 0)]);
        assert_eq!(oracle.eval(&missing), ClosedEval::Unknown);
    }
}
