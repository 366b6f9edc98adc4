//! Theory parameters, canonical correlator identities, admissibility gates
//! and unconditional vanishing rules.
//!
//! A correlator is identified by a [`CorrelatorKey`]: the sector (open or
//! closed-extended), the parameter triple `(r, h, m)`, a multiset of internal
//! insertions `τ^{twist}_{descendant}` and a multiset of boundary twists.
//! Keys are kept in a canonical sorted form so that equal multisets compare
//! equal, and they round-trip bit-exactly through the canonical key string
//! `o|r=7,h=0,m=1|I=2:0|B=5,5,5`.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use thiserror::Error;

/// Exact rational value; always stored in lowest terms with a positive
/// denominator (the representation `num-rational` maintains).
pub type Rational = BigRational;

/// Convenience constructor for small rationals.
pub fn rational(num: i64, den: i64) -> Rational {
    Rational::new(BigInt::from(num), BigInt::from(den))
}

/// `n` as a rational.
pub fn rational_int(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum DomainError {
    #[error("invalid theory parameters: {0}")]
    BadParams(String),
    #[error("internal twist {twist} out of range for sector {sector} at r={r}")]
    InternalTwistOutOfRange { twist: i64, r: i64, sector: Sector },
    #[error("boundary twist {twist} is not a legal level-{h} state at r={r}")]
    IllegalBoundaryTwist { twist: i64, r: i64, h: i64 },
    #[error("closed-extended key admits at most one twist -1 insertion")]
    DuplicateNegativeTwist,
    #[error("closed-extended keys carry no boundary insertions")]
    ClosedWithBoundary,
    #[error("operation requires a {0} key")]
    WrongSector(&'static str),
}

/// The triple `(r, h, m)` fixing which theory is computed: `r ≥ 2` the spin
/// order, `0 ≤ h ≤ ⌊(r-2)/2⌋` the level, and odd `m ≥ 1` the number of
/// Witten-bundle copies (`m = 1` is open r-spin, `m > 1` Fermat FJRW).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TheoryParams {
    pub r: i64,
    pub h: i64,
    pub m: i64,
}

impl TheoryParams {
    pub fn new(r: i64, h: i64, m: i64) -> Result<Self, DomainError> {
        if r < 2 {
            return Err(DomainError::BadParams(format!("r must be >= 2, got {r}")));
        }
        if h < 0 || h > (r - 2) / 2 {
            return Err(DomainError::BadParams(format!(
                "h must satisfy 0 <= h <= (r-2)/2 = {}, got {h}",
                (r - 2) / 2
            )));
        }
        if m < 1 || m % 2 == 0 {
            return Err(DomainError::BadParams(format!(
                "m must be odd and >= 1, got {m}"
            )));
        }
        Ok(TheoryParams { r, h, m })
    }

    /// Legal boundary twists at this level: `{r-2-2j : 0 <= j <= h}`.
    pub fn legal_boundary_twists(&self) -> Vec<i64> {
        (0..=self.h).map(|j| self.r - 2 - 2 * j).collect()
    }

    pub fn is_legal_boundary_twist(&self, b: i64) -> bool {
        let lo = self.r - 2 - 2 * self.h;
        b >= lo && b <= self.r - 2 && (b - lo) % 2 == 0
    }
}

/// Constants derived from the parameters that govern the computation
/// strategy: `m_min` is the smallest legal boundary twist, and `(n, b)` is
/// the unique pair for which the boundary-only state with `n` twists `m_min`
/// plus one twist `b` has rank equal to dimension, with `m_min <= b <= r-2`.
/// `c = (r-2-b)/2` is the internal twist paired with `b` in the recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TheoryConstants {
    pub m_min: i64,
    pub n: i64,
    pub b: i64,
    pub c: i64,
}

/// Derives `(m_min, n, b, c)` from the parameters.
pub fn derive_constants(params: TheoryParams) -> TheoryConstants {
    let r = params.r;
    let m_min = r - 2 - 2 * params.h;
    let n = 2 * r / (r - m_min);
    let b = (r - m_min) * n - r - 2;
    let c = (r - 2 - b) / 2;
    debug_assert!(m_min <= b && b <= r - 2);
    debug_assert_eq!(n * m_min + b - r + 2, (n - 2) * r);
    TheoryConstants { m_min, n, b, c }
}

/// Which moduli problem a key refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sector {
    Open,
    ClosedExtended,
}

impl fmt::Display for Sector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sector::Open => write!(f, "o"),
            Sector::ClosedExtended => write!(f, "ce"),
        }
    }
}

/// One internal insertion `τ^{twist}_{descendant}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct InternalInsertion {
    pub twist: i64,
    pub descendant: u32,
}

impl InternalInsertion {
    pub fn new(twist: i64, descendant: u32) -> Self {
        InternalInsertion { twist, descendant }
    }

    pub fn primary(twist: i64) -> Self {
        InternalInsertion {
            twist,
            descendant: 0,
        }
    }
}

/// Canonical identity of one correlator bracket.
///
/// Internal insertions are sorted by `(twist, descendant)` and boundary
/// twists ascending, so permuted multisets produce identical keys.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CorrelatorKey {
    pub sector: Sector,
    pub params: TheoryParams,
    pub internal: Vec<InternalInsertion>,
    pub boundary: Vec<i64>,
}

impl CorrelatorKey {
    /// Open-sector key. Internal twists must lie in `{0, …, r-1}` and
    /// boundary twists in the legal level-`h` set; anything else is a domain
    /// error rather than a zero, so malformed queries fail loudly.
    pub fn open(
        params: TheoryParams,
        internal: Vec<InternalInsertion>,
        boundary: Vec<i64>,
    ) -> Result<Self, DomainError> {
        for ins in &internal {
            if ins.twist < 0 || ins.twist > params.r - 1 {
                return Err(DomainError::InternalTwistOutOfRange {
                    twist: ins.twist,
                    r: params.r,
                    sector: Sector::Open,
                });
            }
        }
        for &b in &boundary {
            if !params.is_legal_boundary_twist(b) {
                return Err(DomainError::IllegalBoundaryTwist {
                    twist: b,
                    r: params.r,
                    h: params.h,
                });
            }
        }
        let mut key = CorrelatorKey {
            sector: Sector::Open,
            params,
            internal,
            boundary,
        };
        key.sort();
        Ok(key)
    }

    /// Closed-extended key: no boundary, twists in `{-1, 0, …, r-1}` with at
    /// most one `-1`.
    pub fn closed_extended(
        params: TheoryParams,
        internal: Vec<InternalInsertion>,
    ) -> Result<Self, DomainError> {
        let mut neg = 0;
        for ins in &internal {
            if ins.twist < -1 || ins.twist > params.r - 1 {
                return Err(DomainError::InternalTwistOutOfRange {
                    twist: ins.twist,
                    r: params.r,
                    sector: Sector::ClosedExtended,
                });
            }
            if ins.twist == -1 {
                neg += 1;
            }
        }
        if neg > 1 {
            return Err(DomainError::DuplicateNegativeTwist);
        }
        let mut key = CorrelatorKey {
            sector: Sector::ClosedExtended,
            params,
            internal,
            boundary: Vec::new(),
        };
        key.sort();
        Ok(key)
    }

    fn sort(&mut self) {
        self.internal.sort();
        self.boundary.sort();
    }

    /// Idempotent canonical representative (keys built through the
    /// constructors are already canonical).
    pub fn canonicalize(&self) -> Self {
        let mut key = self.clone();
        key.sort();
        key
    }

    pub fn l(&self) -> usize {
        self.internal.len()
    }

    pub fn k(&self) -> usize {
        self.boundary.len()
    }

    pub fn sum_internal_twists(&self) -> i64 {
        self.internal.iter().map(|i| i.twist).sum()
    }

    pub fn sum_boundary_twists(&self) -> i64 {
        self.boundary.iter().sum()
    }

    pub fn sum_descendants(&self) -> i64 {
        self.internal.iter().map(|i| i.descendant as i64).sum()
    }

    pub fn is_primary(&self) -> bool {
        self.internal.iter().all(|i| i.descendant == 0)
    }

    /// Dimension of the underlying moduli: `k + 2l - 3` for the open sector,
    /// `n - 3` for the closed-extended one.
    pub fn dimension(&self) -> i64 {
        match self.sector {
            Sector::Open => self.k() as i64 + 2 * self.l() as i64 - 3,
            Sector::ClosedExtended => self.l() as i64 - 3,
        }
    }
}

/// Why a key fails its admissibility gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateViolation {
    /// The rank formula does not produce an integer.
    RankNotInteger,
    /// The rank formula produces a negative integer.
    RankNegative,
    /// `e ≢ 1 + k (mod 2)`: no grading alternates at every boundary point.
    ParityMismatch,
    /// Bundle rank (with descendants) differs from the moduli dimension.
    RankDimensionMismatch,
    /// Closed-extended correlators need at least three insertions.
    TooFewInsertions,
}

impl fmt::Display for GateViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GateViolation::RankNotInteger => write!(f, "rank-not-integer"),
            GateViolation::RankNegative => write!(f, "rank-negative"),
            GateViolation::ParityMismatch => write!(f, "parity"),
            GateViolation::RankDimensionMismatch => write!(f, "rank-dimension"),
            GateViolation::TooFewInsertions => write!(f, "unstable"),
        }
    }
}

/// Outcome of an admissibility gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    /// Admissible with the given Witten-bundle rank (real rank for the open
    /// sector, complex rank for the closed one).
    Admissible {
        rank: i64,
    },
    Inadmissible(GateViolation),
}

impl Gate {
    pub fn is_admissible(&self) -> bool {
        matches!(self, Gate::Admissible { .. })
    }
}

/// Open-sector admissibility: the rank
/// `e = (2Σa_i + Σb_j - (r-2)) / r`
/// must be a non-negative integer with `e ≡ 1 + k (mod 2)`, and the total
/// rank must match the dimension: `m·e + 2Σd_i = k + 2l - 3`.
pub fn open_gate(key: &CorrelatorKey) -> Result<Gate, DomainError> {
    if key.sector != Sector::Open {
        return Err(DomainError::WrongSector("open"));
    }
    let p = key.params;
    let num = 2 * key.sum_internal_twists() + key.sum_boundary_twists() - (p.r - 2);
    if num.rem_euclid(p.r) != 0 {
        return Ok(Gate::Inadmissible(GateViolation::RankNotInteger));
    }
    let e = num / p.r;
    if e < 0 {
        return Ok(Gate::Inadmissible(GateViolation::RankNegative));
    }
    let k = key.k() as i64;
    let l = key.l() as i64;
    if (e - (1 + k)).rem_euclid(2) != 0 {
        return Ok(Gate::Inadmissible(GateViolation::ParityMismatch));
    }
    if p.m * e + 2 * key.sum_descendants() != k + 2 * l - 3 {
        return Ok(Gate::Inadmissible(GateViolation::RankDimensionMismatch));
    }
    Ok(Gate::Admissible { rank: e })
}

/// Closed-extended admissibility: `D_W = (Σa_i - (r-2)) / r` must be a
/// non-negative integer, `n ≥ 3`, and `m·D_W + Σd_i = n - 3`.
pub fn closed_gate(key: &CorrelatorKey) -> Result<Gate, DomainError> {
    if key.sector != Sector::ClosedExtended {
        return Err(DomainError::WrongSector("closed-extended"));
    }
    let p = key.params;
    let n = key.l() as i64;
    if n < 3 {
        return Ok(Gate::Inadmissible(GateViolation::TooFewInsertions));
    }
    let num = key.sum_internal_twists() - (p.r - 2);
    if num.rem_euclid(p.r) != 0 {
        return Ok(Gate::Inadmissible(GateViolation::RankNotInteger));
    }
    let dw = num / p.r;
    if dw < 0 {
        return Ok(Gate::Inadmissible(GateViolation::RankNegative));
    }
    if p.m * dw + key.sum_descendants() != n - 3 {
        return Ok(Gate::Inadmissible(GateViolation::RankDimensionMismatch));
    }
    Ok(Gate::Admissible { rank: dw })
}

/// Gate for either sector.
pub fn sector_gate(key: &CorrelatorKey) -> Result<Gate, DomainError> {
    match key.sector {
        Sector::Open => open_gate(key),
        Sector::ClosedExtended => closed_gate(key),
    }
}

/// Rules that force an open correlator to vanish.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZeroRule {
    Gate(GateViolation),
    /// `l ≥ 1`, `2l + k ≥ 4` and some primary internal insertion has twist
    /// at most `h`.
    SmallInternal,
    /// `m > 1` and `k` even.
    EvenBoundary,
}

impl fmt::Display for ZeroRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ZeroRule::Gate(v) => write!(f, "inadmissible:{v}"),
            ZeroRule::SmallInternal => write!(f, "small-internal"),
            ZeroRule::EvenBoundary => write!(f, "even-boundary"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Vanishing {
    Zero(ZeroRule),
    Unknown,
}

impl Vanishing {
    pub fn is_zero(&self) -> bool {
        matches!(self, Vanishing::Zero(_))
    }
}

/// Checks the unconditional vanishing rules on an open-sector key. `Unknown`
/// only means no rule fires; the value may still be zero.
///
/// The structural rules are reported ahead of plain gate failure, so a key
/// that vanishes for a geometric reason names that reason even when its
/// twist data is also inadmissible.
pub fn vanishing_check(key: &CorrelatorKey) -> Result<Vanishing, DomainError> {
    let gate = open_gate(key)?;
    let p = key.params;
    let l = key.l() as i64;
    let k = key.k() as i64;
    if l >= 1
        && 2 * l + k >= 4
        && key
            .internal
            .iter()
            .any(|i| i.descendant == 0 && i.twist <= p.h)
    {
        return Ok(Vanishing::Zero(ZeroRule::SmallInternal));
    }
    if p.m > 1 && k % 2 == 0 {
        return Ok(Vanishing::Zero(ZeroRule::EvenBoundary));
    }
    if let Gate::Inadmissible(v) = gate {
        return Ok(Vanishing::Zero(ZeroRule::Gate(v)));
    }
    Ok(Vanishing::Unknown)
}

// ---------------------------------------------------------------------------
// Canonical key strings
// ---------------------------------------------------------------------------

impl fmt::Display for CorrelatorKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}|r={},h={},m={}|I=",
            self.sector, self.params.r, self.params.h, self.params.m
        )?;
        if self.internal.is_empty() {
            write!(f, "-")?;
        } else {
            for (i, ins) in self.internal.iter().enumerate() {
                if i > 0 {
                    write!(f, ";")?;
                }
                write!(f, "{}:{}", ins.twist, ins.descendant)?;
            }
        }
        write!(f, "|B=")?;
        if self.boundary.is_empty() {
            write!(f, "-")?;
        } else {
            for (i, b) in self.boundary.iter().enumerate() {
                if i > 0 {
                    write!(f, ",")?;
                }
                write!(f, "{b}")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("invalid key string at byte {pos}: {message}")]
pub struct ParseKeyError {
    pub pos: usize,
    pub message: String,
}

impl ParseKeyError {
    fn new(pos: usize, message: impl Into<String>) -> Self {
        ParseKeyError {
            pos,
            message: message.into(),
        }
    }
}

fn parse_int(s: &str, base: usize, what: &str) -> Result<i64, ParseKeyError> {
    s.parse::<i64>()
        .map_err(|_| ParseKeyError::new(base, format!("expected {what}, found {s:?}")))
}

impl FromStr for CorrelatorKey {
    type Err = ParseKeyError;

    /// Parses the canonical key string
    /// `<sector>|r=<r>,h=<h>,m=<m>|I=<t>:<d>(;<t>:<d>)*|B=<b>(,<b>)*`
    /// with `I=-` / `B=-` for empty and sector `o` or `ce`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut offset = 0usize;
        let mut parts = Vec::new();
        for piece in s.split('|') {
            parts.push((offset, piece));
            offset += piece.len() + 1;
        }
        if parts.len() != 4 {
            return Err(ParseKeyError::new(
                0,
                format!("expected 4 '|'-separated segments, found {}", parts.len()),
            ));
        }
        let sector = match parts[0].1 {
            "o" => Sector::Open,
            "ce" => Sector::ClosedExtended,
            other => {
                return Err(ParseKeyError::new(
                    parts[0].0,
                    format!("unknown sector {other:?}, expected 'o' or 'ce'"),
                ))
            }
        };

        let (pbase, pstr) = parts[1];
        let fields: Vec<&str> = pstr.split(',').collect();
        if fields.len() != 3 {
            return Err(ParseKeyError::new(pbase, "expected r=..,h=..,m=.."));
        }
        let mut vals = [0i64; 3];
        for (i, (prefix, field)) in ["r=", "h=", "m="].iter().zip(&fields).enumerate() {
            let rest = field.strip_prefix(prefix).ok_or_else(|| {
                ParseKeyError::new(pbase, format!("expected {prefix}<int>, found {field:?}"))
            })?;
            vals[i] = parse_int(rest, pbase, "integer")?;
        }
        let params = TheoryParams::new(vals[0], vals[1], vals[2])
            .map_err(|e| ParseKeyError::new(pbase, e.to_string()))?;

        let (ibase, istr) = parts[2];
        let body = istr
            .strip_prefix("I=")
            .ok_or_else(|| ParseKeyError::new(ibase, "expected I=..."))?;
        let mut internal = Vec::new();
        if body != "-" {
            for item in body.split(';') {
                let (t, d) = item.split_once(':').ok_or_else(|| {
                    ParseKeyError::new(ibase, format!("expected <twist>:<desc>, found {item:?}"))
                })?;
                let twist = parse_int(t, ibase, "twist")?;
                let desc = parse_int(d, ibase, "descendant")?;
                if desc < 0 {
                    return Err(ParseKeyError::new(ibase, "descendant must be >= 0"));
                }
                internal.push(InternalInsertion::new(twist, desc as u32));
            }
        }

        let (bbase, bstr) = parts[3];
        let body = bstr
            .strip_prefix("B=")
            .ok_or_else(|| ParseKeyError::new(bbase, "expected B=..."))?;
        let mut boundary = Vec::new();
        if body != "-" {
            for item in body.split(',') {
                boundary.push(parse_int(item, bbase, "boundary twist")?);
            }
        }

        let key = match sector {
            Sector::Open => CorrelatorKey::open(params, internal, boundary),
            Sector::ClosedExtended => {
                if !boundary.is_empty() {
                    return Err(ParseKeyError::new(
                        bbase,
                        "closed-extended keys must have B=-",
                    ));
                }
                CorrelatorKey::closed_extended(params, internal)
            }
        };
        key.map_err(|e| ParseKeyError::new(0, e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(r: i64, h: i64, m: i64) -> TheoryParams {
        TheoryParams::new(r, h, m).unwrap()
    }

    #[test]
    fn constants_examples() {
        let c = derive_constants(params(7, 0, 1));
        assert_eq!((c.m_min, c.n, c.b, c.c), (5, 7, 5, 0));
        let c = derive_constants(params(5, 1, 1));
        assert_eq!((c.m_min, c.n, c.b, c.c), (1, 2, 1, 1));
        let c = derive_constants(params(2, 0, 1));
        assert_eq!((c.m_min, c.n, c.b, c.c), (0, 2, 0, 0));
    }

    #[test]
    fn constants_identity_all_small_r() {
        for r in 2..=40 {
            for h in 0..=(r - 2) / 2 {
                let c = derive_constants(params(r, h, 1));
                assert_eq!(c.n * c.m_min + c.b, c.n * r - 2 * r + r - 2, "r={r} h={h}");
                assert!(c.m_min <= c.b && c.b <= r - 2, "r={r} h={h}");
                assert_eq!((r - 2 - c.b) % 2, 0, "r={r} h={h}");
            }
        }
    }

    #[test]
    fn open_gate_examples() {
        let p = params(7, 0, 1);
        let key = CorrelatorKey::open(p, vec![InternalInsertion::primary(0)], vec![5]).unwrap();
        assert_eq!(open_gate(&key).unwrap(), Gate::Admissible { rank: 0 });

        let key = CorrelatorKey::open(p, vec![], vec![5, 5, 5]).unwrap();
        assert_eq!(
            open_gate(&key).unwrap(),
            Gate::Inadmissible(GateViolation::RankNotInteger)
        );

        let p = params(5, 1, 5);
        let key = CorrelatorKey::open(p, vec![], vec![1; 8]).unwrap();
        assert_eq!(open_gate(&key).unwrap(), Gate::Admissible { rank: 1 });
    }

    #[test]
    fn open_gate_rejects_malformed_twists() {
        let p = params(7, 0, 1);
        assert!(matches!(
            CorrelatorKey::open(p, vec![], vec![4]),
            Err(DomainError::IllegalBoundaryTwist { .. })
        ));
        assert!(matches!(
            CorrelatorKey::open(p, vec![InternalInsertion::primary(7)], vec![5]),
            Err(DomainError::InternalTwistOutOfRange { .. })
        ));
        // h = 1 legalizes r-4 but not odd-offset twists.
        let p = params(8, 1, 1);
        assert!(CorrelatorKey::open(p, vec![], vec![4, 6]).is_ok());
        assert!(CorrelatorKey::open(p, vec![], vec![5]).is_err());
    }

    #[test]
    fn closed_gate_examples() {
        let p = params(7, 0, 1);
        let key = CorrelatorKey::closed_extended(
            p,
            vec![
                InternalInsertion::primary(0),
                InternalInsertion::primary(2),
                InternalInsertion::primary(3),
            ],
        )
        .unwrap();
        assert_eq!(closed_gate(&key).unwrap(), Gate::Admissible { rank: 0 });

        let key = CorrelatorKey::closed_extended(
            p,
            vec![
                InternalInsertion::primary(-1),
                InternalInsertion::primary(3),
                InternalInsertion::primary(3),
            ],
        )
        .unwrap();
        assert_eq!(closed_gate(&key).unwrap(), Gate::Admissible { rank: 0 });

        let key = CorrelatorKey::closed_extended(
            p,
            vec![InternalInsertion::primary(2), InternalInsertion::primary(3)],
        )
        .unwrap();
        assert_eq!(
            closed_gate(&key).unwrap(),
            Gate::Inadmissible(GateViolation::TooFewInsertions)
        );

        assert_eq!(
            CorrelatorKey::closed_extended(
                p,
                vec![
                    InternalInsertion::primary(-1),
                    InternalInsertion::primary(-1),
                    InternalInsertion::primary(3),
                ],
            ),
            Err(DomainError::DuplicateNegativeTwist)
        );
    }

    #[test]
    fn vanishing_examples() {
        let p = params(5, 1, 1);
        let key = CorrelatorKey::open(
            p,
            vec![InternalInsertion::primary(1), InternalInsertion::primary(3)],
            vec![3, 3],
        )
        .unwrap();
        assert_eq!(
            vanishing_check(&key).unwrap(),
            Vanishing::Zero(ZeroRule::SmallInternal)
        );

        let p = params(5, 1, 5);
        let key = CorrelatorKey::open(p, vec![], vec![1; 8]).unwrap();
        assert_eq!(
            vanishing_check(&key).unwrap(),
            Vanishing::Zero(ZeroRule::EvenBoundary)
        );

        let p = params(7, 0, 1);
        let key =
            CorrelatorKey::open(p, vec![InternalInsertion::primary(2)], vec![5, 5, 5]).unwrap();
        assert_eq!(vanishing_check(&key).unwrap(), Vanishing::Unknown);
    }

    #[test]
    fn canonicalize_sorts_and_is_idempotent() {
        let p = params(7, 0, 1);
        let key = CorrelatorKey::open(
            p,
            vec![InternalInsertion::new(3, 1), InternalInsertion::new(2, 0)],
            vec![5, 5],
        )
        .unwrap();
        assert_eq!(
            key.internal,
            vec![InternalInsertion::new(2, 0), InternalInsertion::new(3, 1)]
        );
        assert_eq!(key.canonicalize(), key);

        let p = params(7, 2, 1);
        let key = CorrelatorKey::open(p, vec![], vec![5, 1, 5]).unwrap();
        assert_eq!(key.boundary, vec![1, 5, 5]);
    }

    #[test]
    fn key_string_round_trip() {
        let p = params(7, 0, 1);
        let key =
            CorrelatorKey::open(p, vec![InternalInsertion::primary(2)], vec![5, 5, 5]).unwrap();
        assert_eq!(key.to_string(), "o|r=7,h=0,m=1|I=2:0|B=5,5,5");
        assert_eq!(key.to_string().parse::<CorrelatorKey>().unwrap(), key);

        let key = CorrelatorKey::closed_extended(
            p,
            vec![InternalInsertion::primary(-1), InternalInsertion::new(3, 2)],
        )
        .unwrap();
        assert_eq!(key.to_string(), "ce|r=7,h=0,m=1|I=-1:0;3:2|B=-");
        assert_eq!(key.to_string().parse::<CorrelatorKey>().unwrap(), key);

        let key = CorrelatorKey::open(p, vec![], vec![]).unwrap();
        assert_eq!(key.to_string(), "o|r=7,h=0,m=1|I=-|B=-");
        assert_eq!(key.to_string().parse::<CorrelatorKey>().unwrap(), key);
    }

    #[test]
    fn key_string_errors_carry_position() {
        let err = "o|r=7,h=0|I=-|B=-".parse::<CorrelatorKey>().unwrap_err();
        assert_eq!(err.pos, 2);
        assert!("x|r=7,h=0,m=1|I=-|B=-".parse::<CorrelatorKey>().is_err());
        assert!("o|r=7,h=0,m=1|I=2|B=-".parse::<CorrelatorKey>().is_err());
        assert!("o|r=7,h=0,m=1|I=-|B=4".parse::<CorrelatorKey>().is_err());
        assert!("ce|r=7,h=0,m=1|I=-1:0;3:0;3:0|B=-"
            .parse::<CorrelatorKey>()
            .is_ok());
    }
}
