//! Topological recursion relations: symbolic expansion of a descendant
//! correlator, numeric evaluation of an expansion, and elimination of a
//! single unknown between two expansions of the same left-hand side.
//!
//! An expansion picks one internal insertion with positive descendant (the
//! *raised* insertion) and one further marking — a boundary twist, or a
//! second internal insertion — and rewrites the correlator as a signed sum
//! of products: one closed-extended factor, one *central* open factor
//! containing the marking, and any number of *side* open factors, each side
//! carrying one inserted boundary twist `r-2-2t` with `0 <= t <= h`.
//!
//! Insertions with equal twist and descendant are interchangeable, so the
//! enumeration runs over count vectors per insertion class rather than over
//! labelled partitions; each emitted term carries the exact multiplicity
//! with which the labelled sum produces it. Factors failing their sector
//! gate prune the whole term during enumeration, which keeps term counts
//! small: a side factor with nothing but its inserted twist has dimension
//! `-2` and never survives, so the number of side factors is bounded by the
//! number of available insertions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_bigint::BigInt;
use num_traits::{One, Zero};
use thiserror::Error;

use crate::theory::{open_gate, sector_gate, CorrelatorKey, InternalInsertion, Rational, Sector};

/// The marking a TRR is taken with respect to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Marking {
    /// Boundary variant: requires `l, k >= 1`; the marked boundary twist
    /// stays in the central factor.
    Boundary(i64),
    /// Internal variant: requires `l >= 2`; the marked insertion stays in
    /// the central factor with its descendant intact.
    Internal(InternalInsertion),
}

impl fmt::Display for Marking {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Marking::Boundary(b) => write!(f, "sigma^{b}"),
            Marking::Internal(i) => write!(f, "tau^{}_{}", i.twist, i.descendant),
        }
    }
}

/// Which insertion carries the raised descendant, and the chosen marking.
/// Insertions are referred to by value; equal insertions give equal
/// expansions, so no labelling is needed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MarkingRef {
    pub raised: InternalInsertion,
    pub marking: Marking,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ExpandError {
    #[error("TRR expansion requires an open-sector key")]
    NotOpen,
    #[error("raised insertion {0:?} not present in the correlator")]
    RaisedNotPresent(InternalInsertion),
    #[error("raised insertion must have descendant >= 1")]
    RaisedNotDescendant,
    #[error("marking {0} not present in the correlator")]
    MarkingNotPresent(String),
    #[error("internal marking equals the raised insertion but it appears only once")]
    MarkingIsRaised,
}

/// One term: a rational coefficient times a multiset of factor keys
/// (exactly one closed-extended factor, one central open factor and the
/// side open factors; the factor list is sorted, so the roles are not
/// distinguished here).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Term {
    pub coefficient: Rational,
    pub factors: Vec<CorrelatorKey>,
}

/// A full TRR expansion. Terms are merged by factor multiset and emitted in
/// sorted order, so expansions are reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expansion {
    pub lhs: CorrelatorKey,
    pub raised: InternalInsertion,
    pub marking: Marking,
    pub terms: Vec<Term>,
}

impl fmt::Display for Expansion {
    /// Debug dump: one term per line, `coef * [factor] * [factor] ...`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for term in &self.terms {
            write!(f, "{}", term.coefficient)?;
            for key in &term.factors {
                write!(f, " * [{key}]")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

fn factorial(n: usize) -> BigInt {
    let mut acc = BigInt::one();
    for i in 2..=n {
        acc *= i;
    }
    acc
}

/// `n! / (p_1! ... p_j!)` where the parts must sum to `n`.
fn multinomial(n: usize, parts: &[usize]) -> BigInt {
    debug_assert_eq!(parts.iter().sum::<usize>(), n);
    let mut acc = factorial(n);
    for &p in parts {
        acc /= factorial(p);
    }
    acc
}

/// A side-factor shape: how many insertions of each class it absorbs, plus
/// the inserted twist parameter `t`.
#[derive(Debug, Clone)]
struct Block {
    ints: Vec<usize>,
    bnds: Vec<usize>,
    t: i64,
    key: CorrelatorKey,
}

fn count_classes<T: Ord + Copy>(items: &[T]) -> Vec<(T, usize)> {
    let mut map: BTreeMap<T, usize> = BTreeMap::new();
    for &it in items {
        *map.entry(it).or_insert(0) += 1;
    }
    map.into_iter().collect()
}

fn enumerate_count_vectors(limits: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for &lim in limits {
        let mut next = Vec::with_capacity(out.len() * (lim + 1));
        for prefix in &out {
            for c in 0..=lim {
                let mut v = prefix.clone();
                v.push(c);
                next.push(v);
            }
        }
        out = next;
    }
    out
}

struct Enumerator<'a> {
    lhs: &'a CorrelatorKey,
    raised: InternalInsertion,
    marking: Marking,
    int_classes: Vec<(InternalInsertion, usize)>,
    bnd_classes: Vec<(i64, usize)>,
    blocks: Vec<Block>,
    acc: BTreeMap<Vec<CorrelatorKey>, Rational>,
}

impl<'a> Enumerator<'a> {
    fn run(&mut self) {
        let ints: Vec<usize> = self.int_classes.iter().map(|c| c.1).collect();
        let bnds: Vec<usize> = self.bnd_classes.iter().map(|c| c.1).collect();
        let mut chosen = Vec::new();
        self.choose_blocks(0, ints, bnds, &mut chosen);
    }

    fn choose_blocks(
        &mut self,
        idx: usize,
        rem_int: Vec<usize>,
        rem_bnd: Vec<usize>,
        chosen: &mut Vec<(usize, usize)>,
    ) {
        if idx == self.blocks.len() {
            self.split_remainder(&rem_int, &rem_bnd, chosen);
            return;
        }
        let mut max_mult = usize::MAX;
        for (c, &use_c) in self.blocks[idx].ints.iter().enumerate() {
            if let Some(q) = rem_int[c].checked_div(use_c) {
                max_mult = max_mult.min(q);
            }
        }
        for (c, &use_c) in self.blocks[idx].bnds.iter().enumerate() {
            if let Some(q) = rem_bnd[c].checked_div(use_c) {
                max_mult = max_mult.min(q);
            }
        }
        debug_assert_ne!(max_mult, usize::MAX, "blocks are non-empty");
        for mult in 0..=max_mult {
            let mut ri = rem_int.clone();
            let mut rb = rem_bnd.clone();
            for (c, &use_c) in self.blocks[idx].ints.iter().enumerate() {
                ri[c] -= use_c * mult;
            }
            for (c, &use_c) in self.blocks[idx].bnds.iter().enumerate() {
                rb[c] -= use_c * mult;
            }
            if mult > 0 {
                chosen.push((idx, mult));
            }
            self.choose_blocks(idx + 1, ri, rb, chosen);
            if mult > 0 {
                chosen.pop();
            }
        }
    }

    /// Distributes the insertions not absorbed by side factors between the
    /// closed factor and the central factor, then closes over the node twist
    /// `a` and emits the surviving terms.
    fn split_remainder(&mut self, rem_int: &[usize], rem_bnd: &[usize], chosen: &[(usize, usize)]) {
        let splits = enumerate_count_vectors(rem_int);
        for to_closed in splits {
            self.emit_terms(rem_int, rem_bnd, chosen, &to_closed);
        }
    }

    fn emit_terms(
        &mut self,
        rem_int: &[usize],
        rem_bnd: &[usize],
        chosen: &[(usize, usize)],
        to_closed: &[usize],
    ) {
        let params = self.lhs.params;
        let s: usize = chosen.iter().map(|&(_, m)| m).sum();

        // multiplicity of this shape in the labelled sum
        let mut numer = BigInt::one();
        for (c, &(_, total)) in self.int_classes.iter().enumerate() {
            let mut parts = Vec::new();
            for &(bi, mult) in chosen {
                for _ in 0..mult {
                    parts.push(self.blocks[bi].ints[c]);
                }
            }
            parts.push(to_closed[c]);
            parts.push(rem_int[c] - to_closed[c]);
            numer *= multinomial(total, &parts);
        }
        for (c, &(_, total)) in self.bnd_classes.iter().enumerate() {
            let mut parts = Vec::new();
            for &(bi, mult) in chosen {
                for _ in 0..mult {
                    parts.push(self.blocks[bi].bnds[c]);
                }
            }
            parts.push(rem_bnd[c]);
            numer *= multinomial(total, &parts);
        }
        let mut denom = BigInt::one();
        for &(_, mult) in chosen {
            denom *= factorial(mult);
        }
        let sign = if s.is_multiple_of(2) { 1 } else { -1 };
        let coefficient = Rational::new(numer * BigInt::from(sign), denom);

        // factors shared by every value of `a`
        let mut closed_base = vec![InternalInsertion::new(
            self.raised.twist,
            self.raised.descendant - 1,
        )];
        for &(bi, mult) in chosen {
            for _ in 0..mult {
                closed_base.push(InternalInsertion::primary(self.blocks[bi].t));
            }
        }
        for (c, &cnt) in to_closed.iter().enumerate() {
            for _ in 0..cnt {
                closed_base.push(self.int_classes[c].0);
            }
        }

        let mut central_internal_base = Vec::new();
        let mut central_boundary = Vec::new();
        match self.marking {
            Marking::Boundary(b) => central_boundary.push(b),
            Marking::Internal(i) => central_internal_base.push(i),
        }
        for (c, &cnt) in rem_int.iter().enumerate() {
            for _ in 0..(cnt - to_closed[c]) {
                central_internal_base.push(self.int_classes[c].0);
            }
        }
        for (c, &cnt) in rem_bnd.iter().enumerate() {
            for _ in 0..cnt {
                central_boundary.push(self.bnd_classes[c].0);
            }
        }

        let mut side_factors = Vec::new();
        for &(bi, mult) in chosen {
            for _ in 0..mult {
                side_factors.push(self.blocks[bi].key.clone());
            }
        }

        for a in -1..=params.r - 2 {
            let mut closed_ins = closed_base.clone();
            closed_ins.push(InternalInsertion::primary(a));
            let closed_key = match CorrelatorKey::closed_extended(params, closed_ins) {
                Ok(k) => k,
                Err(_) => continue, // a second -1 twist cannot occur; defensive
            };
            if !sector_gate(&closed_key).unwrap().is_admissible() {
                continue;
            }
            let mut central_ins = central_internal_base.clone();
            central_ins.push(InternalInsertion::primary(params.r - 2 - a));
            let central_key =
                match CorrelatorKey::open(params, central_ins, central_boundary.clone()) {
                    Ok(k) => k,
                    Err(_) => continue,
                };
            if !sector_gate(&central_key).unwrap().is_admissible() {
                continue;
            }
            let mut factors = Vec::with_capacity(2 + side_factors.len());
            factors.push(closed_key);
            factors.push(central_key);
            factors.extend(side_factors.iter().cloned());
            factors.sort();
            *self.acc.entry(factors).or_insert_with(Rational::zero) += coefficient.clone();
        }
    }
}

/// Expands an open descendant correlator through the TRR with respect to the
/// given raised insertion and marking.
///
/// A left-hand side failing the open gate yields the empty expansion (both
/// sides of the relation are zero).
pub fn trr_expand(lhs: &CorrelatorKey, mref: &MarkingRef) -> Result<Expansion, ExpandError> {
    if lhs.sector != Sector::Open {
        return Err(ExpandError::NotOpen);
    }
    let raised = mref.raised;
    if raised.descendant == 0 {
        return Err(ExpandError::RaisedNotDescendant);
    }
    let raised_count = lhs.internal.iter().filter(|i| **i == raised).count();
    if raised_count == 0 {
        return Err(ExpandError::RaisedNotPresent(raised));
    }
    match mref.marking {
        Marking::Boundary(b) => {
            if !lhs.boundary.contains(&b) {
                return Err(ExpandError::MarkingNotPresent(format!("sigma^{b}")));
            }
        }
        Marking::Internal(i) => {
            let count = lhs.internal.iter().filter(|x| **x == i).count();
            if count == 0 {
                return Err(ExpandError::MarkingNotPresent(format!(
                    "tau^{}_{}",
                    i.twist, i.descendant
                )));
            }
            if i == raised && count < 2 {
                return Err(ExpandError::MarkingIsRaised);
            }
        }
    }

    let mut expansion = Expansion {
        lhs: lhs.clone(),
        raised,
        marking: mref.marking,
        terms: Vec::new(),
    };
    if !open_gate(lhs).unwrap().is_admissible() {
        return Ok(expansion);
    }

    let mut free_internal = lhs.internal.clone();
    let pos = free_internal.iter().position(|i| *i == raised).unwrap();
    free_internal.remove(pos);
    let mut free_boundary = lhs.boundary.clone();
    match mref.marking {
        Marking::Boundary(b) => {
            let pos = free_boundary.iter().position(|x| *x == b).unwrap();
            free_boundary.remove(pos);
        }
        Marking::Internal(i) => {
            let pos = free_internal.iter().position(|x| *x == i).unwrap();
            free_internal.remove(pos);
        }
    }

    let int_classes = count_classes(&free_internal);
    let bnd_classes = count_classes(&free_boundary);
    let blocks = viable_blocks(lhs, &int_classes, &bnd_classes);

    let mut en = Enumerator {
        lhs,
        raised,
        marking: mref.marking,
        int_classes,
        bnd_classes,
        blocks,
        acc: BTreeMap::new(),
    };
    en.run();

    expansion.terms = en
        .acc
        .into_iter()
        .filter(|(_, coef)| !coef.is_zero())
        .map(|(factors, coefficient)| Term {
            coefficient,
            factors,
        })
        .collect();
    Ok(expansion)
}

/// All gate-admissible side-factor shapes over the free insertion classes.
fn viable_blocks(
    lhs: &CorrelatorKey,
    int_classes: &[(InternalInsertion, usize)],
    bnd_classes: &[(i64, usize)],
) -> Vec<Block> {
    let params = lhs.params;
    let int_limits: Vec<usize> = int_classes.iter().map(|c| c.1).collect();
    let bnd_limits: Vec<usize> = bnd_classes.iter().map(|c| c.1).collect();
    let mut blocks = Vec::new();
    for ints in enumerate_count_vectors(&int_limits) {
        for bnds in enumerate_count_vectors(&bnd_limits) {
            if ints.iter().all(|&c| c == 0) && bnds.iter().all(|&c| c == 0) {
                continue;
            }
            for t in 0..=params.h {
                let mut internal = Vec::new();
                for (c, &cnt) in ints.iter().enumerate() {
                    for _ in 0..cnt {
                        internal.push(int_classes[c].0);
                    }
                }
                let mut boundary = vec![params.r - 2 - 2 * t];
                for (c, &cnt) in bnds.iter().enumerate() {
                    for _ in 0..cnt {
                        boundary.push(bnd_classes[c].0);
                    }
                }
                let key = CorrelatorKey::open(params, internal, boundary).unwrap();
                if open_gate(&key).unwrap().is_admissible() {
                    blocks.push(Block {
                        ints: ints.clone(),
                        bnds: bnds.clone(),
                        t,
                        key,
                    });
                }
            }
        }
    }
    blocks
}

// ---------------------------------------------------------------------------
// Evaluation and elimination
// ---------------------------------------------------------------------------

/// Resolver answer for a single factor key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Resolution {
    Known(Rational),
    /// Computable, but not yet computed; the caller should compute the key
    /// and retry.
    Pending,
    /// Not derivable at all (missing external data).
    Missing,
}

/// Outcome of evaluating an expansion against a resolver.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvalAttempt {
    Value(Rational),
    /// Keys that must be computed before the value can be decided.
    Need(BTreeSet<CorrelatorKey>),
    /// Undecidable: these keys have no value and no computation path.
    Blocked(BTreeSet<CorrelatorKey>),
}

/// Sums `coefficient x product of factor values` over the terms. A term with
/// a known zero factor contributes nothing even when its other factors are
/// unresolved, so blocked reports never include keys that cannot influence
/// the value.
pub fn evaluate(
    expansion: &Expansion,
    resolve: &mut dyn FnMut(&CorrelatorKey) -> Resolution,
) -> EvalAttempt {
    let mut total = Rational::zero();
    let mut need = BTreeSet::new();
    let mut missing = BTreeSet::new();
    for term in &expansion.terms {
        let mut product = term.coefficient.clone();
        let mut dead = false;
        let mut pending = Vec::new();
        let mut absent = Vec::new();
        for factor in &term.factors {
            match resolve(factor) {
                Resolution::Known(v) => {
                    if v.is_zero() {
                        dead = true;
                        break;
                    }
                    product *= v;
                }
                Resolution::Pending => pending.push(factor.clone()),
                Resolution::Missing => absent.push(factor.clone()),
            }
        }
        if dead {
            continue;
        }
        if !pending.is_empty() {
            need.extend(pending);
        } else if !absent.is_empty() {
            missing.extend(absent);
        } else {
            total += product;
        }
    }
    if !need.is_empty() {
        EvalAttempt::Need(need)
    } else if !missing.is_empty() {
        EvalAttempt::Blocked(missing)
    } else {
        EvalAttempt::Value(total)
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum SolveError {
    #[error("expansions are not two readings of the same correlator")]
    MismatchedLhs,
    #[error("target coefficient is identical in both expansions; elimination is degenerate")]
    Degenerate,
    #[error("target appears with multiplicity >= 2 in a surviving term")]
    NonLinear,
    #[error("missing factor values: {0:?}")]
    MissingValues(BTreeSet<CorrelatorKey>),
}

/// Outcome of a linear elimination attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SolveAttempt {
    Value(Rational),
    Need(BTreeSet<CorrelatorKey>),
    Blocked(BTreeSet<CorrelatorKey>),
    Degenerate,
    NonLinear,
}

/// Reads each expansion as a linear function `P*x + Q` of the unknown
/// `target` and solves `P1*x + Q1 = P2*x + Q2`.
pub fn solve_linear(
    e1: &Expansion,
    e2: &Expansion,
    target: &CorrelatorKey,
    resolve: &mut dyn FnMut(&CorrelatorKey) -> Resolution,
) -> SolveAttempt {
    let mut coeffs = Vec::new();
    let mut need = BTreeSet::new();
    let mut missing = BTreeSet::new();
    let mut nonlinear = false;
    for expansion in [e1, e2] {
        let mut p = Rational::zero();
        let mut q = Rational::zero();
        for term in &expansion.terms {
            let mu = term.factors.iter().filter(|f| *f == target).count();
            let mut product = term.coefficient.clone();
            let mut dead = false;
            let mut pending = Vec::new();
            let mut absent = Vec::new();
            let mut seen_target = 0usize;
            for factor in &term.factors {
                if seen_target < mu && factor == target {
                    seen_target += 1;
                    continue;
                }
                match resolve(factor) {
                    Resolution::Known(v) => {
                        if v.is_zero() {
                            dead = true;
                            break;
                        }
                        product *= v;
                    }
                    Resolution::Pending => pending.push(factor.clone()),
                    Resolution::Missing => absent.push(factor.clone()),
                }
            }
            if dead {
                continue;
            }
            if !pending.is_empty() {
                need.extend(pending);
                continue;
            }
            if !absent.is_empty() {
                missing.extend(absent);
                continue;
            }
            match mu {
                0 => q += product,
                1 => p += product,
                _ => nonlinear = true,
            }
        }
        coeffs.push((p, q));
    }
    if !need.is_empty() {
        return SolveAttempt::Need(need);
    }
    if !missing.is_empty() {
        return SolveAttempt::Blocked(missing);
    }
    if nonlinear {
        return SolveAttempt::NonLinear;
    }
    let (p1, q1) = coeffs.remove(0);
    let (p2, q2) = coeffs.remove(0);
    let dp = p1 - p2;
    if dp.is_zero() {
        return SolveAttempt::Degenerate;
    }
    SolveAttempt::Value((q2 - q1) / dp)
}

/// Spec-level elimination entry point: every factor except `target` must
/// already resolve through the given resolver.
pub fn solve_main_term(
    e1: &Expansion,
    e2: &Expansion,
    target: &CorrelatorKey,
    resolve: &mut dyn FnMut(&CorrelatorKey) -> Resolution,
) -> Result<Rational, SolveError> {
    if e1.lhs != e2.lhs {
        return Err(SolveError::MismatchedLhs);
    }
    match solve_linear(e1, e2, target, resolve) {
        SolveAttempt::Value(v) => Ok(v),
        SolveAttempt::Need(keys) | SolveAttempt::Blocked(keys) => {
            Err(SolveError::MissingValues(keys))
        }
        SolveAttempt::Degenerate => Err(SolveError::Degenerate),
        SolveAttempt::NonLinear => Err(SolveError::NonLinear),
    }
}

/// Conservation statistic of a term: the open factors' dimensions plus
/// twice the closed factor's insertion count, minus six. For every surviving
/// term of one expansion this equals the rank of the bundle on the
/// left-hand side.
pub fn term_dimension_stat(term: &Term) -> i64 {
    let mut open_dims = 0i64;
    let mut closed_insertions = 0i64;
    for factor in &term.factors {
        match factor.sector {
            Sector::Open => open_dims += factor.dimension(),
            Sector::ClosedExtended => closed_insertions += factor.l() as i64,
        }
    }
    open_dims + 2 * closed_insertions - 6
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::theory::{rational_int, Gate, TheoryParams};

    fn params(r: i64, h: i64, m: i64) -> TheoryParams {
        TheoryParams::new(r, h, m).unwrap()
    }

    fn open_key(p: TheoryParams, ins: &[(i64, u32)], bnd: &[i64]) -> CorrelatorKey {
        CorrelatorKey::open(
            p,
            ins.iter()
                .map(|&(t, d)| InternalInsertion::new(t, d))
                .collect(),
            bnd.to_vec(),
        )
        .unwrap()
    }

    /// Independent label-based enumerator following the relation term by
    /// term: ordered side blocks over labelled insertions, accepted only in
    /// canonical block order so that each unordered family is counted once.
    fn brute_force_expand(
        lhs: &CorrelatorKey,
        mref: &MarkingRef,
    ) -> BTreeMap<Vec<CorrelatorKey>, Rational> {
        let params = lhs.params;
        let mut acc: BTreeMap<Vec<CorrelatorKey>, Rational> = BTreeMap::new();
        if !open_gate(lhs).unwrap().is_admissible() {
            return acc;
        }

        let mut free_int: Vec<InternalInsertion> = lhs.internal.clone();
        let pos = free_int.iter().position(|i| *i == mref.raised).unwrap();
        free_int.remove(pos);
        let mut free_bnd: Vec<i64> = lhs.boundary.clone();
        match mref.marking {
            Marking::Boundary(b) => {
                let pos = free_bnd.iter().position(|x| *x == b).unwrap();
                free_bnd.remove(pos);
            }
            Marking::Internal(i) => {
                let pos = free_int.iter().position(|x| *x == i).unwrap();
                free_int.remove(pos);
            }
        }
        let li = free_int.len();
        let kb = free_bnd.len();

        for s in 0..=(li + kb) {
            // assignment of internal labels to {-1 closed, 0 central, 1..s},
            // boundary labels to {0 central, 1..s}, twists t_j in 0..=h
            let int_choices = (s + 2) as u64;
            let bnd_choices = (s + 1) as u64;
            let t_choices = (params.h + 1) as u64;
            let total =
                int_choices.pow(li as u32) * bnd_choices.pow(kb as u32) * t_choices.pow(s as u32);
            'outer: for code in 0..total {
                let mut c = code;
                let mut int_dest = Vec::with_capacity(li);
                for _ in 0..li {
                    int_dest.push((c % int_choices) as i64 - 1);
                    c /= int_choices;
                }
                let mut bnd_dest = Vec::with_capacity(kb);
                for _ in 0..kb {
                    bnd_dest.push((c % bnd_choices) as i64);
                    c /= bnd_choices;
                }
                let mut ts = Vec::with_capacity(s);
                for _ in 0..s {
                    ts.push((c % t_choices) as i64);
                    c /= t_choices;
                }
                // blocks must be non-empty and in strictly increasing
                // canonical order (labelled blocks are pairwise distinct)
                let mut block_sig: Vec<(Vec<usize>, Vec<usize>, i64)> = Vec::new();
                for j in 1..=s {
                    let ints: Vec<usize> = (0..li).filter(|&x| int_dest[x] == j as i64).collect();
                    let bnds: Vec<usize> = (0..kb).filter(|&x| bnd_dest[x] == j as i64).collect();
                    if ints.is_empty() && bnds.is_empty() {
                        continue 'outer;
                    }
                    block_sig.push((ints, bnds, ts[j - 1]));
                }
                for w in block_sig.windows(2) {
                    if w[0] >= w[1] {
                        continue 'outer;
                    }
                }

                for a in -1..=params.r - 2 {
                    let mut closed_ins = vec![
                        InternalInsertion::new(mref.raised.twist, mref.raised.descendant - 1),
                        InternalInsertion::primary(a),
                    ];
                    for (x, &d) in int_dest.iter().enumerate() {
                        if d == -1 {
                            closed_ins.push(free_int[x]);
                        }
                    }
                    for &(_, _, t) in &block_sig {
                        closed_ins.push(InternalInsertion::primary(t));
                    }
                    let closed = CorrelatorKey::closed_extended(params, closed_ins).unwrap();
                    if !sector_gate(&closed).unwrap().is_admissible() {
                        continue;
                    }

                    let mut central_ins = vec![InternalInsertion::primary(params.r - 2 - a)];
                    let mut central_bnd = Vec::new();
                    match mref.marking {
                        Marking::Boundary(b) => central_bnd.push(b),
                        Marking::Internal(i) => central_ins.push(i),
                    }
                    for (x, &d) in int_dest.iter().enumerate() {
                        if d == 0 {
                            central_ins.push(free_int[x]);
                        }
                    }
                    for (x, &d) in bnd_dest.iter().enumerate() {
                        if d == 0 {
                            central_bnd.push(free_bnd[x]);
                        }
                    }
                    let central = CorrelatorKey::open(params, central_ins, central_bnd).unwrap();
                    if !sector_gate(&central).unwrap().is_admissible() {
                        continue;
                    }

                    let mut factors = vec![closed, central];
                    let mut pruned = false;
                    for (ints, bnds, t) in &block_sig {
                        let side_ins: Vec<_> = ints.iter().map(|&x| free_int[x]).collect();
                        let mut side_bnd = vec![params.r - 2 - 2 * t];
                        side_bnd.extend(bnds.iter().map(|&x| free_bnd[x]));
                        let side = CorrelatorKey::open(params, side_ins, side_bnd).unwrap();
                        if !sector_gate(&side).unwrap().is_admissible() {
                            pruned = true;
                            break;
                        }
                        factors.push(side);
                    }
                    if pruned {
                        continue;
                    }
                    factors.sort();
                    let sign = if s.is_multiple_of(2) { 1 } else { -1 };
                    *acc.entry(factors).or_insert_with(Rational::zero) += rational_int(sign);
                }
            }
        }
        acc.retain(|_, v| !v.is_zero());
        acc
    }

    fn as_map(e: &Expansion) -> BTreeMap<Vec<CorrelatorKey>, Rational> {
        e.terms
            .iter()
            .map(|t| (t.factors.clone(), t.coefficient.clone()))
            .collect()
    }

    #[test]
    fn factorial_chain_step_boundary_marking() {
        // expand <tau^1_1 tau^1_0 (sigma^5)^3> at (7,0,1) wrt a boundary
        // sigma^5: exactly the alpha term (coefficient +1, containing
        // <tau^2_0 (sigma^5)^3>) and the beta term (total coefficient -2).
        let p = params(7, 0, 1);
        let lhs = open_key(p, &[(1, 1), (1, 0)], &[5, 5, 5]);
        let mref = MarkingRef {
            raised: InternalInsertion::new(1, 1),
            marking: Marking::Boundary(5),
        };
        let e = trr_expand(&lhs, &mref).unwrap();
        assert_eq!(e.terms.len(), 2);

        let target = open_key(p, &[(2, 0)], &[5, 5, 5]);
        let alpha: Vec<&Term> = e
            .terms
            .iter()
            .filter(|t| t.factors.contains(&target))
            .collect();
        assert_eq!(alpha.len(), 1);
        assert_eq!(alpha[0].coefficient, rational_int(1));
        assert_eq!(alpha[0].factors.len(), 2);

        let beta: Vec<&Term> = e
            .terms
            .iter()
            .filter(|t| !t.factors.contains(&target))
            .collect();
        assert_eq!(beta.len(), 1);
        assert_eq!(beta[0].coefficient, rational_int(-2));
        let k1 = open_key(p, &[(1, 0)], &[5, 5]);
        assert_eq!(beta[0].factors.iter().filter(|f| **f == k1).count(), 2);
    }

    #[test]
    fn factorial_chain_step_internal_marking_is_empty() {
        let p = params(7, 0, 1);
        let lhs = open_key(p, &[(1, 1), (1, 0)], &[5, 5, 5]);
        let mref = MarkingRef {
            raised: InternalInsertion::new(1, 1),
            marking: Marking::Internal(InternalInsertion::primary(1)),
        };
        let e = trr_expand(&lhs, &mref).unwrap();
        assert!(e.terms.is_empty());
    }

    #[test]
    fn gate_failing_lhs_gives_empty_expansion() {
        let p = params(7, 0, 1);
        let lhs = open_key(p, &[(1, 1)], &[5, 5, 5]);
        assert!(!open_gate(&lhs).unwrap().is_admissible());
        let e = trr_expand(
            &lhs,
            &MarkingRef {
                raised: InternalInsertion::new(1, 1),
                marking: Marking::Boundary(5),
            },
        )
        .unwrap();
        assert!(e.terms.is_empty());
    }

    #[test]
    fn marking_errors() {
        let p = params(7, 0, 1);
        let lhs = open_key(p, &[(1, 1), (1, 0)], &[5, 5, 5]);
        assert_eq!(
            trr_expand(
                &lhs,
                &MarkingRef {
                    raised: InternalInsertion::new(1, 1),
                    marking: Marking::Boundary(3),
                }
            ),
            Err(ExpandError::MarkingNotPresent("sigma^3".into()))
        );
        assert_eq!(
            trr_expand(
                &lhs,
                &MarkingRef {
                    raised: InternalInsertion::new(1, 1),
                    marking: Marking::Internal(InternalInsertion::new(1, 1)),
                }
            ),
            Err(ExpandError::MarkingIsRaised)
        );
        assert_eq!(
            trr_expand(
                &lhs,
                &MarkingRef {
                    raised: InternalInsertion::new(1, 0),
                    marking: Marking::Boundary(5),
                }
            ),
            Err(ExpandError::RaisedNotDescendant)
        );
    }

    #[test]
    fn matches_brute_force_enumeration() {
        // class-count enumeration against the labelled oracle
        let cases: Vec<(TheoryParams, CorrelatorKey, MarkingRef)> = vec![
            (
                params(7, 0, 1),
                open_key(params(7, 0, 1), &[(1, 1), (1, 0)], &[5, 5, 5]),
                MarkingRef {
                    raised: InternalInsertion::new(1, 1),
                    marking: Marking::Boundary(5),
                },
            ),
            (
                params(7, 0, 1),
                open_key(params(7, 0, 1), &[(0, 1), (1, 0)], &[5, 5]),
                MarkingRef {
                    raised: InternalInsertion::new(0, 1),
                    marking: Marking::Internal(InternalInsertion::primary(1)),
                },
            ),
            (
                params(5, 1, 1),
                open_key(params(5, 1, 1), &[(2, 1), (3, 0)], &[1, 1, 1]),
                MarkingRef {
                    raised: InternalInsertion::new(2, 1),
                    marking: Marking::Boundary(1),
                },
            ),
            (
                params(5, 1, 1),
                open_key(params(5, 1, 1), &[(2, 1), (2, 0)], &[1, 1, 3]),
                MarkingRef {
                    raised: InternalInsertion::new(2, 1),
                    marking: Marking::Boundary(3),
                },
            ),
            (
                params(5, 1, 1),
                open_key(params(5, 1, 1), &[(1, 1), (1, 0), (4, 0)], &[1]),
                MarkingRef {
                    raised: InternalInsertion::new(1, 1),
                    marking: Marking::Internal(InternalInsertion::primary(4)),
                },
            ),
            (
                params(9, 2, 1),
                open_key(params(9, 2, 1), &[(0, 1), (2, 0)], &[3]),
                MarkingRef {
                    raised: InternalInsertion::new(0, 1),
                    marking: Marking::Boundary(3),
                },
            ),
            // the marking may equal the raised insertion when it appears twice
            (
                params(7, 0, 1),
                open_key(params(7, 0, 1), &[(1, 1), (1, 1), (0, 0)], &[5; 3]),
                MarkingRef {
                    raised: InternalInsertion::new(1, 1),
                    marking: Marking::Internal(InternalInsertion::new(1, 1)),
                },
            ),
        ];
        for (p, lhs, mref) in cases {
            assert!(
                matches!(open_gate(&lhs).unwrap(), Gate::Admissible { .. }),
                "test lhs must be admissible: {lhs}"
            );
            let fast = as_map(&trr_expand(&lhs, &mref).unwrap());
            let slow = brute_force_expand(&lhs, &mref);
            assert_eq!(fast, slow, "mismatch for {lhs} at r={}", p.r);
        }
    }

    #[test]
    fn solve_degenerate_on_identical_markings() {
        let p = params(7, 0, 1);
        let lhs = open_key(p, &[(1, 1), (1, 0)], &[5, 5, 5]);
        let mref = MarkingRef {
            raised: InternalInsertion::new(1, 1),
            marking: Marking::Boundary(5),
        };
        let e = trr_expand(&lhs, &mref).unwrap();
        let target = open_key(p, &[(2, 0)], &[5, 5, 5]);
        let mut resolve = |_: &CorrelatorKey| Resolution::Known(rational_int(1));
        assert_eq!(
            solve_main_term(&e, &e, &target, &mut resolve),
            Err(SolveError::Degenerate)
        );
    }

    #[test]
    fn solve_factorial_step() {
        let p = params(7, 0, 1);
        let lhs = open_key(p, &[(1, 1), (1, 0)], &[5, 5, 5]);
        let e1 = trr_expand(
            &lhs,
            &MarkingRef {
                raised: InternalInsertion::new(1, 1),
                marking: Marking::Boundary(5),
            },
        )
        .unwrap();
        let e2 = trr_expand(
            &lhs,
            &MarkingRef {
                raised: InternalInsertion::new(1, 1),
                marking: Marking::Internal(InternalInsertion::primary(1)),
            },
        )
        .unwrap();
        let target = open_key(p, &[(2, 0)], &[5, 5, 5]);
        // every cofactor in this step is a zero-dimensional correlator or the
        // previous chain value, all equal to one
        let mut resolve = |_: &CorrelatorKey| Resolution::Known(rational_int(1));
        let v = solve_main_term(&e1, &e2, &target, &mut resolve).unwrap();
        assert_eq!(v, rational_int(2));
    }

    #[test]
    fn evaluate_reports_blocked_keys() {
        let p = params(7, 0, 1);
        let lhs = open_key(p, &[(1, 1), (1, 0)], &[5, 5, 5]);
        let e = trr_expand(
            &lhs,
            &MarkingRef {
                raised: InternalInsertion::new(1, 1),
                marking: Marking::Boundary(5),
            },
        )
        .unwrap();
        let target = open_key(p, &[(2, 0)], &[5, 5, 5]);

        let mut resolve = |k: &CorrelatorKey| {
            if *k == target {
                Resolution::Missing
            } else {
                Resolution::Known(rational_int(1))
            }
        };
        match evaluate(&e, &mut resolve) {
            EvalAttempt::Blocked(missing) => {
                assert_eq!(
                    missing.into_iter().collect::<Vec<_>>(),
                    vec![target.clone()]
                )
            }
            other => panic!("expected blocked, got {other:?}"),
        }

        // empty expansion evaluates to zero
        let empty = Expansion {
            lhs: lhs.clone(),
            raised: InternalInsertion::new(1, 1),
            marking: Marking::Boundary(5),
            terms: Vec::new(),
        };
        let mut resolve = |_: &CorrelatorKey| Resolution::Missing;
        assert_eq!(
            evaluate(&empty, &mut resolve),
            EvalAttempt::Value(rational_int(0))
        );
    }

    #[test]
    fn dump_is_one_term_per_line() {
        let p = params(7, 0, 1);
        let lhs = open_key(p, &[(1, 1), (1, 0)], &[5, 5, 5]);
        let e = trr_expand(
            &lhs,
            &MarkingRef {
                raised: InternalInsertion::new(1, 1),
                marking: Marking::Boundary(5),
            },
        )
        .unwrap();
        let dump = e.to_string();
        assert_eq!(dump.lines().count(), 2);
        assert!(dump.lines().all(|l| l.contains(" * [")));
    }
}
