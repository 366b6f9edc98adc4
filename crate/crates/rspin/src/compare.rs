//! Cross-validation against the boundary-condition (BCT) formulation of the
//! `h = 0` theory.
//!
//! The two theories agree on primary correlators but satisfy different
//! recursions for descendants; a graph-sum transform relates them. A
//! comparison graph distributes the insertions over a tree of disks: each
//! internal insertion may send up to `descendant`-many inserted boundary
//! tails of twist `r-2` to other vertices, each inserted tail contributing
//! one edge and one sign. Summing the signed products of per-vertex BCT
//! correlators over all such trees reproduces the point-insertion value,
//! which gives an independent computation path for every correlator both
//! sides can reach.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Mutex;

use num_bigint::BigInt;
use num_traits::{One, Zero};
use thiserror::Error;

use crate::scheduler::{Engine, Outcome, Provenance, StoreError, ValueStore};
use crate::theory::{
    open_gate, sector_gate, CorrelatorKey, InternalInsertion, Rational, Sector, TheoryParams,
};
use crate::trr::{evaluate, EvalAttempt, ExpandError, Expansion, Marking, Resolution, Term};

#[derive(Debug, Error)]
pub enum CompareError {
    #[error("the comparison is defined for h = 0 theories only")]
    NotLevelZero,
    #[error("descendant vector length must match the internal twist list")]
    LengthMismatch,
    #[error(transparent)]
    Engine(#[from] crate::scheduler::EngineError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// One vertex of a comparison graph: the original internal and boundary
/// labels it carries, plus one entry per inserted twist-`r-2` tail it
/// receives, recorded as the source internal label.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct GraphVertex {
    pub internal: Vec<usize>,
    pub boundary: Vec<usize>,
    pub received: Vec<usize>,
}

/// A decorated tree from the transform's graph collection, in canonical
/// form: vertex contents sorted, vertices sorted.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ComparisonGraph {
    pub vertices: Vec<GraphVertex>,
}

impl ComparisonGraph {
    fn canonicalize(mut self) -> Self {
        for v in &mut self.vertices {
            v.internal.sort_unstable();
            v.boundary.sort_unstable();
            v.received.sort_unstable();
        }
        self.vertices.sort();
        self
    }

    /// Edges as `(internal label, vertex index)` pairs, one per inserted
    /// tail, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (vi, v) in self.vertices.iter().enumerate() {
            for &src in &v.received {
                out.push((src, vi));
            }
        }
        out.sort_unstable();
        out
    }

    pub fn edge_count(&self) -> usize {
        self.vertices.iter().map(|v| v.received.len()).sum()
    }

    /// How many inserted tails the given internal label sends out.
    pub fn sent(&self, label: usize) -> usize {
        self.vertices
            .iter()
            .map(|v| v.received.iter().filter(|&&s| s == label).count())
            .sum()
    }
}

impl fmt::Display for ComparisonGraph {
    /// Dump format: `V=[{I:…;B:…},…] E=[(a,v),…] sign=±1` with 1-based
    /// labels and vertex indices; an edge `(a,v)` is the inserted
    /// twist-`r-2` tail that internal label `a` sends to vertex `v`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let fmt_labels = |labels: &[usize]| -> String {
            if labels.is_empty() {
                "-".to_string()
            } else {
                labels
                    .iter()
                    .map(|l| (l + 1).to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            }
        };
        write!(f, "V=[")?;
        for (i, v) in self.vertices.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(
                f,
                "{{I:{};B:{}}}",
                fmt_labels(&v.internal),
                fmt_labels(&v.boundary)
            )?;
        }
        write!(f, "] E=[")?;
        for (i, (a, vi)) in self.edges().into_iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "({},{})", a + 1, vi + 1)?;
        }
        let sign = if self.edge_count().is_multiple_of(2) {
            "+1"
        } else {
            "-1"
        };
        write!(f, "] sign={sign}")
    }
}

/// Exhaustive, duplicate-free enumeration of the comparison graphs for the
/// internal labels with the given descendant bounds and `k` boundary
/// labels. Connectedness plus the tree count `|V| - |E| = 1` are enforced;
/// the single-vertex, edgeless graph is always present.
pub fn enumerate_graphs(descendants: &[u32], k: usize) -> Vec<ComparisonGraph> {
    let l = descendants.len();
    let mut out = BTreeSet::new();
    for counts in count_vectors(descendants) {
        enumerate_for_counts(&counts, l, k, &mut out);
    }
    out.into_iter().collect()
}

fn count_vectors(limits: &[u32]) -> Vec<Vec<u32>> {
    let mut out = vec![Vec::new()];
    for &lim in limits {
        let mut next = Vec::with_capacity(out.len() * (lim as usize + 1));
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

fn enumerate_for_counts(counts: &[u32], l: usize, k: usize, out: &mut BTreeSet<ComparisonGraph>) {
    let edges: usize = counts.iter().map(|&c| c as usize).sum();
    let vcount = edges + 1;
    let labels = l + k;

    // partition the original labels over at most `vcount` parts via
    // restricted growth strings; leftover parts are anonymous vertices that
    // carry inserted tails only
    for assignment in growth_strings(labels, vcount) {
        assign_recipients(counts, l, k, &assignment, vcount, out);
    }
}

/// Restricted growth strings of the given length with values below `cap`:
/// every canonical partition of `len` labels into at most `cap` parts.
fn growth_strings(len: usize, cap: usize) -> Vec<Vec<usize>> {
    fn rec(len: usize, cap: usize, cur: &mut Vec<usize>, used: usize, out: &mut Vec<Vec<usize>>) {
        if cur.len() == len {
            out.push(cur.clone());
            return;
        }
        for v in 0..=used.min(cap - 1) {
            cur.push(v);
            rec(len, cap, cur, used.max(v + 1), out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if cap == 0 {
        if len == 0 {
            out.push(Vec::new());
        }
        return out;
    }
    rec(len, cap, &mut Vec::new(), 0, &mut out);
    out
}

fn assign_recipients(
    counts: &[u32],
    l: usize,
    k: usize,
    assignment: &[usize],
    vcount: usize,
    out: &mut BTreeSet<ComparisonGraph>,
) {
    // choose, for each internal label, a set of distinct recipient vertices
    let mut recipient_sets: Vec<Vec<Vec<usize>>> = Vec::with_capacity(l);
    for (label, &c) in counts.iter().enumerate() {
        let own = assignment[label];
        let candidates: Vec<usize> = (0..vcount).filter(|&v| v != own).collect();
        recipient_sets.push(subsets_of_size(&candidates, c as usize));
        if recipient_sets.last().unwrap().is_empty() {
            return;
        }
    }

    let mut chosen = vec![0usize; l];
    loop {
        build_graph(l, k, assignment, vcount, &recipient_sets, &chosen, out);
        // odometer over the recipient choices
        let mut pos = 0;
        loop {
            if pos == l {
                return;
            }
            if chosen[pos] + 1 < recipient_sets[pos].len() {
                chosen[pos] += 1;
                break;
            }
            chosen[pos] = 0;
            pos += 1;
        }
    }
}

fn build_graph(
    l: usize,
    k: usize,
    assignment: &[usize],
    vcount: usize,
    recipient_sets: &[Vec<Vec<usize>>],
    chosen: &[usize],
    out: &mut BTreeSet<ComparisonGraph>,
) {
    // connected with |V|-1 edges means a tree
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); vcount];
    for label in 0..l {
        let own = assignment[label];
        for &to in &recipient_sets[label][chosen[label]] {
            adj[own].push(to);
            adj[to].push(own);
        }
    }
    let mut seen = vec![false; vcount];
    let mut stack = vec![0usize];
    seen[0] = true;
    let mut reached = 1;
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                reached += 1;
                stack.push(w);
            }
        }
    }
    if reached != vcount {
        return;
    }

    let mut vertices: Vec<GraphVertex> = (0..vcount)
        .map(|_| GraphVertex {
            internal: Vec::new(),
            boundary: Vec::new(),
            received: Vec::new(),
        })
        .collect();
    for label in 0..l {
        vertices[assignment[label]].internal.push(label);
    }
    for label in 0..k {
        vertices[assignment[l + label]].boundary.push(label);
    }
    for label in 0..l {
        for &to in &recipient_sets[label][chosen[label]] {
            vertices[to].received.push(label);
        }
    }
    out.insert(ComparisonGraph { vertices }.canonicalize());
}

fn subsets_of_size(items: &[usize], size: usize) -> Vec<Vec<usize>> {
    fn rec(
        items: &[usize],
        start: usize,
        size: usize,
        cur: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if size == 0 {
            out.push(cur.clone());
            return;
        }
        for i in start..items.len() {
            if items.len() - i < size {
                break;
            }
            cur.push(items[i]);
            rec(items, i + 1, size - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(items, 0, size, &mut Vec::new(), &mut out);
    out
}

/// The per-vertex BCT factor keys of a graph, for the given insertion data.
pub fn graph_factors(
    params: TheoryParams,
    graph: &ComparisonGraph,
    internal_twists: &[i64],
    descendants: &[u32],
) -> Vec<CorrelatorKey> {
    let b = params.r - 2;
    graph
        .vertices
        .iter()
        .map(|v| {
            let internal = v
                .internal
                .iter()
                .map(|&label| {
                    InternalInsertion::new(
                        internal_twists[label],
                        descendants[label] - graph.sent(label) as u32,
                    )
                })
                .collect();
            let boundary = vec![b; v.boundary.len() + v.received.len()];
            CorrelatorKey::open(params, internal, boundary).unwrap()
        })
        .collect()
}

/// The graph-sum transform: evaluates
/// `Σ_G (-1)^{|E(G)|} Π_v ⟨…⟩^{BCT}` over all comparison graphs for the
/// given insertion data, resolving BCT factor values through the supplied
/// resolver.
pub fn transform(
    params: TheoryParams,
    internal_twists: &[i64],
    descendants: &[u32],
    boundary_count: usize,
    resolve: &mut dyn FnMut(&CorrelatorKey) -> Resolution,
) -> Result<EvalAttempt, CompareError> {
    if params.h != 0 {
        return Err(CompareError::NotLevelZero);
    }
    if internal_twists.len() != descendants.len() {
        return Err(CompareError::LengthMismatch);
    }
    let mut total = Rational::zero();
    let mut need = BTreeSet::new();
    let mut missing = BTreeSet::new();
    for graph in enumerate_graphs(descendants, boundary_count) {
        let sign = if graph.edge_count().is_multiple_of(2) {
            1
        } else {
            -1
        };
        let mut product = Rational::from_integer(BigInt::from(sign));
        let mut dead = false;
        let mut pending = Vec::new();
        let mut absent = Vec::new();
        for factor in graph_factors(params, &graph, internal_twists, descendants) {
            match resolve(&factor) {
                Resolution::Known(v) => {
                    if v.is_zero() {
                        dead = true;
                        break;
                    }
                    product *= v;
                }
                Resolution::Pending => pending.push(factor),
                Resolution::Missing => absent.push(factor),
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
    Ok(if !need.is_empty() {
        EvalAttempt::Need(need)
    } else if !missing.is_empty() {
        EvalAttempt::Blocked(missing)
    } else {
        EvalAttempt::Value(total)
    })
}

// ---------------------------------------------------------------------------
// BCT recursion
// ---------------------------------------------------------------------------

fn binomial(n: usize, k: usize) -> BigInt {
    let mut acc = BigInt::one();
    for i in 0..k {
        acc = acc * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    acc
}

/// Expands a BCT descendant correlator through the BCT recursion (all
/// boundary twists are `r-2`). Terms come in two families: a
/// closed-extended factor times one open factor, and a pair of open
/// factors with one inserted `r-2` boundary twist. A gate-failing
/// left-hand side yields the empty expansion.
pub fn bct_trr_expand(
    lhs: &CorrelatorKey,
    mref: &crate::trr::MarkingRef,
) -> Result<Expansion, ExpandError> {
    if lhs.sector != Sector::Open {
        return Err(ExpandError::NotOpen);
    }
    let params = lhs.params;
    let raised = mref.raised;
    if raised.descendant == 0 {
        return Err(ExpandError::RaisedNotDescendant);
    }
    if !lhs.internal.contains(&raised) {
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

    let lowered = InternalInsertion::new(raised.twist, raised.descendant - 1);
    let mut rest: Vec<InternalInsertion> = lhs.internal.clone();
    let pos = rest.iter().position(|i| *i == raised).unwrap();
    rest.remove(pos);
    if let Marking::Internal(i) = mref.marking {
        let pos = rest.iter().position(|x| *x == i).unwrap();
        rest.remove(pos);
    }
    let free_k = match mref.marking {
        Marking::Boundary(_) => lhs.k() - 1,
        Marking::Internal(_) => lhs.k(),
    };
    let b = params.r - 2;

    let mut classes: BTreeMap<InternalInsertion, usize> = BTreeMap::new();
    for ins in &rest {
        *classes.entry(*ins).or_insert(0) += 1;
    }
    let classes: Vec<(InternalInsertion, usize)> = classes.into_iter().collect();
    let limits: Vec<usize> = classes.iter().map(|c| c.1).collect();

    let mut acc: BTreeMap<Vec<CorrelatorKey>, Rational> = BTreeMap::new();

    for to_first in split_vectors(&limits) {
        let mut split_coef = BigInt::one();
        for (c, &(_, total)) in classes.iter().enumerate() {
            split_coef *= binomial(total, to_first[c]);
        }

        // closed-extended x open terms
        for a in -1..=params.r - 2 {
            let mut closed_ins = vec![InternalInsertion::primary(a), lowered];
            for (c, &cnt) in to_first.iter().enumerate() {
                for _ in 0..cnt {
                    closed_ins.push(classes[c].0);
                }
            }
            let closed = CorrelatorKey::closed_extended(params, closed_ins).unwrap();
            if !sector_gate(&closed).unwrap().is_admissible() {
                continue;
            }
            let mut open_ins = vec![InternalInsertion::primary(params.r - 2 - a)];
            if let Marking::Internal(i) = mref.marking {
                open_ins.push(i);
            }
            for (c, &cnt) in to_first.iter().enumerate() {
                for _ in 0..(classes[c].1 - cnt) {
                    open_ins.push(classes[c].0);
                }
            }
            let open = CorrelatorKey::open(params, open_ins, vec![b; lhs.k()]).unwrap();
            if !sector_gate(&open).unwrap().is_admissible() {
                continue;
            }
            let mut factors = vec![closed, open];
            factors.sort();
            *acc.entry(factors).or_insert_with(Rational::zero) +=
                Rational::from_integer(split_coef.clone());
        }

        // open x open terms with one inserted r-2 boundary twist
        for t1 in 0..=free_k {
            let coef = Rational::from_integer(split_coef.clone() * binomial(free_k, t1));
            let mut first_ins = vec![lowered];
            for (c, &cnt) in to_first.iter().enumerate() {
                for _ in 0..cnt {
                    first_ins.push(classes[c].0);
                }
            }
            let first = CorrelatorKey::open(params, first_ins, vec![b; t1]).unwrap();
            if !sector_gate(&first).unwrap().is_admissible() {
                continue;
            }
            let mut second_ins = Vec::new();
            if let Marking::Internal(i) = mref.marking {
                second_ins.push(i);
            }
            for (c, &cnt) in to_first.iter().enumerate() {
                for _ in 0..(classes[c].1 - cnt) {
                    second_ins.push(classes[c].0);
                }
            }
            let extra = match mref.marking {
                Marking::Boundary(_) => 2, // the inserted twist plus the marking
                Marking::Internal(_) => 1,
            };
            let second =
                CorrelatorKey::open(params, second_ins, vec![b; free_k - t1 + extra]).unwrap();
            if !sector_gate(&second).unwrap().is_admissible() {
                continue;
            }
            let mut factors = vec![first, second];
            factors.sort();
            *acc.entry(factors).or_insert_with(Rational::zero) += coef;
        }
    }

    expansion.terms = acc
        .into_iter()
        .filter(|(_, coef)| !coef.is_zero())
        .map(|(factors, coefficient)| Term {
            coefficient,
            factors,
        })
        .collect();
    Ok(expansion)
}

fn split_vectors(limits: &[usize]) -> Vec<Vec<usize>> {
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

/// Memoized BCT correlator values: primaries seeded from the `h = 0`
/// engine, descendants computed through the BCT recursion.
///
/// The point-insertion vanishing rules do not hold for BCT descendants, so
/// factor resolution here uses only the admissibility gate.
pub struct BctEvaluator<'a> {
    engine: &'a Engine,
    store: ValueStore,
    blocked: Mutex<BTreeMap<CorrelatorKey, BTreeSet<CorrelatorKey>>>,
}

impl<'a> BctEvaluator<'a> {
    pub fn new(engine: &'a Engine) -> Result<Self, CompareError> {
        if engine.params().h != 0 {
            return Err(CompareError::NotLevelZero);
        }
        Ok(BctEvaluator {
            engine,
            store: ValueStore::new(),
            blocked: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn store(&self) -> &ValueStore {
        &self.store
    }

    pub fn compute(&self, key: &CorrelatorKey) -> Result<Outcome, CompareError> {
        let key = key.canonicalize();
        if let Some((v, _)) = self.store.get(&key) {
            return Ok(Outcome::Value(v));
        }
        if let Some(missing) = self.blocked.lock().unwrap().get(&key) {
            return Ok(Outcome::Blocked(missing.clone()));
        }
        if !open_gate(&key).unwrap().is_admissible() {
            self.store
                .insert(key, Rational::zero(), Provenance::Vanishing)?;
            return Ok(Outcome::Value(Rational::zero()));
        }
        if key.is_primary() {
            // primary correlators coincide with the point-insertion theory
            let outcome = self.engine.compute(&key)?;
            match &outcome {
                Outcome::Value(v) => {
                    self.store.insert(key, v.clone(), Provenance::External)?;
                }
                Outcome::Blocked(missing) => {
                    self.blocked.lock().unwrap().insert(key, missing.clone());
                }
            }
            return Ok(outcome);
        }

        let raised = *key.internal.iter().find(|i| i.descendant >= 1).unwrap();
        let marking = if key.k() >= 1 {
            Marking::Boundary(key.params.r - 2)
        } else {
            let other = key
                .internal
                .iter()
                .find(|i| **i != raised)
                .copied()
                .unwrap_or(raised);
            Marking::Internal(other)
        };
        let expansion = bct_trr_expand(&key, &crate::trr::MarkingRef { raised, marking })
            .expect("valid marking");
        // factors strictly decrease the descendant total, so plain
        // recursion bottoms out at primaries
        let mut missing_open: BTreeSet<CorrelatorKey> = BTreeSet::new();
        let mut err: Option<CompareError> = None;
        let mut resolve = |k: &CorrelatorKey| -> Resolution {
            match k.sector {
                Sector::ClosedExtended => match self.engine.oracle().eval(k) {
                    crate::closed::ClosedEval::Value(v) => Resolution::Known(v),
                    crate::closed::ClosedEval::Unknown => Resolution::Missing,
                },
                Sector::Open => match self.compute(k) {
                    Ok(Outcome::Value(v)) => Resolution::Known(v),
                    Ok(Outcome::Blocked(missing)) => {
                        missing_open.extend(missing);
                        Resolution::Missing
                    }
                    Err(e) => {
                        err = Some(e);
                        Resolution::Missing
                    }
                },
            }
        };
        let attempt = evaluate(&expansion, &mut resolve);
        if let Some(e) = err {
            return Err(e);
        }
        match attempt {
            EvalAttempt::Value(v) => {
                self.store.insert(key, v.clone(), Provenance::Computed)?;
                Ok(Outcome::Value(v))
            }
            EvalAttempt::Need(_) => unreachable!("BCT resolver never defers"),
            EvalAttempt::Blocked(keys) => {
                let mut missing = missing_open;
                missing.extend(
                    keys.into_iter()
                        .filter(|k| k.sector == Sector::ClosedExtended),
                );
                self.blocked
                    .lock()
                    .unwrap()
                    .insert(key.clone(), missing.clone());
                Ok(Outcome::Blocked(missing))
            }
        }
    }
}

/// One disagreement between the two computation paths.
#[derive(Debug, Clone)]
pub struct Mismatch {
    pub key: CorrelatorKey,
    pub direct: Rational,
    pub graph_sum: Rational,
    /// Per-graph breakdown: canonical dump and the graph's contribution.
    pub breakdown: Vec<(String, Rational)>,
}

#[derive(Debug, Default)]
pub struct CompareReport {
    pub checked: usize,
    pub mismatches: Vec<Mismatch>,
    /// Keys one side (or both) could not compute, with the missing data.
    pub skipped: Vec<(CorrelatorKey, BTreeSet<CorrelatorKey>)>,
}

impl CompareReport {
    pub fn ok(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Checks the graph-sum transform for every admissible correlator of
/// dimension at most `max_dim`: the point-insertion value against the
/// signed sum of BCT products. `primary_only` restricts to correlators
/// without descendants, where the transform degenerates to the identity.
pub fn cross_validate(
    engine: &Engine,
    max_dim: i64,
    primary_only: bool,
) -> Result<CompareReport, CompareError> {
    let bct = BctEvaluator::new(engine)?;
    let mut resolve = |k: &CorrelatorKey| match bct.compute(k) {
        Ok(Outcome::Value(v)) => Resolution::Known(v),
        Ok(Outcome::Blocked(_)) | Err(_) => Resolution::Missing,
    };
    cross_validate_with(engine, max_dim, primary_only, &mut resolve)
}

/// As [`cross_validate`], with a caller-supplied BCT resolver (used for
/// fault injection in tests).
pub fn cross_validate_with(
    engine: &Engine,
    max_dim: i64,
    primary_only: bool,
    bct_resolve: &mut dyn FnMut(&CorrelatorKey) -> Resolution,
) -> Result<CompareReport, CompareError> {
    let params = engine.params();
    if params.h != 0 {
        return Err(CompareError::NotLevelZero);
    }
    let mut report = CompareReport::default();
    for key in admissible_keys_with_descendants(params, max_dim) {
        if primary_only && !key.is_primary() {
            continue;
        }
        let twists: Vec<i64> = key.internal.iter().map(|i| i.twist).collect();
        let descendants: Vec<u32> = key.internal.iter().map(|i| i.descendant).collect();

        let direct = match engine.compute(&key)? {
            Outcome::Value(v) => v,
            Outcome::Blocked(missing) => {
                report.skipped.push((key, missing));
                continue;
            }
        };
        let graph_sum = match transform(params, &twists, &descendants, key.k(), bct_resolve)? {
            EvalAttempt::Value(v) => v,
            EvalAttempt::Need(keys) | EvalAttempt::Blocked(keys) => {
                report.skipped.push((key, keys));
                continue;
            }
        };
        report.checked += 1;
        if direct != graph_sum {
            let mut breakdown = Vec::new();
            for graph in enumerate_graphs(&descendants, key.k()) {
                let sign = if graph.edge_count().is_multiple_of(2) {
                    1
                } else {
                    -1
                };
                let mut product = Rational::from_integer(BigInt::from(sign));
                let mut complete = true;
                for factor in graph_factors(params, &graph, &twists, &descendants) {
                    match bct_resolve(&factor) {
                        Resolution::Known(v) => product *= v,
                        _ => {
                            complete = false;
                            break;
                        }
                    }
                }
                if complete {
                    breakdown.push((graph.to_string(), product));
                }
            }
            report.mismatches.push(Mismatch {
                key,
                direct,
                graph_sum,
                breakdown,
            });
        }
    }
    Ok(report)
}

/// All gate-admissible open keys (descendants included) of dimension at
/// most `max_dim` for an `h = 0` theory.
pub fn admissible_keys_with_descendants(params: TheoryParams, max_dim: i64) -> Vec<CorrelatorKey> {
    let mut out = Vec::new();
    let b = params.r - 2;
    let mut candidates = Vec::new();
    for t in 0..params.r {
        for d in 0..=(max_dim.max(0) as u32).div_ceil(2) {
            candidates.push(InternalInsertion::new(t, d));
        }
    }
    for dim in 0..=max_dim.max(-1) {
        for l in 0..=((dim + 3) / 2) as usize {
            let k = (dim + 3 - 2 * l as i64) as usize;
            for ins in multisets_of(&candidates, l) {
                let key = CorrelatorKey::open(params, ins, vec![b; k]).unwrap();
                if open_gate(&key).unwrap().is_admissible() {
                    out.push(key);
                }
            }
        }
    }
    out.sort();
    out.dedup();
    out
}

fn multisets_of(values: &[InternalInsertion], size: usize) -> Vec<Vec<InternalInsertion>> {
    fn rec(
        values: &[InternalInsertion],
        start: usize,
        size: usize,
        cur: &mut Vec<InternalInsertion>,
        out: &mut Vec<Vec<InternalInsertion>>,
    ) {
        if size == 0 {
            out.push(cur.clone());
            return;
        }
        for i in start..values.len() {
            cur.push(values[i]);
            rec(values, i, size - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(values, 0, size, &mut Vec::new(), &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed::ClosedOracle;
    use crate::scheduler::Sign;
    use crate::theory::rational_int;
    use crate::trr::MarkingRef;

    fn engine_701() -> Engine {
        let params = TheoryParams::new(7, 0, 1).unwrap();
        Engine::new(params, ClosedOracle::default(), Sign::Plus).unwrap()
    }

    #[test]
    fn graph_count_examples() {
        // one internal (d=0), one boundary: only the edgeless graph
        assert_eq!(enumerate_graphs(&[0], 1).len(), 1);
        // one internal (d=1), one boundary: edgeless plus two 2-vertex
        // trees differing in the boundary label's vertex
        assert_eq!(enumerate_graphs(&[1], 1).len(), 3);
        // no insertions at all: the empty single-vertex graph
        assert_eq!(enumerate_graphs(&[], 0).len(), 1);
    }

    #[test]
    fn graphs_are_trees() {
        for graph in enumerate_graphs(&[2, 1], 2) {
            assert_eq!(graph.vertices.len(), graph.edge_count() + 1);
        }
    }

    /// The transform is triangular in the descendant total: the edgeless
    /// graph contributes the same-insertion BCT correlator, so BCT values
    /// can be recovered from point-insertion values by back-substitution.
    #[test]
    fn bct_values_recoverable_by_back_substitution() {
        let e = engine_701();
        let p = e.params();
        let bct = BctEvaluator::new(&e).unwrap();

        fn recover(
            e: &Engine,
            key: &CorrelatorKey,
        ) -> Option<Rational> {
            if key.is_primary() {
                return match e.compute(key).unwrap() {
                    Outcome::Value(v) => Some(v),
                    Outcome::Blocked(_) => None,
                };
            }
            let twists: Vec<i64> = key.internal.iter().map(|i| i.twist).collect();
            let descendants: Vec<u32> = key.internal.iter().map(|i| i.descendant).collect();
            let direct = match e.compute(key).unwrap() {
                Outcome::Value(v) => v,
                Outcome::Blocked(_) => return None,
            };
            let mut rest = Rational::from_integer(0.into());
            for graph in enumerate_graphs(&descendants, key.k()) {
                if graph.edge_count() == 0 {
                    continue;
                }
                let sign = if graph.edge_count().is_multiple_of(2) { 1 } else { -1 };
                let mut product = Rational::from_integer(BigInt::from(sign));
                for factor in graph_factors(key.params, &graph, &twists, &descendants) {
                    product *= recover(e, &factor)?;
                }
                rest += product;
            }
            Some(direct - rest)
        }

        let mut verified = 0usize;
        for key in admissible_keys_with_descendants(p, 3) {
            if key.sum_descendants() == 0 {
                continue;
            }
            let Some(recovered) = recover(&e, &key) else {
                continue;
            };
            match bct.compute(&key).unwrap() {
                Outcome::Value(v) => {
                    assert_eq!(v, recovered, "round trip fails for {key}");
                    verified += 1;
                }
                Outcome::Blocked(_) => continue,
            }
        }
        assert!(verified >= 3, "too few round-trip instances: {verified}");
    }

    #[test]
    fn graph_dump_format() {
        let graphs = enumerate_graphs(&[1], 1);
        let dumps: Vec<String> = graphs.iter().map(|g| g.to_string()).collect();
        assert!(
            dumps.contains(&"V=[{I:1;B:1}] E=[] sign=+1".to_string()),
            "{dumps:?}"
        );
        for dump in &dumps {
            assert!(dump.starts_with("V=["));
            assert!(dump.contains("sign="));
        }
    }

    #[test]
    fn bct_expand_has_both_term_families() {
        let e = engine_701();
        let p = e.params();
        let lhs = CorrelatorKey::open(
            p,
            vec![InternalInsertion::new(1, 1), InternalInsertion::primary(1)],
            vec![5, 5, 5],
        )
        .unwrap();
        let expansion = bct_trr_expand(
            &lhs,
            &MarkingRef {
                raised: InternalInsertion::new(1, 1),
                marking: Marking::Boundary(5),
            },
        )
        .unwrap();
        let families: (usize, usize) = expansion.terms.iter().fold((0, 0), |(c, o), t| {
            if t.factors.iter().any(|f| f.sector == Sector::ClosedExtended) {
                (c + 1, o)
            } else {
                (c, o + 1)
            }
        });
        assert!(families.0 >= 1, "closed-open family missing");
        assert!(families.1 >= 1, "open-open family missing");
    }

    #[test]
    fn bct_expand_rejects_no_internal() {
        let e = engine_701();
        let p = e.params();
        let lhs = CorrelatorKey::open(p, vec![], vec![5; 8]).unwrap();
        assert!(bct_trr_expand(
            &lhs,
            &MarkingRef {
                raised: InternalInsertion::new(0, 1),
                marking: Marking::Boundary(5),
            }
        )
        .is_err());
    }

    #[test]
    fn bct_expand_gate_failing_lhs_is_empty() {
        let e = engine_701();
        let p = e.params();
        let lhs = CorrelatorKey::open(p, vec![InternalInsertion::new(1, 1)], vec![5]).unwrap();
        let expansion = bct_trr_expand(
            &lhs,
            &MarkingRef {
                raised: InternalInsertion::new(1, 1),
                marking: Marking::Boundary(5),
            },
        )
        .unwrap();
        assert!(expansion.terms.is_empty());
    }

    #[test]
    fn transform_of_primary_is_the_bct_correlator() {
        // all d = 0: the single edgeless graph, transform = the correlator
        let e = engine_701();
        let p = e.params();
        let bct = BctEvaluator::new(&e).unwrap();
        let mut resolve = |k: &CorrelatorKey| match bct.compute(k) {
            Ok(Outcome::Value(v)) => Resolution::Known(v),
            _ => Resolution::Missing,
        };
        let got = transform(p, &[2], &[0], 3, &mut resolve).unwrap();
        assert_eq!(got, EvalAttempt::Value(rational_int(2)));
    }

    #[test]
    fn cross_validate_small() {
        let e = engine_701();
        let report = cross_validate(&e, 2, false).unwrap();
        assert!(report.ok(), "mismatches: {:?}", report.mismatches);
        assert!(report.checked > 0);
    }

    #[test]
    fn cross_validate_rejects_positive_level() {
        let params = TheoryParams::new(5, 1, 1).unwrap();
        let e = Engine::new(params, ClosedOracle::default(), Sign::Plus).unwrap();
        assert!(matches!(
            cross_validate(&e, 1, false),
            Err(CompareError::NotLevelZero)
        ));
    }

    #[test]
    fn corrupted_bct_value_is_reported() {
        let e = engine_701();
        let bct = BctEvaluator::new(&e).unwrap();
        let bad = CorrelatorKey::open(
            e.params(),
            vec![InternalInsertion::primary(2)],
            vec![5, 5, 5],
        )
        .unwrap();
        let mut resolve = |k: &CorrelatorKey| {
            if *k == bad {
                return Resolution::Known(rational_int(99));
            }
            match bct.compute(k) {
                Ok(Outcome::Value(v)) => Resolution::Known(v),
                _ => Resolution::Missing,
            }
        };
        let report = cross_validate_with(&e, 2, false, &mut resolve).unwrap();
        assert!(!report.ok());
        let m = &report.mismatches[0];
        assert_eq!(m.key, bad);
        assert_eq!(m.direct, rational_int(2));
        assert_eq!(m.graph_sum, rational_int(99));
        assert!(!m.breakdown.is_empty());
    }
}
