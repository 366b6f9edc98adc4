//! The computation strategy that determines every open correlator.
//!
//! Primary correlators (no descendants) are organized by the state space
//! `S` of twist data whose bundle rank equals the moduli dimension. Each
//! state is solved by expanding a one-descendant auxiliary correlator with
//! respect to two different markings and eliminating the state between the
//! two expansions:
//!
//! * states with a boundary twist above the minimal legal twist replace
//!   their largest boundary twist `b1` by the minimal one and raise a new
//!   internal insertion of twist `(b1 - m_min)/2`;
//! * states whose boundary twists are all minimal trade their largest
//!   internal twist `a1` for a raised insertion of twist `a1 - c` plus a
//!   block of `n` extra minimal boundary twists (for a single internal
//!   insertion, a two-insertion auxiliary drives the factorial chain
//!   instead).
//!
//! Descendant correlators are evaluated by a direct expansion, recursing on
//! the factors. Everything bottoms out in a short table of initial values
//! and the closed-extended oracle; dependencies are resolved iteratively on
//! an explicit work stack with cycle detection, and results are memoized in
//! a write-once [`ValueStore`] so that no computation path can ever record
//! two different values for one key.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use num_traits::Zero;
use thiserror::Error;

use crate::closed::{format_rational, parse_rational, ClosedEval, ClosedOracle};
use crate::theory::{
    derive_constants, open_gate, vanishing_check, CorrelatorKey, InternalInsertion, Rational,
    Sector, TheoryConstants, TheoryParams, Vanishing,
};
use crate::trr::{
    evaluate, solve_linear, trr_expand, EvalAttempt, Expansion, Marking, MarkingRef, Resolution,
    SolveAttempt,
};

/// How a stored value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Initial,
    Computed,
    External,
    Vanishing,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Initial => write!(f, "initial"),
            Provenance::Computed => write!(f, "computed"),
            Provenance::External => write!(f, "external"),
            Provenance::Vanishing => write!(f, "vanishing"),
        }
    }
}

impl std::str::FromStr for Provenance {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "initial" => Ok(Provenance::Initial),
            "computed" => Ok(Provenance::Computed),
            "external" => Ok(Provenance::External),
            "vanishing" => Ok(Provenance::Vanishing),
            other => Err(format!("unknown provenance {other:?}")),
        }
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("write-once conflict for {key}: stored {old}, attempted {new}")]
    Conflict {
        key: String,
        old: String,
        new: String,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Memoized map from correlator key to exact value with provenance.
/// Writes are once-only: re-inserting the same value is a no-op, a
/// different value is a hard error (the consistency guard the whole
/// recursion leans on). Reads are concurrent.
#[derive(Debug, Default)]
pub struct ValueStore {
    inner: RwLock<BTreeMap<CorrelatorKey, (Rational, Provenance)>>,
}

impl ValueStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &CorrelatorKey) -> Option<(Rational, Provenance)> {
        self.inner.read().unwrap().get(key).cloned()
    }

    pub fn contains(&self, key: &CorrelatorKey) -> bool {
        self.inner.read().unwrap().contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.inner.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn insert(
        &self,
        key: CorrelatorKey,
        value: Rational,
        provenance: Provenance,
    ) -> Result<(), StoreError> {
        let mut map = self.inner.write().unwrap();
        if let Some((old, _)) = map.get(&key) {
            if *old != value {
                return Err(StoreError::Conflict {
                    key: key.to_string(),
                    old: old.to_string(),
                    new: value.to_string(),
                });
            }
            return Ok(());
        }
        map.insert(key, (value, provenance));
        Ok(())
    }

    /// Sorted snapshot (by canonical key string).
    pub fn snapshot(&self) -> Vec<(CorrelatorKey, Rational, Provenance)> {
        let map = self.inner.read().unwrap();
        let mut rows: Vec<_> = map
            .iter()
            .map(|(k, (v, p))| (k.clone(), v.clone(), *p))
            .collect();
        rows.sort_by_key(|(k, _, _)| k.to_string());
        rows
    }

    /// Loads a cache file: `<key> = <num>/<den> ; <provenance>` per line,
    /// `#` comments. Conflicts with existing entries are errors.
    pub fn load_cache(&self, path: &Path) -> Result<usize, StoreError> {
        let text = std::fs::read_to_string(path).map_err(|e| StoreError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut count = 0;
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
            let parse_err = |message: String| StoreError::Parse {
                path: path.display().to_string(),
                line: line_no,
                message,
            };
            let (head, prov_str) = line
                .rsplit_once(';')
                .ok_or_else(|| parse_err("expected '<key> = <value> ; <provenance>'".into()))?;
            // the key string itself contains '=' signs; split at the last one
            let (key_str, value_str) = head
                .rsplit_once('=')
                .ok_or_else(|| parse_err("expected '<key> = <value>'".into()))?;
            let key: CorrelatorKey = key_str
                .trim()
                .parse()
                .map_err(|e| parse_err(format!("{e}")))?;
            if key.sector != Sector::Open {
                return Err(parse_err("cache entries must be open-sector keys".into()));
            }
            let value = parse_rational(value_str)
                .ok_or_else(|| parse_err(format!("invalid rational {:?}", value_str.trim())))?;
            let provenance: Provenance =
                prov_str.trim().parse().map_err(|e: String| parse_err(e))?;
            self.insert(key, value, provenance)?;
            count += 1;
        }
        Ok(count)
    }

    /// Atomic save: write to a temporary file in the same directory, then
    /// rename over the target.
    pub fn save_cache(&self, path: &Path) -> Result<(), StoreError> {
        let mut text = String::new();
        for (key, value, provenance) in self.snapshot() {
            text.push_str(&format!(
                "{key} = {} ; {provenance}\n",
                format_rational(&value)
            ));
        }
        let tmp = path.with_extension("tmp");
        let io_err = |source| StoreError::Io {
            path: path.display().to_string(),
            source,
        };
        std::fs::write(&tmp, text).map_err(io_err)?;
        std::fs::rename(&tmp, path).map_err(io_err)?;
        Ok(())
    }
}

/// Sign convention for the no-internal initial correlator (the orientation
/// conventions leave its sign open; the recursion is consistent under
/// either choice).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sign {
    #[default]
    Plus,
    Minus,
}

impl Sign {
    fn apply(&self, v: Rational) -> Rational {
        match self {
            Sign::Plus => v,
            Sign::Minus => -v,
        }
    }
}

/// A primary state with bundle rank equal to moduli dimension: internal
/// twists in `{h+1, …, r-1}`, boundary twists legal. These are the states
/// the recursion solves for; everything else is an initial value or zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpinState {
    key: CorrelatorKey,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum StateError {
    #[error("state key must be open-sector and primary")]
    NotPrimary,
    #[error("internal twist {0} is below the solvable range (must exceed h)")]
    SmallInternalTwist(i64),
    #[error("rank does not equal dimension for this twist data")]
    RankMismatch,
}

impl SpinState {
    pub fn new(key: CorrelatorKey) -> Result<Self, StateError> {
        if key.sector != Sector::Open || !key.is_primary() {
            return Err(StateError::NotPrimary);
        }
        for ins in &key.internal {
            if ins.twist <= key.params.h {
                return Err(StateError::SmallInternalTwist(ins.twist));
            }
        }
        if !open_gate(&key).unwrap().is_admissible() {
            return Err(StateError::RankMismatch);
        }
        Ok(SpinState { key })
    }

    pub fn key(&self) -> &CorrelatorKey {
        &self.key
    }

    /// Moduli dimension `2|I| + |B| - 3`.
    pub fn d(&self) -> i64 {
        self.key.dimension()
    }

    /// Largest boundary twist, if any.
    pub fn max_boundary(&self) -> Option<i64> {
        self.key.boundary.last().copied()
    }

    /// Sum of the internal twists.
    pub fn sigma(&self) -> i64 {
        self.key.sum_internal_twists()
    }
}

/// The partial order the general recursion descends along: smaller
/// dimension first, then more internal insertions, then larger internal
/// twist sum, then larger maximal boundary twist.
pub fn precedes(s1: &SpinState, s2: &SpinState) -> bool {
    if s1.d() != s2.d() {
        return s1.d() < s2.d();
    }
    if s1.key.l() != s2.key.l() {
        return s1.key.l() > s2.key.l();
    }
    if s1.sigma() != s2.sigma() {
        return s1.sigma() > s2.sigma();
    }
    let m1 = s1.max_boundary().unwrap_or(i64::MIN);
    let m2 = s2.max_boundary().unwrap_or(i64::MIN);
    m1 > m2
}

/// The shipped initial table for a theory (only the spin case `m = 1` has
/// one; the recursion scheme does not apply to `m > 1`).
///
/// Entries: the no-internal correlator `±n!`; the two smallest factorial
/// chain members (value 1); and the vanishing two-internal, no-boundary
/// correlator the chain's end step needs.
pub fn initial_values(params: TheoryParams, sign: Sign) -> Vec<(CorrelatorKey, Rational)> {
    if params.m != 1 {
        return Vec::new();
    }
    let c = derive_constants(params);
    let mut out = Vec::new();

    let mut boundary = vec![c.m_min; c.n as usize];
    boundary.push(c.b);
    let f_empty = CorrelatorKey::open(params, vec![], boundary).unwrap();
    let mut n_factorial = Rational::from_integer(1.into());
    for i in 2..=c.n {
        n_factorial *= Rational::from_integer(i.into());
    }
    out.push((f_empty, sign.apply(n_factorial)));

    let k0 = CorrelatorKey::open(
        params,
        vec![InternalInsertion::primary(params.h)],
        vec![c.m_min],
    )
    .unwrap();
    out.push((k0, Rational::from_integer(1.into())));

    let k1 = CorrelatorKey::open(
        params,
        vec![InternalInsertion::primary(2 * params.h + 1)],
        vec![c.m_min, c.m_min],
    )
    .unwrap();
    out.push((k1, Rational::from_integer(1.into())));

    let pair = CorrelatorKey::open(
        params,
        vec![
            InternalInsertion::primary((params.r - c.b + 2 * params.h) / 2),
            InternalInsertion::primary((c.n - 1) * (params.h + 1) - 1),
        ],
        vec![],
    )
    .unwrap();
    out.push((pair, Rational::zero()));

    for (key, _) in &out {
        debug_assert!(
            open_gate(key).unwrap().is_admissible(),
            "initial key must be admissible: {key}"
        );
    }
    out
}

/// Result of asking for one correlator value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Value(Rational),
    /// The listed keys have no value and no computation path (missing
    /// closed-extended table entries or missing low-dimension initial
    /// values).
    Blocked(BTreeSet<CorrelatorKey>),
}

impl Outcome {
    pub fn value(&self) -> Option<&Rational> {
        match self {
            Outcome::Value(v) => Some(v),
            Outcome::Blocked(_) => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("target must be an open-sector key of this engine's theory")]
    WrongTheory,
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("dependency cycle while computing {key}")]
    Cycle { key: String },
    #[error("no usable recursion recipe for {key}; tried: {tried:?}")]
    NoRecipe { key: String, tried: Vec<String> },
    #[error("computation exceeded the iteration budget (internal error)")]
    Runaway,
}

struct Recipe {
    label: String,
    aux: CorrelatorKey,
    raised: InternalInsertion,
    first: Marking,
    second: Marking,
}

enum Step {
    Done(Rational, Provenance),
    Need(BTreeSet<CorrelatorKey>),
    Blocked(BTreeSet<CorrelatorKey>),
}

/// The correlator engine for one theory: memoized store, closed-extended
/// oracle, expansion cache and the recipe dispatcher.
pub struct Engine {
    params: TheoryParams,
    consts: TheoryConstants,
    sign: Sign,
    store: ValueStore,
    oracle: ClosedOracle,
    expansions: Mutex<HashMap<(CorrelatorKey, MarkingRef), Arc<Expansion>>>,
    blocked: Mutex<BTreeMap<CorrelatorKey, BTreeSet<CorrelatorKey>>>,
    notes: Mutex<Vec<String>>,
}

impl Engine {
    pub fn new(params: TheoryParams, oracle: ClosedOracle, sign: Sign) -> Result<Self, StoreError> {
        let engine = Engine {
            params,
            consts: derive_constants(params),
            sign,
            store: ValueStore::new(),
            oracle,
            expansions: Mutex::new(HashMap::new()),
            blocked: Mutex::new(BTreeMap::new()),
            notes: Mutex::new(Vec::new()),
        };
        for (key, value) in initial_values(params, sign) {
            engine.store.insert(key, value, Provenance::Initial)?;
        }
        Ok(engine)
    }

    pub fn params(&self) -> TheoryParams {
        self.params
    }

    pub fn constants(&self) -> TheoryConstants {
        self.consts
    }

    pub fn sign(&self) -> Sign {
        self.sign
    }

    pub fn store(&self) -> &ValueStore {
        &self.store
    }

    pub fn oracle(&self) -> &ClosedOracle {
        &self.oracle
    }

    /// Diagnostics accumulated during computation (fallback recipes used).
    pub fn notes(&self) -> Vec<String> {
        let mut notes = self.notes.lock().unwrap().clone();
        notes.sort();
        notes.dedup();
        notes
    }

    /// Seeds the store from a cache file; conflicting entries (including
    /// conflicts with the shipped initial values) are errors.
    pub fn load_cache(&self, path: &Path) -> Result<usize, StoreError> {
        self.store.load_cache(path)
    }

    fn cached_expansion(&self, lhs: &CorrelatorKey, mref: MarkingRef) -> Arc<Expansion> {
        let mut cache = self.expansions.lock().unwrap();
        cache
            .entry((lhs.clone(), mref))
            .or_insert_with(|| Arc::new(trr_expand(lhs, &mref).expect("valid marking")))
            .clone()
    }

    /// Resolves a factor key without recursing: the store, the cheap
    /// vanishing rules and the closed-extended oracle.
    fn resolve(&self, key: &CorrelatorKey) -> Resolution {
        match key.sector {
            Sector::ClosedExtended => match self.oracle.eval(key) {
                ClosedEval::Value(v) => Resolution::Known(v),
                ClosedEval::Unknown => Resolution::Missing,
            },
            Sector::Open => {
                if let Some((v, _)) = self.store.get(key) {
                    return Resolution::Known(v);
                }
                if vanishing_check(key).unwrap().is_zero() {
                    return Resolution::Known(Rational::zero());
                }
                if self.blocked.lock().unwrap().contains_key(key) {
                    return Resolution::Missing;
                }
                Resolution::Pending
            }
        }
    }

    fn resolved(&self, key: &CorrelatorKey) -> bool {
        self.store.contains(key) || self.blocked.lock().unwrap().contains_key(key)
    }

    /// Replaces blocked open keys by the external keys they are blocked on.
    fn expand_blocked(&self, keys: BTreeSet<CorrelatorKey>) -> BTreeSet<CorrelatorKey> {
        let blocked = self.blocked.lock().unwrap();
        let mut out = BTreeSet::new();
        for key in keys {
            match blocked.get(&key) {
                Some(missing) => out.extend(missing.iter().cloned()),
                None => {
                    out.insert(key);
                }
            }
        }
        out
    }

    /// Computes one primary state of the recursion (rank equal to
    /// dimension, internal twists above the level).
    pub fn solve_state(&self, state: &SpinState) -> Result<Outcome, EngineError> {
        self.compute(state.key())
    }

    /// Computes one open correlator, memoizing every intermediate value.
    pub fn compute(&self, target: &CorrelatorKey) -> Result<Outcome, EngineError> {
        if target.sector != Sector::Open || target.params != self.params {
            return Err(EngineError::WrongTheory);
        }
        let target = target.canonicalize();
        // depth-first over the dependency graph on an explicit stack; one
        // unresolved dependency is pushed at a time, so the stack is exactly
        // the ancestor chain and membership means a genuine cycle
        let mut stack: Vec<CorrelatorKey> = vec![target.clone()];
        let mut ancestors: BTreeSet<CorrelatorKey> = BTreeSet::new();
        ancestors.insert(target.clone());

        let mut budget: u64 = 10_000_000;
        while let Some(top) = stack.last().cloned() {
            budget = budget.checked_sub(1).ok_or(EngineError::Runaway)?;
            if self.resolved(&top) {
                ancestors.remove(&top);
                stack.pop();
                continue;
            }
            match self.step(&top)? {
                Step::Done(value, provenance) => {
                    self.store.insert(top.clone(), value, provenance)?;
                }
                Step::Need(keys) => {
                    let next = keys.into_iter().find(|key| !self.resolved(key));
                    match next {
                        Some(key) => {
                            if ancestors.contains(&key) {
                                return Err(EngineError::Cycle {
                                    key: key.to_string(),
                                });
                            }
                            ancestors.insert(key.clone());
                            stack.push(key);
                        }
                        // everything resolved in the meantime; re-step
                        None => continue,
                    }
                }
                Step::Blocked(missing) => {
                    self.blocked.lock().unwrap().insert(top.clone(), missing);
                }
            }
        }

        if let Some((value, _)) = self.store.get(&target) {
            return Ok(Outcome::Value(value));
        }
        let missing = self.blocked.lock().unwrap().get(&target).cloned().unwrap();
        Ok(Outcome::Blocked(missing))
    }

    fn step(&self, key: &CorrelatorKey) -> Result<Step, EngineError> {
        if let Vanishing::Zero(_) = vanishing_check(key).unwrap() {
            return Ok(Step::Done(Rational::zero(), Provenance::Vanishing));
        }
        if key.is_primary() {
            self.primary_step(key)
        } else {
            Ok(self.descendant_step(key))
        }
    }

    /// A descendant correlator is one TRR expansion away from smaller
    /// descendant totals.
    fn descendant_step(&self, key: &CorrelatorKey) -> Step {
        let raised = *key
            .internal
            .iter()
            .find(|i| i.descendant >= 1)
            .expect("descendant key");
        let marking = if !key.boundary.is_empty() {
            Marking::Boundary(key.boundary[0])
        } else {
            // l >= 2 here: a single-insertion, no-boundary key cannot pass
            // the gate with a positive descendant
            let other = key
                .internal
                .iter()
                .find(|i| **i != raised)
                .copied()
                .unwrap_or(raised);
            Marking::Internal(other)
        };
        let expansion = self.cached_expansion(key, MarkingRef { raised, marking });
        let mut resolve = |k: &CorrelatorKey| self.resolve(k);
        match evaluate(&expansion, &mut resolve) {
            EvalAttempt::Value(v) => Step::Done(v, Provenance::Computed),
            EvalAttempt::Need(keys) => Step::Need(keys),
            EvalAttempt::Blocked(missing) => Step::Blocked(self.expand_blocked(missing)),
        }
    }

    fn primary_step(&self, key: &CorrelatorKey) -> Result<Step, EngineError> {
        // the recursion scheme is proven for the spin case only
        if self.params.m != 1 {
            return Ok(Step::Blocked(BTreeSet::from([key.clone()])));
        }
        // low-dimension states outside the shipped table are initial data
        // the artifact does not guess
        if key.dimension() <= 1 {
            return Ok(Step::Blocked(BTreeSet::from([key.clone()])));
        }
        let recipes = self.recipes(key);
        let mut tried = Vec::new();
        for recipe in &recipes {
            let e1 = self.cached_expansion(
                &recipe.aux,
                MarkingRef {
                    raised: recipe.raised,
                    marking: recipe.first,
                },
            );
            let e2 = self.cached_expansion(
                &recipe.aux,
                MarkingRef {
                    raised: recipe.raised,
                    marking: recipe.second,
                },
            );
            let mut resolve = |k: &CorrelatorKey| self.resolve(k);
            match solve_linear(&e1, &e2, key, &mut resolve) {
                SolveAttempt::Value(v) => {
                    if recipe.label != recipes[0].label {
                        self.notes.lock().unwrap().push(format!(
                            "{key}: recipe '{}' replaced '{}'",
                            recipe.label, recipes[0].label
                        ));
                    }
                    return Ok(Step::Done(v, Provenance::Computed));
                }
                SolveAttempt::Need(keys) => return Ok(Step::Need(keys)),
                SolveAttempt::Blocked(missing) => {
                    return Ok(Step::Blocked(self.expand_blocked(missing)))
                }
                SolveAttempt::Degenerate => tried.push(format!("{}: degenerate", recipe.label)),
                SolveAttempt::NonLinear => tried.push(format!("{}: non-linear", recipe.label)),
            }
        }
        Err(EngineError::NoRecipe {
            key: key.to_string(),
            tried,
        })
    }

    /// Candidate auxiliary/marking pairs for a primary state, the proven
    /// recipe first, marking variations after it as fallbacks.
    fn recipes(&self, key: &CorrelatorKey) -> Vec<Recipe> {
        let params = self.params;
        let mm = self.consts.m_min;
        let big_count = key.boundary.iter().filter(|&&b| b > mm).count();
        let mut out = Vec::new();

        if big_count >= 1 {
            // replace the largest boundary twist by the minimal one and
            // raise a new internal insertion of half the difference
            let b1 = *key.boundary.last().unwrap();
            let raised = InternalInsertion::new((b1 - mm) / 2, 1);
            let mut internal = key.internal.clone();
            internal.push(raised);
            let mut boundary = key.boundary.clone();
            let pos = boundary.iter().rposition(|&b| b == b1).unwrap();
            boundary.remove(pos);
            boundary.push(mm);
            let aux = CorrelatorKey::open(params, internal, boundary).unwrap();
            let first = Marking::Boundary(mm);
            if key.l() >= 1 {
                let mut seconds: Vec<Marking> = Vec::new();
                let mut twists: Vec<i64> = key.internal.iter().map(|i| i.twist).collect();
                twists.dedup();
                twists.reverse();
                for t in twists {
                    seconds.push(Marking::Internal(InternalInsertion::primary(t)));
                }
                for (i, second) in seconds.into_iter().enumerate() {
                    out.push(Recipe {
                        label: format!("boundary-swap/internal-{i}"),
                        aux: aux.clone(),
                        raised,
                        first,
                        second,
                    });
                }
            } else {
                let mut twists: Vec<i64> =
                    aux.boundary.iter().filter(|&&b| b != mm).copied().collect();
                twists.dedup();
                twists.reverse();
                for (i, t) in twists.into_iter().enumerate() {
                    out.push(Recipe {
                        label: format!("boundary-swap/boundary-{i}"),
                        aux: aux.clone(),
                        raised,
                        first,
                        second: Marking::Boundary(t),
                    });
                }
            }
        } else if key.l() == 1 {
            // factorial chain step: two-insertion auxiliary over minimal
            // boundary twists
            let h = params.h;
            let cap = key.k() as i64 - 1; // chain index of the target
            debug_assert_eq!(key.internal[0].twist, (cap + 1) * (h + 1) - 1);
            let partner = InternalInsertion::primary(cap * (h + 1) - 1);
            let raised = InternalInsertion::new(h + 1, 1);
            let aux =
                CorrelatorKey::open(params, vec![raised, partner], vec![mm; key.k()]).unwrap();
            out.push(Recipe {
                label: "chain-step".to_string(),
                aux,
                raised,
                first: Marking::Boundary(mm),
                second: Marking::Internal(partner),
            });
        } else if key.l() >= 2 {
            // trade the largest internal twist for a raised insertion plus a
            // block of n extra minimal boundary twists
            let a1 = key.internal.last().unwrap().twist;
            let raised = InternalInsertion::new(a1 - self.consts.c, 1);
            let mut internal = key.internal.clone();
            let pos = internal.iter().rposition(|i| i.twist == a1).unwrap();
            internal.remove(pos);
            let rest = internal.clone();
            internal.push(raised);
            // K(I)+n+1 minimal boundary twists, with K(I) = k-1
            let aux =
                CorrelatorKey::open(params, internal, vec![mm; key.k() + self.consts.n as usize])
                    .unwrap();
            let first = Marking::Boundary(mm);
            let mut twists: Vec<i64> = rest.iter().map(|i| i.twist).collect();
            twists.dedup();
            twists.reverse();
            for (i, t) in twists.into_iter().enumerate() {
                out.push(Recipe {
                    label: format!("internal-trade/internal-{i}"),
                    aux: aux.clone(),
                    raised,
                    first,
                    second: Marking::Internal(InternalInsertion::primary(t)),
                });
            }
        }
        out
    }

    /// Enumerates all gate-admissible primary keys with moduli dimension at
    /// most `max_dim`.
    pub fn admissible_primary_keys(&self, max_dim: i64) -> Vec<CorrelatorKey> {
        let params = self.params;
        let mut out = Vec::new();
        let internal_twists: Vec<i64> = (0..params.r).collect();
        let boundary_twists = params.legal_boundary_twists();
        for dim in 0..=max_dim.max(-1) {
            for l in 0..=((dim + 3) / 2) as usize {
                let k = (dim + 3 - 2 * l as i64) as usize;
                for ints in multisets(&internal_twists, l) {
                    for bnds in multisets(&boundary_twists, k) {
                        let key = CorrelatorKey::open(
                            params,
                            ints.iter()
                                .map(|&t| InternalInsertion::primary(t))
                                .collect(),
                            bnds.clone(),
                        )
                        .unwrap();
                        if open_gate(&key).unwrap().is_admissible() {
                            out.push(key);
                        }
                    }
                }
            }
        }
        out.sort();
        out.dedup();
        out
    }

    /// Computes every admissible primary key with dimension at most
    /// `max_dim`, recording blocked keys instead of failing. With
    /// `jobs > 1` the targets are evaluated in parallel; results are
    /// identical either way because values are deterministic and the store
    /// is write-once.
    pub fn full_table(&self, max_dim: i64, jobs: usize) -> Result<TableReport, EngineError> {
        let targets = self.admissible_primary_keys(max_dim);
        let mut outcomes: Vec<(CorrelatorKey, Outcome)> = Vec::with_capacity(targets.len());
        if jobs > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build()
                .expect("thread pool");
            let results: Vec<Result<(CorrelatorKey, Outcome), EngineError>> = pool.install(|| {
                use rayon::prelude::*;
                targets
                    .par_iter()
                    .map(|key| self.compute(key).map(|o| (key.clone(), o)))
                    .collect()
            });
            for res in results {
                outcomes.push(res?);
            }
        } else {
            for key in &targets {
                outcomes.push((key.clone(), self.compute(key)?));
            }
        }

        let mut report = TableReport::default();
        for (key, outcome) in outcomes {
            match outcome {
                Outcome::Value(_) => {
                    if vanishing_check(&key).unwrap().is_zero() {
                        report.zero_by_rule += 1;
                    } else {
                        report.computed += 1;
                    }
                }
                Outcome::Blocked(missing) => report.blocked.push((key, missing)),
            }
        }
        report.notes = self.notes();
        Ok(report)
    }
}

/// Counts from a [`Engine::full_table`] run.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct TableReport {
    pub computed: usize,
    pub zero_by_rule: usize,
    pub blocked: Vec<(CorrelatorKey, BTreeSet<CorrelatorKey>)>,
    pub notes: Vec<String>,
}

/// All multisets of the given size over the given values.
pub(crate) fn multisets(values: &[i64], size: usize) -> Vec<Vec<i64>> {
    fn rec(values: &[i64], start: usize, size: usize, cur: &mut Vec<i64>, out: &mut Vec<Vec<i64>>) {
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
