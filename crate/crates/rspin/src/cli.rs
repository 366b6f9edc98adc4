//! Command-line front end: single-correlator queries, table generation,
//! recursion consistency checking, comparison runs and cache management.
//!
//! Exit-code protocol: `0` a value was produced, `2` the computation is
//! blocked on missing external data, `1` error (including any consistency
//! failure). All values print as `num/den`, even integers.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::closed::{format_rational, load_table, ClosedEval, ClosedOracle, ClosedValueTable};
use crate::compare::{cross_validate, CompareError};
use crate::scheduler::{Engine, EngineError, Outcome, Sign, StoreError};
use crate::theory::{
    open_gate, vanishing_check, CorrelatorKey, InternalInsertion, ParseKeyError, Rational, Sector,
    TheoryParams, Vanishing,
};
use crate::trr::{evaluate, trr_expand, EvalAttempt, Marking, MarkingRef, Resolution};

pub const EXIT_VALUE: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_BLOCKED: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Key(#[from] ParseKeyError),
    #[error("{0}")]
    Domain(#[from] crate::theory::DomainError),
    #[error("{0}")]
    Table(#[from] crate::closed::TableError),
    #[error("{0}")]
    Store(#[from] StoreError),
    #[error("{0}")]
    Engine(#[from] EngineError),
    #[error("{0}")]
    Compare(#[from] CompareError),
    #[error("cache {path} is locked by another process (remove {lock} if stale)")]
    CacheLocked { path: String, lock: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
    #[error("blocked on missing data in strict mode: {0:?}")]
    StrictBlocked(Vec<String>),
}

/// Options shared by every command.
#[derive(Debug, Default, Clone)]
pub struct Options {
    pub cache: Option<PathBuf>,
    pub closed_tables: Vec<PathBuf>,
    pub strict: bool,
    pub sign: Sign,
    pub jobs: usize,
}

/// A parsed query: the canonical key plus the command options. The key
/// round-trips through its canonical string bit-exactly.
#[derive(Debug, Clone)]
pub struct QuerySpec {
    pub key: CorrelatorKey,
    pub options: Options,
}

impl QuerySpec {
    pub fn parse(key: &str, options: Options) -> Result<Self, ParseKeyError> {
        Ok(QuerySpec {
            key: key.parse()?,
            options,
        })
    }
}

/// What a command produced: an exit code and the text to print.
#[derive(Debug)]
pub struct CmdOutput {
    pub code: i32,
    pub text: String,
}

impl CmdOutput {
    fn new(code: i32, text: String) -> Self {
        CmdOutput { code, text }
    }
}

/// Advisory single-instance lock for a cache file; released on drop.
struct CacheLock {
    lock_path: PathBuf,
}

impl CacheLock {
    fn acquire(cache: &Path) -> Result<Self, CliError> {
        let lock_path = cache.with_extension("lock");
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock_path)
        {
            Ok(_) => Ok(CacheLock { lock_path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::CacheLocked {
                path: cache.display().to_string(),
                lock: lock_path.display().to_string(),
            }),
            Err(source) => Err(CliError::Io {
                path: lock_path.display().to_string(),
                source,
            }),
        }
    }
}

impl Drop for CacheLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.lock_path);
    }
}

fn load_closed_tables(paths: &[PathBuf]) -> Result<ClosedOracle, CliError> {
    let mut table = ClosedValueTable::new();
    for path in paths {
        table.merge(&load_table(path)?)?;
    }
    Ok(ClosedOracle::new(table))
}

fn build_engine(
    params: TheoryParams,
    options: &Options,
) -> Result<(Engine, Option<CacheLock>), CliError> {
    let oracle = load_closed_tables(&options.closed_tables)?;
    let engine = Engine::new(params, oracle, options.sign)?;
    let lock = match &options.cache {
        Some(path) => {
            let lock = CacheLock::acquire(path)?;
            if path.exists() {
                engine.load_cache(path)?;
            }
            Some(lock)
        }
        None => None,
    };
    Ok((engine, lock))
}

fn save_cache(engine: &Engine, options: &Options) -> Result<(), CliError> {
    if let Some(path) = &options.cache {
        engine.store().save_cache(path)?;
    }
    Ok(())
}

fn blocked_report(key: &CorrelatorKey, missing: &BTreeSet<CorrelatorKey>) -> String {
    let keys: Vec<String> = missing.iter().map(|k| k.to_string()).collect();
    format!("{key} BLOCKED: {}", keys.join(" "))
}

/// Evaluates one correlator given by its canonical key string.
pub fn cmd_eval(key_str: &str, options: &Options) -> Result<CmdOutput, CliError> {
    let spec = QuerySpec::parse(key_str, options.clone())?;
    let key = &spec.key;
    match key.sector {
        Sector::ClosedExtended => {
            let oracle = load_closed_tables(&options.closed_tables)?;
            match oracle.eval(key) {
                ClosedEval::Value(v) => Ok(CmdOutput::new(
                    EXIT_VALUE,
                    format!("{key} = {}\n", format_rational(&v)),
                )),
                ClosedEval::Unknown => {
                    if options.strict {
                        return Err(CliError::StrictBlocked(vec![key.to_string()]));
                    }
                    Ok(CmdOutput::new(
                        EXIT_BLOCKED,
                        format!("{key} BLOCKED: {key}\n"),
                    ))
                }
            }
        }
        Sector::Open => {
            let (engine, _lock) = build_engine(key.params, options)?;
            let outcome = engine.compute(key)?;
            save_cache(&engine, options)?;
            match outcome {
                Outcome::Value(v) => {
                    let text = match vanishing_check(key)? {
                        Vanishing::Zero(rule) => {
                            format!("{key} = {} (rule: {rule})\n", format_rational(&v))
                        }
                        Vanishing::Unknown => format!("{key} = {}\n", format_rational(&v)),
                    };
                    Ok(CmdOutput::new(EXIT_VALUE, text))
                }
                Outcome::Blocked(missing) => {
                    if options.strict {
                        return Err(CliError::StrictBlocked(
                            missing.iter().map(|k| k.to_string()).collect(),
                        ));
                    }
                    Ok(CmdOutput::new(
                        EXIT_BLOCKED,
                        format!("{}\n", blocked_report(key, &missing)),
                    ))
                }
            }
        }
    }
}

/// Computes every admissible primary correlator up to the dimension bound
/// and writes the store in the cache format, sorted by canonical key.
pub fn cmd_table(
    params: TheoryParams,
    max_dim: i64,
    out: Option<&Path>,
    options: &Options,
) -> Result<CmdOutput, CliError> {
    let (engine, _lock) = build_engine(params, options)?;
    let report = engine.full_table(max_dim, options.jobs.max(1))?;
    save_cache(&engine, options)?;

    let mut table_text = String::new();
    for (key, value, provenance) in engine.store().snapshot() {
        let _ = writeln!(
            table_text,
            "{key} = {} ; {provenance}",
            format_rational(&value)
        );
    }

    let mut text = String::new();
    match out {
        Some(path) => {
            std::fs::write(path, &table_text).map_err(|source| CliError::Io {
                path: path.display().to_string(),
                source,
            })?;
            let _ = writeln!(
                text,
                "wrote {} entries to {}",
                engine.store().len(),
                path.display()
            );
        }
        None => text.push_str(&table_text),
    }
    let _ = writeln!(
        text,
        "computed={} zero-by-rule={} blocked={}",
        report.computed,
        report.zero_by_rule,
        report.blocked.len()
    );
    for (key, missing) in &report.blocked {
        let _ = writeln!(text, "{}", blocked_report(key, missing));
    }
    for note in &report.notes {
        let _ = writeln!(text, "note: {note}");
    }
    if options.strict && !report.blocked.is_empty() {
        return Err(CliError::StrictBlocked(
            report.blocked.iter().map(|(k, _)| k.to_string()).collect(),
        ));
    }
    let code = if report.blocked.is_empty() {
        EXIT_VALUE
    } else {
        EXIT_BLOCKED
    };
    Ok(CmdOutput::new(code, text))
}

/// Samples admissible descendant correlators and verifies that every
/// admissible expansion choice produces the same exact value.
pub fn cmd_check(
    params: TheoryParams,
    samples: usize,
    seed: u64,
    options: &Options,
) -> Result<CmdOutput, CliError> {
    let (engine, _lock) = build_engine(params, options)?;
    let keys = sample_descendant_keys(params, samples, seed);

    let mut text = String::new();
    let mut checked = 0usize;
    let mut skipped = 0usize;
    let mut failures = Vec::new();
    for key in &keys {
        match check_key(&engine, key)? {
            CheckOutcome::Agree(n) => {
                checked += n;
            }
            CheckOutcome::Skipped => skipped += 1,
            CheckOutcome::Disagree(lines) => failures.push((key.clone(), lines)),
        }
    }
    save_cache(&engine, options)?;

    let _ = writeln!(
        text,
        "correlators={} expansions-checked={} blocked-skipped={}",
        keys.len(),
        checked,
        skipped
    );
    if failures.is_empty() {
        let _ = writeln!(text, "PASS");
        Ok(CmdOutput::new(EXIT_VALUE, text))
    } else {
        for (key, lines) in &failures {
            let _ = writeln!(text, "FAIL {key}");
            for line in lines {
                let _ = writeln!(text, "  {line}");
            }
        }
        Ok(CmdOutput::new(EXIT_ERROR, text))
    }
}

pub enum CheckOutcome {
    /// All expansion choices agree; how many expansions were compared.
    Agree(usize),
    Skipped,
    Disagree(Vec<String>),
}

/// All distinct expansion choices (raised insertion and marking) for a key.
pub fn marking_choices(key: &CorrelatorKey) -> Vec<MarkingRef> {
    let mut out = Vec::new();
    let mut raised_values: Vec<InternalInsertion> = key
        .internal
        .iter()
        .filter(|i| i.descendant >= 1)
        .copied()
        .collect();
    raised_values.dedup();
    let mut boundary_values: Vec<i64> = key.boundary.clone();
    boundary_values.dedup();
    for raised in raised_values {
        for &b in &boundary_values {
            out.push(MarkingRef {
                raised,
                marking: Marking::Boundary(b),
            });
        }
        let mut internal_values: Vec<InternalInsertion> = key.internal.clone();
        internal_values.dedup();
        for ins in internal_values {
            let count = key.internal.iter().filter(|x| **x == ins).count();
            if ins == raised && count < 2 {
                continue;
            }
            out.push(MarkingRef {
                raised,
                marking: Marking::Internal(ins),
            });
        }
    }
    out
}

/// Evaluates every expansion choice of one descendant correlator and
/// compares the results exactly.
pub fn check_key(engine: &Engine, key: &CorrelatorKey) -> Result<CheckOutcome, CliError> {
    let mut values: Vec<(MarkingRef, Rational)> = Vec::new();
    for mref in marking_choices(key) {
        let expansion = trr_expand(key, &mref).expect("choice is valid");
        let mut err: Option<EngineError> = None;
        let mut resolve = |k: &CorrelatorKey| -> Resolution {
            match k.sector {
                Sector::ClosedExtended => match engine.oracle().eval(k) {
                    ClosedEval::Value(v) => Resolution::Known(v),
                    ClosedEval::Unknown => Resolution::Missing,
                },
                Sector::Open => match engine.compute(k) {
                    Ok(Outcome::Value(v)) => Resolution::Known(v),
                    Ok(Outcome::Blocked(_)) => Resolution::Missing,
                    Err(e) => {
                        err = Some(e);
                        Resolution::Missing
                    }
                },
            }
        };
        let attempt = evaluate(&expansion, &mut resolve);
        if let Some(e) = err {
            return Err(e.into());
        }
        match attempt {
            EvalAttempt::Value(v) => values.push((mref, v)),
            EvalAttempt::Need(_) => unreachable!("resolver computes eagerly"),
            EvalAttempt::Blocked(_) => return Ok(CheckOutcome::Skipped),
        }
    }
    if values.len() < 2 {
        return Ok(CheckOutcome::Skipped);
    }
    let reference = values[0].1.clone();
    if values.iter().all(|(_, v)| *v == reference) {
        Ok(CheckOutcome::Agree(values.len()))
    } else {
        let lines = values
            .iter()
            .map(|(mref, v)| {
                format!(
                    "raised tau^{}_{} wrt {}: {}",
                    mref.raised.twist,
                    mref.raised.descendant,
                    mref.marking,
                    format_rational(v)
                )
            })
            .collect();
        Ok(CheckOutcome::Disagree(lines))
    }
}

/// Deterministic sample of gate-admissible descendant keys: twists are
/// drawn at random and the first internal twist is solved from the rank
/// constraint.
pub fn sample_descendant_keys(
    params: TheoryParams,
    samples: usize,
    seed: u64,
) -> Vec<CorrelatorKey> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let legal = params.legal_boundary_twists();
    let mut out = BTreeSet::new();
    let mut attempts = 0usize;
    while out.len() < samples && attempts < samples * 2000 + 1000 {
        attempts += 1;
        let l = rng.gen_range(1..=3usize);
        let k = rng.gen_range(0..=4usize);
        let mut internal = Vec::with_capacity(l);
        internal.push(InternalInsertion::new(0, rng.gen_range(1..=2u32)));
        for _ in 1..l {
            internal.push(InternalInsertion::new(
                rng.gen_range(0..params.r),
                rng.gen_range(0..=1u32),
            ));
        }
        let boundary: Vec<i64> = (0..k)
            .map(|_| legal[rng.gen_range(0..legal.len())])
            .collect();
        let sum_d: i64 = internal.iter().map(|i| i.descendant as i64).sum();
        let dim = k as i64 + 2 * l as i64 - 3;
        let e_num = dim - 2 * sum_d;
        if e_num < 0 || e_num % params.m != 0 {
            continue;
        }
        let e = e_num / params.m;
        if (e - (1 + k as i64)).rem_euclid(2) != 0 {
            continue;
        }
        // solve the first twist from the rank equation
        let partial: i64 = internal[1..].iter().map(|i| i.twist).sum();
        let sum_b: i64 = boundary.iter().sum();
        let target = params.r * e + (params.r - 2) - sum_b - 2 * partial;
        if target % 2 != 0 {
            continue;
        }
        let a0 = target / 2;
        if !(0..params.r).contains(&a0) {
            continue;
        }
        internal[0] = InternalInsertion::new(a0, internal[0].descendant);
        let key = CorrelatorKey::open(params, internal, boundary).unwrap();
        debug_assert!(open_gate(&key).unwrap().is_admissible());
        if key.sum_descendants() == 0 {
            continue;
        }
        out.insert(key);
    }
    out.into_iter().collect()
}

/// Cross-validates the `h = 0` theory against the BCT path.
pub fn cmd_compare(
    params: TheoryParams,
    max_dim: i64,
    primary_only: bool,
    options: &Options,
) -> Result<CmdOutput, CliError> {
    if params.h != 0 {
        return Err(CliError::Usage(
            "the comparison is defined for h = 0 only".to_string(),
        ));
    }
    let (engine, _lock) = build_engine(params, options)?;
    let report = cross_validate(&engine, max_dim, primary_only)?;
    save_cache(&engine, options)?;

    let mut text = String::new();
    let _ = writeln!(
        text,
        "checked={} mismatches={} skipped={}",
        report.checked,
        report.mismatches.len(),
        report.skipped.len()
    );
    for (key, missing) in &report.skipped {
        let _ = writeln!(text, "skip {}", blocked_report(key, missing));
    }
    for m in &report.mismatches {
        let _ = writeln!(
            text,
            "MISMATCH {}: direct {} vs graph sum {}",
            m.key,
            format_rational(&m.direct),
            format_rational(&m.graph_sum)
        );
        for (graph, value) in &m.breakdown {
            let _ = writeln!(text, "  {graph} -> {}", format_rational(value));
        }
    }
    if report.ok() {
        let _ = writeln!(text, "PASS");
        Ok(CmdOutput::new(EXIT_VALUE, text))
    } else {
        Ok(CmdOutput::new(EXIT_ERROR, text))
    }
}
