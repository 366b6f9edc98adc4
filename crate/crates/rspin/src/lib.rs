//! Exact-rational calculator for genus-zero open `(r, h)`-spin and Fermat FJRW
//! intersection numbers.
//!
//! The crate evaluates correlators of the form
//! `⟨ τ^{a_1}_{d_1} ⋯ τ^{a_l}_{d_l} σ^{b_1} ⋯ σ^{b_k} ⟩` exactly, as arbitrary
//! precision rationals. The building blocks are:
//!
//! * [`theory`] — theory parameters, correlator keys, admissibility gates and
//!   unconditional vanishing rules;
//! * [`closed`] — the closed-extended sector: string-equation reduction,
//!   zero-dimensional base cases and an extensible external value table;
//! * [`trr`] — symbolic expansion of a descendant correlator through the
//!   topological recursion relations, and elimination of a single unknown
//!   between two expansions;
//! * [`scheduler`] — the computation strategy that determines every open
//!   correlator from a small set of initial values, with a memoized,
//!   write-once value store;
//! * [`compare`] — the independent cross-validation path through the
//!   boundary-condition (BCT) formulation and the graph-sum transform
//!   relating it to the `h = 0` theory;
//! * [`cli`] — the command-line front end (`eval`, `table`, `check`,
//!   `compare`) used by the `rspin` binary.
//!
//! Start with `examples/evaluate.rs` for a small end-to-end tour, or
//! `examples/factorials.rs` for the factorial family of correlators that the
//! recursion produces.
//!
//! Internal cross-consistency — many recursions computing the same number —
//! is the primary correctness instrument; `rspin check` and the `acceptance`
//! test suite exercise it.

pub mod cli;
pub mod closed;
pub mod compare;
pub mod scheduler;
pub mod theory;
pub mod trr;

pub use theory::{
    closed_gate, derive_constants, open_gate, vanishing_check, CorrelatorKey, Gate,
    InternalInsertion, Rational, Sector, TheoryConstants, TheoryParams, Vanishing,
};
