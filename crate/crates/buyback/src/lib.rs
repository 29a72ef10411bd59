//! Online bipartite matching with costly cancellations (the buyback problem).
//!
//! An offline side of capacitated resources is matched against an adversarial
//! stream of online arrivals. Allocations are revocable: buying back a sliver
//! previously allocated at weight `w` refunds the reward `w·dx` and pays an
//! extra penalty `f·w·dx`, where `f ≥ 0` is the buyback factor.
//!
//! The crate provides
//! * the core data model: instances, allocation distributions, profit ledgers
//!   and event traces ([`model`]),
//! * a closed-form numeric kernel: Lambert W (branch −1), competitive-ratio
//!   formulas, exponential penalties and their step-quantile integrals
//!   ([`numerics`]),
//! * the online algorithms: fractional primal-dual water-filling, the
//!   deterministic integral rule, greedy and free-disposal baselines, and the
//!   single-resource canonical allocation ([`engine`]),
//! * randomized rounding schemes ([`rounding`]),
//! * optimum-offline oracles ([`offline`]),
//! * adversarial instance generators ([`generators`]),
//! * a dual-certificate auditor that replays runs against the matching LP
//!   ([`audit`]).
//!
//! ```
//! use buyback::audit::audit_fractional;
//! use buyback::engine::fractional_primal_dual;
//! use buyback::generators::greedy_killer;
//! use buyback::numerics::{gamma_general, matching_penalty};
//! use buyback::offline::optimal_matching;
//!
//! // doubling weight stream with buyback factor 1: greedy is stuck at 2,
//! // the tuned primal-dual run stays within the optimal ratio of OPT
//! let instance = greedy_killer(10, 1.0);
//! let pen = matching_penalty(instance.buyback_factor);
//! let run = fractional_primal_dual(&instance, &pen)?;
//! let opt = optimal_matching(&instance)?.value;
//! let gamma = gamma_general(instance.buyback_factor);
//! assert!(opt / run.profit() <= gamma + 1e-6);
//!
//! // the dual certificate replays the run's competitive accounting
//! let report = audit_fractional(&run.trace, &instance, &pen, gamma)?;
//! assert!(report.feasible);
//! # Ok::<(), buyback::Error>(())
//! ```

// Validation sites use `!(x > 0.0)` so NaN is rejected along with the
// out-of-range values; the positive comparison alone would let NaN through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audit;
pub mod engine;
pub mod generators;
pub mod model;
pub mod numerics;
pub mod offline;
pub mod rng;
pub mod rounding;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("capacity violation: requested mass {requested} exceeds capacity {capacity}")]
    CapacityViolation { requested: f64, capacity: f64 },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("misaligned input: {0}")]
    MisalignedInput(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("trace mismatch: {0}")]
    TraceMismatch(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
