//! Orchestration and evaluation engine for verification-refinement loops.
//!
//! A generator proposes a solution to a problem, a verifier returns an
//! accept/reject verdict plus natural-language feedback, and the generator
//! refines until acceptance or a round cap. This crate runs those loops
//! against OpenAI-compatible endpoints or built-in seeded simulated agents,
//! and computes the downstream artifacts: distillation records for training
//! a reference-conditioned verifier imitator, multi-turn episodes for
//! generator RL, and the evaluation battery (per-round pass@1, unbiased
//! pass@k, precision-coverage frontiers, matched-compute best-of-N
//! comparisons).
//!
//! Everything in simulated mode is a pure function of the configuration and
//! the base seed: per-call seeds are derived from
//! (base seed, problem id, loop id, round, role), so results are independent
//! of scheduling order and concurrency.

pub mod agents;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod jsonl;
pub mod manifest;
pub mod metrics;
pub mod protocol;
pub mod runner;
pub mod seed;
pub mod stv;
pub mod types;
pub mod vil;

pub use error::VrError;

/// Schema version stamped on every persisted artifact line (traces, records,
/// episodes, export headers). Bump on any backward-incompatible field change.
pub const SCHEMA_VERSION: u32 = 1;

/// Engine version recorded in run manifests.
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");
