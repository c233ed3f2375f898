//! Deterministic per-call seed derivation.
//!
//! Every stochastic call (a generator sample, a verifier judgment, a
//! best-of-N draw) gets its own seed derived by hashing
//! (base seed, problem id, loop id, round, role). Two consequences:
//!
//! - simulated runs are reproducible byte-for-byte regardless of worker
//!   count or completion order, and
//! - retried network requests re-send the same seed parameter, so a retry
//!   is idempotent at the application level.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub const ROLE_GENERATOR: &str = "generator";
pub const ROLE_VERIFIER: &str = "verifier";
pub const ROLE_ROLLOUT: &str = "rollout";
// Best-of-N samples reuse ROLE_GENERATOR with the sample index as the round,
// so sample 0 of run l is the same draw as round 0 of loop l: a one-sample
// BoN run and a zero-refinement loop coincide exactly under a shared seed.
pub const ROLE_BON_VERIFY: &str = "bon-verify";
pub const ROLE_BON_SELECT: &str = "bon-select";
pub const ROLE_LOGPROB_STUDENT: &str = "logprob-student";
pub const ROLE_LOGPROB_TEACHER: &str = "logprob-teacher";

/// A fully derived 256-bit call seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CallSeed(pub [u8; 32]);

impl CallSeed {
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.0)
    }

    /// First eight bytes as a little-endian integer, for APIs that accept a
    /// single integer seed field (OpenAI-style `seed`).
    pub fn as_u64(&self) -> u64 {
        let mut b = [0u8; 8];
        b.copy_from_slice(&self.0[..8]);
        u64::from_le_bytes(b)
    }
}

/// Derive the seed for one call. Variable-length fields are separated by a
/// zero byte so that ("ab", "c") and ("a", "bc") cannot collide.
pub fn call_seed(base: u64, problem_id: &str, loop_id: u64, round: u64, role: &str) -> CallSeed {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update([0u8]);
    h.update(problem_id.as_bytes());
    h.update([0u8]);
    h.update(loop_id.to_le_bytes());
    h.update(round.to_le_bytes());
    h.update(role.as_bytes());
    CallSeed(h.finalize().into())
}
