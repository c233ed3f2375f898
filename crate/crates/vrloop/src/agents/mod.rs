//! Generator and verifier behaviors behind uniform interfaces.
//!
//! Two families implement these traits: a networked client for
//! OpenAI-compatible endpoints (`http`) and seeded simulated agents for
//! desk-scale runs and tests (`sim`).

pub mod http;
pub mod sim;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VrError};
use crate::seed::CallSeed;
use crate::types::{Attempt, Message, Problem, VerifierOutput};

/// Result of one generator call, before the engine attaches round indexing
/// and correctness.
#[derive(Debug, Clone)]
pub struct GenOutput {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub wall_time_ms: u64,
}

/// Result of one verifier call: the parsed output plus accounting.
#[derive(Debug, Clone)]
pub struct VerifyOutcome {
    pub output: VerifierOutput,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub wall_time_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyMode {
    /// Judge from the problem and candidate solution only.
    Plain,
    /// Additionally condition on the gold solution (the teacher view). Never
    /// allowed inside generator-training episodes.
    ReferenceConditioned,
}

pub trait GeneratorAgent: Send + Sync {
    fn generate_initial(&self, problem: &Problem, seed: CallSeed) -> Result<GenOutput>;

    fn refine(
        &self,
        problem: &Problem,
        prev: &Attempt,
        feedback: Option<&str>,
        seed: CallSeed,
    ) -> Result<GenOutput>;
}

pub trait VerifierAgent: Send + Sync {
    fn verify(
        &self,
        problem: &Problem,
        attempt: &Attempt,
        mode: VerifyMode,
        seed: CallSeed,
    ) -> Result<VerifyOutcome>;

    /// Identity tag recorded on episodes and manifests.
    fn tag(&self) -> String;
}

/// Wrapper enforcing the frozen-verifier contract of episode collection:
/// reference-conditioned calls are refused, so no gold answer can flow
/// through the verifier into a generator-visible context.
pub struct FrozenVerifier<'a> {
    inner: &'a dyn VerifierAgent,
}

impl<'a> FrozenVerifier<'a> {
    pub fn new(inner: &'a dyn VerifierAgent) -> Self {
        FrozenVerifier { inner }
    }
}

impl VerifierAgent for FrozenVerifier<'_> {
    fn verify(
        &self,
        problem: &Problem,
        attempt: &Attempt,
        mode: VerifyMode,
        seed: CallSeed,
    ) -> Result<VerifyOutcome> {
        if mode == VerifyMode::ReferenceConditioned {
            return Err(VrError::InvalidParameter(
                "frozen verifier refuses reference-conditioned calls".into(),
            ));
        }
        self.inner.verify(problem, attempt, VerifyMode::Plain, seed)
    }

    fn tag(&self) -> String {
        format!("frozen:{}", self.inner.tag())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

/// Truncated token distribution at one generated position: the chosen token,
/// up to K listed alternatives, and a single tail atom carrying the rest of
/// the probability mass. Serving APIs only expose top-K logprobs, so this is
/// the finest-grained distribution obtainable over the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDist {
    pub position: u32,
    pub chosen_token: String,
    pub chosen_logprob: f64,
    pub alternatives: Vec<TokenLogprob>,
    pub tail_mass: f64,
}

impl TokenDist {
    /// Build from listed logprobs, computing the tail atom. `alternatives`
    /// may include the chosen token again (APIs commonly do); duplicates are
    /// counted once.
    pub fn from_listed(
        position: u32,
        chosen_token: impl Into<String>,
        chosen_logprob: f64,
        alternatives: Vec<TokenLogprob>,
    ) -> Result<Self> {
        let mut dist = TokenDist {
            position,
            chosen_token: chosen_token.into(),
            chosen_logprob,
            alternatives,
            tail_mass: 0.0,
        };
        let listed: f64 = dist.listed().iter().map(|(_, p)| p).sum();
        if listed > 1.0 + 1e-9 {
            return Err(VrError::InvalidParameter(format!(
                "token distribution at position {position} has listed mass {listed} > 1"
            )));
        }
        dist.tail_mass = (1.0 - listed).max(0.0);
        dist.validate()?;
        Ok(dist)
    }

    /// Deduplicated (token, probability) pairs, chosen token first.
    pub fn listed(&self) -> Vec<(&str, f64)> {
        let mut out: Vec<(&str, f64)> = vec![(self.chosen_token.as_str(), self.chosen_logprob.exp())];
        for alt in &self.alternatives {
            if out.iter().all(|(t, _)| *t != alt.token.as_str()) {
                out.push((alt.token.as_str(), alt.logprob.exp()));
            }
        }
        out
    }

    /// Mass invariant: listed probabilities plus tail sum to 1 within 1e-9,
    /// all logprobs non-positive, tail in [0,1].
    pub fn validate(&self) -> Result<()> {
        let eps = 1e-9;
        if self.chosen_logprob > eps {
            return Err(VrError::InvalidParameter(format!(
                "position {}: chosen logprob {} > 0",
                self.position, self.chosen_logprob
            )));
        }
        for alt in &self.alternatives {
            if alt.logprob > eps {
                return Err(VrError::InvalidParameter(format!(
                    "position {}: alternative logprob {} > 0",
                    self.position, alt.logprob
                )));
            }
        }
        if !(0.0..=1.0 + eps).contains(&self.tail_mass) {
            return Err(VrError::InvalidParameter(format!(
                "position {}: tail mass {} outside [0,1]",
                self.position, self.tail_mass
            )));
        }
        let total: f64 = self.listed().iter().map(|(_, p)| p).sum::<f64>() + self.tail_mass;
        if (total - 1.0).abs() > eps {
            return Err(VrError::InvalidParameter(format!(
                "position {}: listed mass + tail = {total}, expected 1",
                self.position
            )));
        }
        Ok(())
    }
}

/// One sampled completion with per-position truncated distributions.
#[derive(Debug, Clone)]
pub struct LogprobCompletion {
    pub text: String,
    pub tokens: Vec<String>,
    pub dists: Vec<TokenDist>,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub wall_time_ms: u64,
}

/// Agents able to expose token distributions: sampling a completion with
/// logprobs, and scoring a forced token sequence position-by-position (the
/// teacher pathway).
pub trait LogprobAgent: Send + Sync {
    fn complete_with_logprobs(&self, messages: &[Message], seed: CallSeed)
        -> Result<LogprobCompletion>;

    /// Per-position distributions along `forced_tokens` given the same
    /// message context; used to score student-sampled tokens under the
    /// teacher prompt.
    fn score_tokens(
        &self,
        messages: &[Message],
        forced_tokens: &[String],
        seed: CallSeed,
    ) -> Result<Vec<TokenDist>>;

    /// Which scoring pathway this agent uses ("echo", "continuation",
    /// "simulated"); recorded in run metadata.
    fn mechanism(&self) -> &'static str;

    /// Startup probe: fail fast if the backend cannot return logprobs.
    fn probe(&self) -> Result<()> {
        Ok(())
    }
}
