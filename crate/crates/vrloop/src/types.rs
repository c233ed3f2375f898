//! Domain types shared across the engine.

use serde::{Deserialize, Serialize};

use crate::error::{Result, VrError};

/// Difficulty bin assigned from an estimated pass@1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bin {
    /// Estimated pass@1 exactly zero.
    Hardest,
    /// Estimated pass@1 strictly between 0 and 0.2.
    Hard,
    /// Estimated pass@1 at or above 0.2; kept in metadata, not used for runs.
    Excluded,
}

/// Exact pass@1 estimate as a count ratio, kept rational so bin boundaries
/// (e.g. 6/32 vs 7/32 around 0.2) never hit float rounding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pass1Estimate {
    pub correct: u32,
    pub total: u32,
}

impl Pass1Estimate {
    pub fn value(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            f64::from(self.correct) / f64::from(self.total)
        }
    }
}

/// One reasoning task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub statement: String,
    pub gold_answer: String,
    #[serde(default)]
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bin: Option<Bin>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pass1_estimate: Option<Pass1Estimate>,
}

impl Problem {
    pub fn new(id: impl Into<String>, statement: impl Into<String>, gold: impl Into<String>) -> Self {
        Problem {
            id: id.into(),
            statement: statement.into(),
            gold_answer: gold.into(),
            source: String::new(),
            bin: None,
            pass1_estimate: None,
        }
    }

    /// Check the bin/estimate consistency contract.
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(VrError::InvalidParameter("problem id must be non-empty".into()));
        }
        match (self.bin, self.pass1_estimate) {
            (Some(Bin::Hardest), Some(e)) if e.correct != 0 => Err(VrError::InvalidParameter(
                format!("problem {}: bin Hardest requires pass@1 = 0, got {}/{}", self.id, e.correct, e.total),
            )),
            (Some(Bin::Hard), Some(e)) => {
                // 0 < c/n < 0.2, checked exactly as integers: c > 0 and 5c < n.
                if e.correct == 0 || 5 * u64::from(e.correct) >= u64::from(e.total) {
                    Err(VrError::InvalidParameter(format!(
                        "problem {}: bin Hard requires 0 < pass@1 < 0.2, got {}/{}",
                        self.id, e.correct, e.total
                    )))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// One generator solution at a given round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    /// 0 denotes the initial solution; r > 0 is the r-th refinement.
    pub round_index: u32,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extracted_answer: Option<String>,
    /// Set whenever the attempt has been checked against the gold answer.
    /// Unextractable answers are checked and counted incorrect.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
}

impl Attempt {
    pub fn is_correct(&self) -> bool {
        self.correct.unwrap_or(false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Reject,
}

/// Where a verdict came from: the model's own parsed reply, or the oracle
/// override that replaces it in ground-truth mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictMode {
    Model,
    GroundTruth,
}

/// What the generator receives after a rejection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackMode {
    /// The verifier's own feedback text.
    Model,
    /// A fixed generic string regardless of what the verifier said.
    Generic,
    /// No feedback at all; the refinement prompt omits the feedback slot.
    None,
}

/// A verifier judgment of one attempt.
///
/// `feedback` stores the feedback as delivered to the generator (after the
/// feedback-mode override), `raw` always preserves the verbatim model reply
/// for audit. `mode` records whether the verdict was overridden by the
/// oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierOutput {
    pub verdict: Verdict,
    pub feedback: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    pub raw: String,
    pub mode: VerdictMode,
}

/// Loop-level configuration for one verification-refinement run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub max_rounds: u32,
    pub verdict_mode: VerdictMode,
    pub feedback_mode: FeedbackMode,
    pub generic_feedback_text: String,
}

pub const DEFAULT_GENERIC_FEEDBACK: &str = "Your solution appears to be incorrect.";

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            max_rounds: 20,
            verdict_mode: VerdictMode::Model,
            feedback_mode: FeedbackMode::Model,
            generic_feedback_text: DEFAULT_GENERIC_FEEDBACK.to_string(),
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_rounds < 1 {
            return Err(VrError::InvalidParameter("max_rounds must be >= 1".into()));
        }
        Ok(())
    }
}

/// One (attempt, judgment) step of a loop. The verifier output is absent on
/// the final attempt of a round-capped loop (it was produced after the last
/// rejection and never judged) and after a mid-loop error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub attempt: Attempt,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verifier_output: Option<VerifierOutput>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Accepted,
    MaxRounds,
    Error,
}

/// Token and latency accounting for a single agent call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallUsage {
    pub role: String,
    pub round: u32,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub wall_time_ms: u64,
}

/// One full verification-refinement loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VRTrace {
    pub schema_version: u32,
    pub problem_id: String,
    pub loop_id: u64,
    /// Base seed of the run; per-call seeds derive from it.
    pub seed: u64,
    pub max_rounds: u32,
    pub verdict_mode: VerdictMode,
    pub feedback_mode: FeedbackMode,
    pub rounds: Vec<RoundRecord>,
    pub termination: Termination,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub usage: Vec<CallUsage>,
}

impl VRTrace {
    /// Index into `rounds` of the accepted attempt, if any.
    pub fn accepted_round(&self) -> Option<usize> {
        self.rounds.iter().position(|r| {
            r.verifier_output
                .as_ref()
                .map(|v| v.verdict == Verdict::Accept)
                .unwrap_or(false)
        })
    }

    pub fn final_attempt(&self) -> Option<&Attempt> {
        self.rounds.last().map(|r| &r.attempt)
    }

    pub fn generator_calls(&self) -> usize {
        self.rounds.len()
    }

    pub fn verifier_calls(&self) -> usize {
        self.rounds.iter().filter(|r| r.verifier_output.is_some()).count()
    }

    /// Structural invariants every well-formed trace satisfies.
    pub fn validate(&self) -> Result<()> {
        if self.rounds.is_empty() && self.termination != Termination::Error {
            return Err(VrError::InvalidParameter(format!(
                "trace {}/{}: no rounds without an error termination",
                self.problem_id, self.loop_id
            )));
        }
        for (i, r) in self.rounds.iter().enumerate() {
            if r.attempt.round_index as usize != i {
                return Err(VrError::InvalidParameter(format!(
                    "trace {}/{}: round_index {} at position {}",
                    self.problem_id, self.loop_id, r.attempt.round_index, i
                )));
            }
        }
        if let Some(acc) = self.accepted_round() {
            if acc + 1 != self.rounds.len() {
                return Err(VrError::InvalidParameter(format!(
                    "trace {}/{}: accepting verdict at round {} is not final",
                    self.problem_id, self.loop_id, acc
                )));
            }
            if self.termination != Termination::Accepted {
                return Err(VrError::InvalidParameter(format!(
                    "trace {}/{}: accepting verdict but termination {:?}",
                    self.problem_id, self.loop_id, self.termination
                )));
            }
        }
        let r = self.max_rounds as usize;
        if self.verifier_calls() > r {
            return Err(VrError::InvalidParameter(format!(
                "trace {}/{}: {} verifier calls exceeds cap {}",
                self.problem_id,
                self.loop_id,
                self.verifier_calls(),
                r
            )));
        }
        if self.generator_calls() > r + 1 {
            return Err(VrError::InvalidParameter(format!(
                "trace {}/{}: {} generator calls exceeds cap {}",
                self.problem_id,
                self.loop_id,
                self.generator_calls(),
                r + 1
            )));
        }
        Ok(())
    }
}

/// One chat message in the OpenAI wire shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: "user".into(),
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Message {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message {
            role: "assistant".into(),
            content: content.into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn problem_bin_consistency() {
        let mut p = Problem::new("p", "s", "1");
        p.bin = Some(Bin::Hardest);
        p.pass1_estimate = Some(Pass1Estimate { correct: 0, total: 32 });
        assert!(p.validate().is_ok());

        p.pass1_estimate = Some(Pass1Estimate { correct: 1, total: 32 });
        assert!(p.validate().is_err());

        p.bin = Some(Bin::Hard);
        p.pass1_estimate = Some(Pass1Estimate { correct: 6, total: 32 });
        assert!(p.validate().is_ok());
        p.pass1_estimate = Some(Pass1Estimate { correct: 7, total: 32 });
        assert!(p.validate().is_err());
    }

    #[test]
    fn problem_jsonl_ingestion_shape() {
        // The ingestion schema carries only the four base fields.
        let p: Problem =
            serde_json::from_str(r#"{"id":"a","statement":"s","gold_answer":"42","source":"t"}"#)
                .unwrap();
        assert_eq!(p.id, "a");
        assert!(p.bin.is_none());
        assert!(p.pass1_estimate.is_none());
    }

    #[test]
    fn trace_validation_rejects_non_final_accept() {
        let attempt = |i: u32| Attempt {
            round_index: i,
            text: String::new(),
            extracted_answer: None,
            correct: Some(false),
        };
        let accept = VerifierOutput {
            verdict: Verdict::Accept,
            feedback: None,
            score: None,
            raw: String::new(),
            mode: VerdictMode::Model,
        };
        let trace = VRTrace {
            schema_version: 1,
            problem_id: "p".into(),
            loop_id: 0,
            seed: 0,
            max_rounds: 3,
            verdict_mode: VerdictMode::Model,
            feedback_mode: FeedbackMode::Model,
            rounds: vec![
                RoundRecord {
                    attempt: attempt(0),
                    verifier_output: Some(accept),
                },
                RoundRecord {
                    attempt: attempt(1),
                    verifier_output: None,
                },
            ],
            termination: Termination::Accepted,
            error: None,
            usage: vec![],
        };
        assert!(trace.validate().is_err());
    }
}
