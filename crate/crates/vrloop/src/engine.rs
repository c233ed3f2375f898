//! The verification-refinement loop.
//!
//! One loop on problem `x` with round cap `R`:
//!
//! 1. the generator produces an initial attempt `y_0`;
//! 2. for verification round `v = 1..=R`, the verifier judges `y_{v-1}`;
//!    an accept terminates the loop, a reject routes feedback (per the
//!    feedback mode) back to the generator, which produces `y_v`;
//! 3. a loop that survives all `R` rejections still produces `y_R`, which
//!    is recorded unjudged.
//!
//! So an accept at verification round `v` costs `v` generator calls and `v`
//! verifier calls, and a round-capped loop costs `R + 1` generator calls and
//! `R` verifier calls. Every attempt is graded against the gold answer at
//! creation time; verdict modes only change what the loop *acts on*, never
//! what is recorded.
//!
//! Call seeds derive from (base seed, problem, loop, round, role), so a loop
//! replays identically regardless of worker scheduling, and a retried or
//! resumed loop redoes exactly the same calls.

use crate::agents::{GeneratorAgent, VerifierAgent, VerifyMode};
use crate::error::{Result, VrError};
use crate::protocol::AnswerChecker;
use crate::seed::{call_seed, ROLE_GENERATOR, ROLE_VERIFIER};
use crate::types::{
    Attempt, CallUsage, FeedbackMode, LoopConfig, Problem, RoundRecord, Termination, Verdict,
    VerdictMode, VerifierOutput, VRTrace,
};
use crate::SCHEMA_VERSION;

/// Run one verification-refinement loop to completion.
///
/// Agent-call failures do not abort the run: the partial trace is returned
/// with `Termination::Error` and the failure message, so a long collection
/// keeps its completed work and the caller decides whether to re-run. An
/// `Err` here means the inputs themselves were unusable.
pub fn run_vr_loop(
    problem: &Problem,
    generator: &dyn GeneratorAgent,
    verifier: &dyn VerifierAgent,
    checker: &dyn AnswerChecker,
    config: &LoopConfig,
    loop_id: u64,
    base_seed: u64,
) -> Result<VRTrace> {
    config.validate()?;
    problem.validate()?;

    let mut trace = VRTrace {
        schema_version: SCHEMA_VERSION,
        problem_id: problem.id.clone(),
        loop_id,
        seed: base_seed,
        max_rounds: config.max_rounds,
        verdict_mode: config.verdict_mode,
        feedback_mode: config.feedback_mode,
        rounds: Vec::with_capacity(config.max_rounds as usize + 1),
        termination: Termination::MaxRounds,
        error: None,
        usage: Vec::new(),
    };

    // Verdicts from the oracle and feedback not from the model: the verifier
    // model has no influence on the loop, so skip its calls entirely.
    let elide_verifier = config.verdict_mode == VerdictMode::GroundTruth
        && config.feedback_mode != FeedbackMode::Model;

    let fail = |trace: &mut VRTrace, err: VrError| {
        trace.termination = Termination::Error;
        trace.error = Some(err.to_string());
    };

    let gen_seed = call_seed(base_seed, &problem.id, loop_id, 0, ROLE_GENERATOR);
    match generator.generate_initial(problem, gen_seed) {
        Ok(out) => {
            trace.usage.push(CallUsage {
                role: ROLE_GENERATOR.into(),
                round: 0,
                prompt_tokens: out.prompt_tokens,
                completion_tokens: out.completion_tokens,
                wall_time_ms: out.wall_time_ms,
            });
            let (extracted_answer, correct) = checker.check(&out.text, &problem.gold_answer);
            trace.rounds.push(RoundRecord {
                attempt: Attempt {
                    round_index: 0,
                    text: out.text,
                    extracted_answer,
                    correct: Some(correct),
                },
                verifier_output: None,
            });
        }
        Err(e) => {
            fail(&mut trace, e);
            return Ok(trace);
        }
    }

    for v in 1..=config.max_rounds {
        let judged = trace.rounds.len() - 1;
        let output = if elide_verifier {
            VerifierOutput {
                verdict: if trace.rounds[judged].attempt.is_correct() {
                    Verdict::Accept
                } else {
                    Verdict::Reject
                },
                feedback: None,
                score: None,
                raw: String::new(),
                mode: VerdictMode::GroundTruth,
            }
        } else {
            let seed = call_seed(base_seed, &problem.id, loop_id, u64::from(v), ROLE_VERIFIER);
            let outcome = match verifier.verify(
                problem,
                &trace.rounds[judged].attempt,
                VerifyMode::Plain,
                seed,
            ) {
                Ok(o) => o,
                Err(e) => {
                    fail(&mut trace, e);
                    return Ok(trace);
                }
            };
            trace.usage.push(CallUsage {
                role: ROLE_VERIFIER.into(),
                round: v,
                prompt_tokens: outcome.prompt_tokens,
                completion_tokens: outcome.completion_tokens,
                wall_time_ms: outcome.wall_time_ms,
            });
            let mut output = outcome.output;
            if config.verdict_mode == VerdictMode::GroundTruth {
                output.verdict = if trace.rounds[judged].attempt.is_correct() {
                    Verdict::Accept
                } else {
                    Verdict::Reject
                };
                output.mode = VerdictMode::GroundTruth;
            }
            output
        };

        // `feedback` records what the generator will actually receive; the
        // verbatim model reply stays in `raw`.
        let accepted = output.verdict == Verdict::Accept;
        let delivered = if accepted {
            None
        } else {
            match config.feedback_mode {
                FeedbackMode::Model => output.feedback.clone(),
                FeedbackMode::Generic => Some(config.generic_feedback_text.clone()),
                FeedbackMode::None => None,
            }
        };
        let stored = VerifierOutput {
            feedback: delivered.clone(),
            ..output
        };
        trace.rounds[judged].verifier_output = Some(stored);

        if accepted {
            trace.termination = Termination::Accepted;
            break;
        }

        let seed = call_seed(base_seed, &problem.id, loop_id, u64::from(v), ROLE_GENERATOR);
        let prev = &trace.rounds[judged].attempt;
        match generator.refine(problem, prev, delivered.as_deref(), seed) {
            Ok(out) => {
                trace.usage.push(CallUsage {
                    role: ROLE_GENERATOR.into(),
                    round: v,
                    prompt_tokens: out.prompt_tokens,
                    completion_tokens: out.completion_tokens,
                    wall_time_ms: out.wall_time_ms,
                });
                let (extracted_answer, correct) = checker.check(&out.text, &problem.gold_answer);
                trace.rounds.push(RoundRecord {
                    attempt: Attempt {
                        round_index: v,
                        text: out.text,
                        extracted_answer,
                        correct: Some(correct),
                    },
                    verifier_output: None,
                });
            }
            Err(e) => {
                fail(&mut trace, e);
                return Ok(trace);
            }
        }
    }

    debug_assert!(trace.validate().is_ok(), "engine produced invalid trace");
    Ok(trace)
}

/// Correctness of the loop's final attempt at every refinement budget
/// `0..=budget_cap`: entry `r` answers "had this loop been capped at `r`
/// refinement rounds, would it have ended on a correct attempt?". Once a
/// loop terminates, its last attempt carries forward to larger budgets.
pub fn round_series(trace: &VRTrace, budget_cap: u32) -> Result<Vec<bool>> {
    if trace.rounds.is_empty() {
        return Err(VrError::EmptyInput(format!(
            "trace {}/{} has no attempts",
            trace.problem_id, trace.loop_id
        )));
    }
    let last = trace.rounds.len() - 1;
    Ok((0..=budget_cap as usize)
        .map(|r| trace.rounds[r.min(last)].attempt.is_correct())
        .collect())
}

/// Generator calls the loop would have consumed under a cap of `budget`
/// refinement rounds. An accept at verification round `v` freezes the cost
/// at `v` for every budget >= v; otherwise the loop spends one call per
/// allowed round plus the initial attempt, truncated to what the trace
/// actually holds (error traces stop early).
pub fn calls_at_budget(trace: &VRTrace, budget: u32) -> usize {
    let spent = budget as usize + 1;
    match trace.accepted_round() {
        Some(a) if a + 1 <= budget as usize => a + 1,
        _ => spent.min(trace.rounds.len()),
    }
}
