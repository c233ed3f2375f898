//! Verifier-in-the-loop episode collection: multi-turn refinement rollouts
//! against a frozen verifier, flattened into trainer-ready episodes with a
//! single terminal reward.
//!
//! Each episode is derived from exactly one loop trace. Generator turns
//! store the fully materialized message context the generator acted on —
//! rebuilt through the same template-rendering path the networked agents
//! use — so a downstream trainer never re-derives prompts and cannot drift.
//! The verifier stays frozen throughout: collection wraps it in
//! [`FrozenVerifier`], which refuses reference-conditioned calls, and the
//! plain templates carry no reference slot, so the gold answer has no path
//! into any generator-visible context.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::{FrozenVerifier, GeneratorAgent, VerifierAgent};
use crate::engine::run_vr_loop;
use crate::error::{Result, VrError};
use crate::jsonl;
use crate::protocol::{
    render_prompt, AnswerChecker, TemplateId, TemplateSet, SLOT_FEEDBACK, SLOT_PRIOR_SOLUTION,
    SLOT_STATEMENT,
};
use crate::types::{LoopConfig, Message, Problem, Termination, Verdict, VRTrace};
use crate::seed::{ROLE_GENERATOR, ROLE_VERIFIER};
use crate::SCHEMA_VERSION;

/// One turn of an episode. Turns strictly alternate generator/verifier,
/// starting with a generator turn; a capped loop ends on the unjudged final
/// generator turn, an accepted loop on the accepting verifier turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VilTurn {
    Generator {
        /// The exact message context this turn's text was produced from.
        context: Vec<Message>,
        text: String,
        prompt_tokens: u64,
        completion_tokens: u64,
        wall_time_ms: u64,
    },
    Verifier {
        verdict: Verdict,
        /// Feedback as delivered to the generator; absent on acceptance.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        feedback: Option<String>,
        /// Zero when the verdict came from ground truth without a call.
        prompt_tokens: u64,
        completion_tokens: u64,
        wall_time_ms: u64,
    },
}

impl VilTurn {
    pub fn is_generator(&self) -> bool {
        matches!(self, VilTurn::Generator { .. })
    }
}

/// A complete training episode: one refinement loop, flattened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VilEpisode {
    pub schema_version: u32,
    pub problem_id: String,
    pub loop_id: u64,
    pub seed: u64,
    /// Identity of the judging verifier; must carry the `frozen:` mark.
    pub verifier_tag: String,
    pub turns: Vec<VilTurn>,
    /// Correctness of the final solution, and nothing else: 0 or 1.
    pub final_reward: u8,
}

impl VilEpisode {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(VrError::InvalidParameter(format!(
                "episode {}/{}: schema version {} (engine speaks {})",
                self.problem_id, self.loop_id, self.schema_version, SCHEMA_VERSION
            )));
        }
        if !self.verifier_tag.starts_with("frozen:") {
            return Err(VrError::InvalidParameter(format!(
                "episode {}/{}: verifier tag '{}' is not marked frozen",
                self.problem_id, self.loop_id, self.verifier_tag
            )));
        }
        if self.final_reward > 1 {
            return Err(VrError::InvalidParameter(format!(
                "episode {}/{}: reward {} is not 0/1",
                self.problem_id, self.loop_id, self.final_reward
            )));
        }
        if self.turns.is_empty() {
            return Err(VrError::InvalidParameter(format!(
                "episode {}/{}: no turns",
                self.problem_id, self.loop_id
            )));
        }
        for (i, turn) in self.turns.iter().enumerate() {
            let want_generator = i % 2 == 0;
            if turn.is_generator() != want_generator {
                return Err(VrError::InvalidParameter(format!(
                    "episode {}/{}: turn {i} breaks generator/verifier alternation",
                    self.problem_id, self.loop_id
                )));
            }
            if let VilTurn::Generator { context, .. } = turn {
                if context.is_empty() {
                    return Err(VrError::InvalidParameter(format!(
                        "episode {}/{}: generator turn {i} has an empty context",
                        self.problem_id, self.loop_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn generator_turns(&self) -> usize {
        self.turns.iter().filter(|t| t.is_generator()).count()
    }

    /// True when `needle` appears anywhere in the serialized episode.
    /// Leak scans run over the serialized form so they cover every field a
    /// trainer will ever see, not a hand-picked subset.
    pub fn serialized_contains(&self, needle: &str) -> Result<bool> {
        Ok(serde_json::to_string(self)?.contains(needle))
    }
}

fn usage_totals(trace: &VRTrace, role: &str, round: u32) -> (u64, u64, u64) {
    trace
        .usage
        .iter()
        .filter(|u| u.role == role && u.round == round)
        .fold((0, 0, 0), |(p, c, w), u| {
            (p + u.prompt_tokens, c + u.completion_tokens, w + u.wall_time_ms)
        })
}

/// Rebuild the exact message context generator round `r` was produced from.
fn generator_context(
    templates: &TemplateSet,
    problem: &Problem,
    trace: &VRTrace,
    r: usize,
) -> Result<Vec<Message>> {
    if r == 0 {
        let bindings = BTreeMap::from([(SLOT_STATEMENT, problem.statement.as_str())]);
        return render_prompt(templates, TemplateId::GeneratorInitial, &bindings);
    }
    let prior = &trace.rounds[r - 1];
    let mut bindings = BTreeMap::from([
        (SLOT_STATEMENT, problem.statement.as_str()),
        (SLOT_PRIOR_SOLUTION, prior.attempt.text.as_str()),
    ]);
    let delivered = prior
        .verifier_output
        .as_ref()
        .and_then(|o| o.feedback.as_deref());
    if let Some(f) = delivered {
        bindings.insert(SLOT_FEEDBACK, f);
    }
    render_prompt(templates, TemplateId::GeneratorRefine, &bindings)
}

/// Flatten one finished trace into an episode. Error-terminated traces are
/// not episodes (trainers need complete trajectories) and are rejected here;
/// batch collection turns that rejection into a discard audit.
pub fn episode_from_trace(
    problem: &Problem,
    trace: &VRTrace,
    templates: &TemplateSet,
    verifier_tag: &str,
) -> Result<VilEpisode> {
    if problem.id != trace.problem_id {
        return Err(VrError::InvalidParameter(format!(
            "trace {} does not belong to problem {}",
            trace.loop_id, problem.id
        )));
    }
    if trace.termination == Termination::Error {
        return Err(VrError::InvalidParameter(format!(
            "trace {}/{} terminated in an error: {}",
            trace.problem_id,
            trace.loop_id,
            trace.error.as_deref().unwrap_or("unknown")
        )));
    }
    trace.validate()?;
    let mut turns = Vec::with_capacity(trace.rounds.len() * 2);
    for (r, round) in trace.rounds.iter().enumerate() {
        let context = generator_context(templates, problem, trace, r)?;
        let (prompt_tokens, completion_tokens, wall_time_ms) =
            usage_totals(trace, ROLE_GENERATOR, r as u32);
        turns.push(VilTurn::Generator {
            context,
            text: round.attempt.text.clone(),
            prompt_tokens,
            completion_tokens,
            wall_time_ms,
        });
        if let Some(output) = &round.verifier_output {
            // The judgment of round r happens at verification round r + 1,
            // which is where its usage (if any) is keyed.
            let (prompt_tokens, completion_tokens, wall_time_ms) =
                usage_totals(trace, ROLE_VERIFIER, r as u32 + 1);
            turns.push(VilTurn::Verifier {
                verdict: output.verdict,
                feedback: output.feedback.clone(),
                prompt_tokens,
                completion_tokens,
                wall_time_ms,
            });
        }
    }
    let final_reward = u8::from(
        trace
            .final_attempt()
            .map(|a| a.is_correct())
            .unwrap_or(false),
    );
    let episode = VilEpisode {
        schema_version: SCHEMA_VERSION,
        problem_id: trace.problem_id.clone(),
        loop_id: trace.loop_id,
        seed: trace.seed,
        verifier_tag: verifier_tag.to_string(),
        turns,
        final_reward,
    };
    episode.validate()?;
    Ok(episode)
}

/// Audit entry for a loop that produced no episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VilDiscard {
    pub problem_id: String,
    pub loop_id: u64,
    pub reason: String,
}

/// Result of one collection attempt.
#[derive(Debug)]
pub enum VilEpisodeOutcome {
    Collected(Box<VilEpisode>),
    Discarded(VilDiscard),
}

/// Run one refinement loop against the frozen verifier and flatten it.
/// `templates` must be the set the generator itself renders with, or the
/// materialized contexts would lie.
pub fn collect_vil_episode(
    problem: &Problem,
    generator: &dyn GeneratorAgent,
    verifier: &dyn VerifierAgent,
    checker: &dyn AnswerChecker,
    config: &LoopConfig,
    templates: &TemplateSet,
    loop_id: u64,
    base_seed: u64,
) -> Result<VilEpisodeOutcome> {
    let frozen = FrozenVerifier::new(verifier);
    let trace = run_vr_loop(problem, generator, &frozen, checker, config, loop_id, base_seed)?;
    if trace.termination == Termination::Error {
        return Ok(VilEpisodeOutcome::Discarded(VilDiscard {
            problem_id: trace.problem_id,
            loop_id,
            reason: trace.error.unwrap_or_else(|| "loop error".into()),
        }));
    }
    let episode = episode_from_trace(problem, &trace, templates, &frozen.tag())?;
    Ok(VilEpisodeOutcome::Collected(Box::new(episode)))
}

/// Episodes kept and loops discarded, over a batch.
#[derive(Debug, Default)]
pub struct VilCollection {
    pub episodes: Vec<VilEpisode>,
    pub discarded: Vec<VilDiscard>,
}

/// Collect `loops_per_problem` episodes per problem, discarding (with audit)
/// loops that die in transport.
#[allow(clippy::too_many_arguments)]
pub fn collect_vil_batch(
    problems: &[Problem],
    generator: &dyn GeneratorAgent,
    verifier: &dyn VerifierAgent,
    checker: &dyn AnswerChecker,
    config: &LoopConfig,
    templates: &TemplateSet,
    loops_per_problem: u64,
    base_seed: u64,
) -> Result<VilCollection> {
    if problems.is_empty() || loops_per_problem == 0 {
        return Err(VrError::EmptyInput(
            "episode collection needs problems and a positive loop count".into(),
        ));
    }
    let mut out = VilCollection::default();
    for problem in problems {
        for loop_id in 0..loops_per_problem {
            match collect_vil_episode(
                problem, generator, verifier, checker, config, templates, loop_id, base_seed,
            )? {
                VilEpisodeOutcome::Collected(e) => out.episodes.push(*e),
                VilEpisodeOutcome::Discarded(d) => {
                    log::warn!(
                        "discarding episode {}/{}: {}",
                        d.problem_id,
                        d.loop_id,
                        d.reason
                    );
                    out.discarded.push(d);
                }
            }
        }
    }
    Ok(out)
}

/// Write validated episodes as a versioned JSONL dataset (atomic publish).
pub fn export_episodes(path: &Path, episodes: &[VilEpisode]) -> Result<()> {
    for e in episodes {
        e.validate()?;
    }
    jsonl::write_dataset(path, "vil-episodes", episodes)
}

/// Read an episode dataset back, re-validating every record.
pub fn import_episodes(path: &Path) -> Result<Vec<VilEpisode>> {
    let episodes: Vec<VilEpisode> = jsonl::read_dataset(path)?;
    for e in &episodes {
        e.validate()?;
    }
    Ok(episodes)
}
