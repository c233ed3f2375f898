//! Seeded simulated agents.
//!
//! These are pure functions of (params, seed, inputs): identical calls give
//! identical outputs, independent of scheduling. They exist to reproduce the
//! qualitative loop dynamics at desk scale (rising accuracy under
//! informative feedback, score inflation under a drifting verifier,
//! calibration gaps between verifier grades) and to make every metric in the
//! crate testable without a network.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{
    GenOutput, GeneratorAgent, LogprobAgent, LogprobCompletion, TokenDist, TokenLogprob,
    VerifierAgent, VerifyMode, VerifyOutcome,
};
use crate::error::{Result, VrError};
use crate::protocol::{answers_equivalent, parse_verdict, AnswerSpec, AnswerChecker};
use crate::seed::CallSeed;
use crate::types::{Attempt, Bin, Message, Problem};

/// Marker the simulated verifier embeds in feedback it considers specific
/// enough to act on. The simulated generator keys its informative uplift on
/// this marker; anything else non-empty counts as generic feedback.
pub const INFORMATIVE_MARKER: &str = "Specific issue found";

fn clamp01(p: f64) -> f64 {
    p.clamp(0.0, 1.0)
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(VrError::InvalidParameter(format!(
            "{name} must be in [0,1], got {p}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimGeneratorParams {
    /// Solve probability for an initial attempt, unless a bin override applies.
    pub base_solve_prob: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hardest_solve_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hard_solve_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excluded_solve_prob: Option<f64>,
    /// Additive per-round gain when refining on feedback carrying the
    /// informative marker: solve probability at round r is
    /// clamp(base + uplift * r).
    pub uplift_informative: f64,
    /// Same, for any other non-empty feedback.
    pub uplift_generic: f64,
}

impl Default for SimGeneratorParams {
    fn default() -> Self {
        SimGeneratorParams {
            base_solve_prob: 0.1,
            hardest_solve_prob: None,
            hard_solve_prob: None,
            excluded_solve_prob: None,
            uplift_informative: 0.3,
            uplift_generic: 0.05,
        }
    }
}

impl SimGeneratorParams {
    pub fn validate(&self) -> Result<()> {
        check_prob("base_solve_prob", self.base_solve_prob)?;
        for (name, v) in [
            ("hardest_solve_prob", self.hardest_solve_prob),
            ("hard_solve_prob", self.hard_solve_prob),
            ("excluded_solve_prob", self.excluded_solve_prob),
        ] {
            if let Some(p) = v {
                check_prob(name, p)?;
            }
        }
        check_prob("uplift_informative", self.uplift_informative)?;
        check_prob("uplift_generic", self.uplift_generic)?;
        Ok(())
    }

    fn solve_prob_for(&self, problem: &Problem) -> f64 {
        match problem.bin {
            Some(Bin::Hardest) => self.hardest_solve_prob.unwrap_or(self.base_solve_prob),
            Some(Bin::Hard) => self.hard_solve_prob.unwrap_or(self.base_solve_prob),
            Some(Bin::Excluded) => self.excluded_solve_prob.unwrap_or(self.base_solve_prob),
            None => self.base_solve_prob,
        }
    }
}

pub struct SimGenerator {
    params: SimGeneratorParams,
}

impl SimGenerator {
    pub fn new(params: SimGeneratorParams) -> Result<Self> {
        params.validate()?;
        Ok(SimGenerator { params })
    }

    fn uplift_for(&self, feedback: Option<&str>) -> f64 {
        match feedback {
            None => 0.0,
            Some(f) if f.contains(INFORMATIVE_MARKER) => self.params.uplift_informative,
            Some(_) => self.params.uplift_generic,
        }
    }

    /// Closed-form solve probability for a given round and feedback class;
    /// exposed so tests can compare Monte-Carlo estimates against it.
    pub fn solve_prob(&self, problem: &Problem, round: u32, feedback: Option<&str>) -> f64 {
        let base = self.params.solve_prob_for(problem);
        clamp01(base + self.uplift_for(feedback) * f64::from(round))
    }

    fn emit(&self, problem: &Problem, round: u32, correct: bool, rng: &mut ChaCha8Rng) -> String {
        let answer = if correct {
            problem.gold_answer.clone()
        } else {
            wrong_answer(&problem.gold_answer, rng)
        };
        let opening = match rng.random_range(0..3u32) {
            0 => "Setting up the quantities named in the statement and tracking each constraint.",
            1 => "Restating the problem in simpler terms before computing.",
            _ => "Working through the cases one at a time.",
        };
        let middle = match rng.random_range(0..3u32) {
            0 => "Combining the partial results gives a single candidate value.",
            1 => "After simplification the expression collapses to one number.",
            _ => "The intermediate totals line up, leaving one value to report.",
        };
        let revision_note = if round > 0 {
            "Revisiting the earlier derivation with the feedback in mind.\n"
        } else {
            ""
        };
        format!("{revision_note}{opening}\n{middle}\nThe final answer is \\boxed{{{answer}}}.")
    }

    fn output(&self, problem: &Problem, prev_len: usize, text: String) -> GenOutput {
        let prompt_tokens = (problem.statement.len() / 4 + prev_len / 4 + 40) as u64;
        let completion_tokens = (text.len() / 4) as u64;
        GenOutput {
            text,
            prompt_tokens,
            completion_tokens,
            // Simulated calls report zero wall time so traces replay
            // byte-identically.
            wall_time_ms: 0,
        }
    }
}

/// Draw a plausible wrong numeric answer, guaranteed inequivalent to gold.
fn wrong_answer(gold: &str, rng: &mut ChaCha8Rng) -> String {
    for _ in 0..64 {
        let candidate = rng.random_range(0..1_000_000u64).to_string();
        if !answers_equivalent(&candidate, gold) {
            return candidate;
        }
    }
    format!("{gold}0") // unreachable in practice; still inequivalent
}

impl GeneratorAgent for SimGenerator {
    fn generate_initial(&self, problem: &Problem, seed: CallSeed) -> Result<GenOutput> {
        let mut rng = seed.rng();
        let correct = rng.random_bool(self.solve_prob(problem, 0, None));
        let text = self.emit(problem, 0, correct, &mut rng);
        Ok(self.output(problem, 0, text))
    }

    fn refine(
        &self,
        problem: &Problem,
        prev: &Attempt,
        feedback: Option<&str>,
        seed: CallSeed,
    ) -> Result<GenOutput> {
        if prev.text.is_empty() {
            return Err(VrError::InvalidParameter(
                "refine requires a non-empty prior attempt".into(),
            ));
        }
        let round = prev.round_index + 1;
        let mut rng = seed.rng();
        let correct = rng.random_bool(self.solve_prob(problem, round, feedback));
        let text = self.emit(problem, round, correct, &mut rng);
        let prev_len = prev.text.len() + feedback.map(str::len).unwrap_or(0);
        Ok(self.output(problem, prev_len, text))
    }
}

/// How the simulated verifier reports its optional confidence score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoreModel {
    /// No score line in the reply.
    None,
    /// Score inflates with the round regardless of correctness:
    /// clamp(base + per_round * round). The in-context reward-hacking shape.
    Drift { base: f64, per_round: f64 },
    /// Score reflects actual correctness with a little seeded noise.
    Calibrated { high: f64, low: f64, noise: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimVerifierParams {
    /// P(accept | attempt correct).
    pub tpr: f64,
    /// P(accept | attempt incorrect).
    pub fpr: f64,
    /// Probability that reject feedback carries the informative marker.
    pub informative_feedback_prob: f64,
    #[serde(default = "default_score_model")]
    pub score_model: ScoreModel,
}

fn default_score_model() -> ScoreModel {
    ScoreModel::None
}

impl Default for SimVerifierParams {
    fn default() -> Self {
        SimVerifierParams {
            tpr: 0.9,
            fpr: 0.05,
            informative_feedback_prob: 1.0,
            score_model: ScoreModel::None,
        }
    }
}

impl SimVerifierParams {
    pub fn validate(&self) -> Result<()> {
        check_prob("tpr", self.tpr)?;
        check_prob("fpr", self.fpr)?;
        check_prob("informative_feedback_prob", self.informative_feedback_prob)?;
        if let ScoreModel::Calibrated { high, low, noise } = self.score_model {
            check_prob("calibrated high", high)?;
            check_prob("calibrated low", low)?;
            check_prob("calibrated noise", noise)?;
        }
        Ok(())
    }

    /// Oracle-grade parameters: accept exactly the correct attempts.
    pub fn oracle() -> Self {
        SimVerifierParams {
            tpr: 1.0,
            fpr: 0.0,
            informative_feedback_prob: 1.0,
            score_model: ScoreModel::None,
        }
    }
}

/// Simulated verifier. `plain` parameters drive ordinary verification;
/// `teacher` parameters (defaulting to oracle-grade) drive
/// reference-conditioned calls, modeling how access to the gold solution
/// sharpens judgment.
pub struct SimVerifier {
    plain: SimVerifierParams,
    teacher: SimVerifierParams,
    answer_spec: AnswerSpec,
}

impl SimVerifier {
    pub fn new(plain: SimVerifierParams, teacher: Option<SimVerifierParams>) -> Self {
        SimVerifier {
            plain,
            teacher: teacher.unwrap_or_else(SimVerifierParams::oracle),
            answer_spec: AnswerSpec::default(),
        }
    }

    pub fn validated(plain: SimVerifierParams, teacher: Option<SimVerifierParams>) -> Result<Self> {
        plain.validate()?;
        if let Some(t) = &teacher {
            t.validate()?;
        }
        Ok(SimVerifier::new(plain, teacher))
    }

    fn attempt_correct(&self, problem: &Problem, attempt: &Attempt) -> bool {
        match attempt.correct {
            Some(c) => c,
            None => {
                let (_, ok) = self.answer_spec.check(&attempt.text, &problem.gold_answer);
                ok
            }
        }
    }
}

impl VerifierAgent for SimVerifier {
    fn verify(
        &self,
        problem: &Problem,
        attempt: &Attempt,
        mode: VerifyMode,
        seed: CallSeed,
    ) -> Result<VerifyOutcome> {
        let params = match mode {
            VerifyMode::Plain => &self.plain,
            VerifyMode::ReferenceConditioned => {
                if problem.gold_answer.is_empty() {
                    return Err(VrError::InvalidParameter(format!(
                        "problem {}: reference-conditioned verify requires a gold answer",
                        problem.id
                    )));
                }
                &self.teacher
            }
        };
        let correct = self.attempt_correct(problem, attempt);
        let mut rng = seed.rng();
        // Draw order is fixed and unconditional; changing it changes every
        // downstream seed-pinned expectation.
        let accept = rng.random_bool(clamp01(if correct { params.tpr } else { params.fpr }));
        let informative = rng.random_bool(clamp01(params.informative_feedback_prob));
        let noise_draw = rng.random::<f64>();
        let style = rng.random_range(0..2u32);

        let analysis = if accept {
            match style {
                0 => "Each step follows from the previous one and the arithmetic checks out.",
                _ => "The derivation is coherent and the final value is consistent with the setup.",
            }
            .to_string()
        } else if informative {
            let shown = attempt.extracted_answer.as_deref().unwrap_or("reported");
            format!(
                "{INFORMATIVE_MARKER}: the final answer {shown} fails a consistency \
                 re-check against the problem constraints; re-derive the key step."
            )
        } else {
            match style {
                0 => "The reasoning does not convincingly establish the final answer.",
                _ => "Some steps are asserted without justification; the conclusion is not supported.",
            }
            .to_string()
        };

        let score_line = match params.score_model {
            ScoreModel::None => String::new(),
            ScoreModel::Drift { base, per_round } => {
                let s = clamp01(base + per_round * f64::from(attempt.round_index));
                format!("Score: {s:.4}\n")
            }
            ScoreModel::Calibrated { high, low, noise } => {
                let centre = if correct { high } else { low };
                let s = clamp01(centre + noise * (2.0 * noise_draw - 1.0));
                format!("Score: {s:.4}\n")
            }
        };

        let verdict_word = if accept { "CORRECT" } else { "INCORRECT" };
        let raw = format!("{analysis}\n{score_line}Predicted verdict: {verdict_word}");

        // The reply goes through the real parser so the simulated path
        // exercises the same text contract as a live endpoint.
        let output = parse_verdict(&raw);
        debug_assert_eq!(
            (output.verdict == crate::types::Verdict::Accept),
            accept,
            "simulated reply must parse back to its own verdict"
        );
        let prompt_tokens = (problem.statement.len() / 4 + attempt.text.len() / 4 + 50) as u64;
        let completion_tokens = (raw.len() / 4) as u64;
        Ok(VerifyOutcome {
            output,
            prompt_tokens,
            completion_tokens,
            wall_time_ms: 0,
        })
    }

    fn tag(&self) -> String {
        format!(
            "sim-verifier(tpr={},fpr={})",
            self.plain.tpr, self.plain.fpr
        )
    }
}

const DEFAULT_VOCAB: [&str; 12] = [
    "the", "solution", "uses", "a", "sound", "step", "but", "misses", "one", "case", "overall",
    "verdict",
];

enum LogprobBehavior {
    Fixture {
        tokens: Vec<String>,
        dists: Vec<TokenDist>,
    },
    Procedural {
        /// Identity of the underlying "model": agents sharing a base key
        /// share base distributions, so a zero-perturbation teacher is
        /// exactly the student.
        base_key: u64,
        vocab: Vec<String>,
        response_len: usize,
        top_k: usize,
        /// Log-space tilt applied to the base distribution; 0 reproduces it.
        perturbation: f64,
    },
}

/// Simulated logprob-capable backend for distillation-record construction.
pub struct SimLogprobAgent {
    behavior: LogprobBehavior,
}

impl SimLogprobAgent {
    pub fn fixture(tokens: Vec<String>, dists: Vec<TokenDist>) -> Result<Self> {
        if tokens.len() != dists.len() {
            return Err(VrError::InvalidParameter(format!(
                "fixture tokens ({}) and dists ({}) must align",
                tokens.len(),
                dists.len()
            )));
        }
        for d in &dists {
            d.validate()?;
        }
        Ok(SimLogprobAgent {
            behavior: LogprobBehavior::Fixture { tokens, dists },
        })
    }

    pub fn procedural(base_key: u64, top_k: usize, perturbation: f64) -> Self {
        SimLogprobAgent {
            behavior: LogprobBehavior::Procedural {
                base_key,
                vocab: DEFAULT_VOCAB.iter().map(|s| s.to_string()).collect(),
                response_len: 6,
                top_k: top_k.max(1),
                perturbation,
            },
        }
    }

    /// Full conditional distribution over the vocabulary at one position,
    /// keyed by (base_key, prefix, position) so that student and teacher
    /// agree exactly when perturbation is zero.
    fn base_dist(
        base_key: u64,
        vocab: &[String],
        prefix: &[String],
        position: usize,
        perturbation: f64,
    ) -> Vec<f64> {
        let mut h = Sha256::new();
        h.update(base_key.to_le_bytes());
        h.update([0u8]);
        for t in prefix {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        h.update((position as u64).to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
        let mut w: Vec<f64> = (0..vocab.len()).map(|_| rng.random::<f64>() + 0.05).collect();

        if perturbation != 0.0 {
            let mut h = Sha256::new();
            h.update(base_key.to_le_bytes());
            h.update(b"perturb");
            for t in prefix {
                h.update(t.as_bytes());
                h.update([0u8]);
            }
            h.update((position as u64).to_le_bytes());
            let mut prng = ChaCha8Rng::from_seed(h.finalize().into());
            for wi in w.iter_mut() {
                let n = 2.0 * prng.random::<f64>() - 1.0;
                *wi *= (perturbation * n).exp();
            }
        }

        let total: f64 = w.iter().sum();
        w.iter().map(|x| x / total).collect()
    }

    fn dist_at(
        vocab: &[String],
        probs: &[f64],
        chosen_idx: usize,
        position: u32,
        top_k: usize,
    ) -> Result<TokenDist> {
        let mut order: Vec<usize> = (0..vocab.len()).collect();
        order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b)));
        let alternatives: Vec<TokenLogprob> = order
            .iter()
            .take(top_k)
            .map(|&i| TokenLogprob {
                token: vocab[i].clone(),
                logprob: probs[i].ln(),
            })
            .collect();
        TokenDist::from_listed(
            position,
            vocab[chosen_idx].clone(),
            probs[chosen_idx].ln(),
            alternatives,
        )
    }
}

impl LogprobAgent for SimLogprobAgent {
    fn complete_with_logprobs(
        &self,
        messages: &[Message],
        seed: CallSeed,
    ) -> Result<LogprobCompletion> {
        let prompt_tokens: u64 = messages.iter().map(|m| (m.content.len() / 4) as u64).sum();
        match &self.behavior {
            LogprobBehavior::Fixture { tokens, dists } => Ok(LogprobCompletion {
                text: tokens.join(" "),
                tokens: tokens.clone(),
                dists: dists.clone(),
                prompt_tokens,
                completion_tokens: tokens.len() as u64,
                wall_time_ms: 0,
            }),
            LogprobBehavior::Procedural {
                base_key,
                vocab,
                response_len,
                top_k,
                perturbation,
            } => {
                let mut rng = seed.rng();
                let mut tokens: Vec<String> = Vec::with_capacity(*response_len);
                let mut dists: Vec<TokenDist> = Vec::with_capacity(*response_len);
                for pos in 0..*response_len {
                    let probs = Self::base_dist(*base_key, vocab, &tokens, pos, *perturbation);
                    // Inverse-CDF sample with the call seed.
                    let u = rng.random::<f64>();
                    let mut acc = 0.0;
                    let mut chosen = vocab.len() - 1;
                    for (i, p) in probs.iter().enumerate() {
                        acc += p;
                        if u < acc {
                            chosen = i;
                            break;
                        }
                    }
                    dists.push(Self::dist_at(vocab, &probs, chosen, pos as u32, *top_k)?);
                    tokens.push(vocab[chosen].clone());
                }
                Ok(LogprobCompletion {
                    text: tokens.join(" "),
                    completion_tokens: tokens.len() as u64,
                    tokens,
                    dists,
                    prompt_tokens,
                    wall_time_ms: 0,
                })
            }
        }
    }

    fn score_tokens(
        &self,
        messages: &[Message],
        forced_tokens: &[String],
        _seed: CallSeed,
    ) -> Result<Vec<TokenDist>> {
        let _ = messages;
        match &self.behavior {
            LogprobBehavior::Fixture { tokens, dists } => {
                if forced_tokens != tokens.as_slice() {
                    return Err(VrError::InvalidParameter(
                        "fixture logprob agent can only score its own fixture tokens".into(),
                    ));
                }
                Ok(dists.clone())
            }
            LogprobBehavior::Procedural {
                base_key,
                vocab,
                top_k,
                perturbation,
                ..
            } => {
                let mut out = Vec::with_capacity(forced_tokens.len());
                let mut prefix: VecDeque<String> = VecDeque::new();
                for (pos, tok) in forced_tokens.iter().enumerate() {
                    let prefix_vec: Vec<String> = prefix.iter().cloned().collect();
                    let probs = Self::base_dist(*base_key, vocab, &prefix_vec, pos, *perturbation);
                    let chosen = vocab.iter().position(|v| v == tok).ok_or_else(|| {
                        VrError::InvalidParameter(format!(
                            "token {tok:?} outside the simulated vocabulary"
                        ))
                    })?;
                    out.push(Self::dist_at(vocab, &probs, chosen, pos as u32, *top_k)?);
                    prefix.push_back(tok.clone());
                }
                Ok(out)
            }
        }
    }

    fn mechanism(&self) -> &'static str {
        "simulated"
    }
}
