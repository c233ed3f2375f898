//! Verifier-training signal: on-policy distillation records and verdict
//! rewards.
//!
//! A distillation record captures, for one (problem, attempt) pair, a
//! response sampled from the *student* verifier together with the
//! reference-conditioned *teacher*'s distribution over the same token
//! prefixes. Sequence-level divergence is estimated as the arithmetic mean
//! of per-position token divergences — the only tractable estimator over
//! serving APIs, which expose at most top-K logprobs per position.
//!
//! Two divergence families are implemented. The default is Jensen-Shannon;
//! the α-family (at α = 0.5, the squared-Hellinger form `4(1 − Σ√(pq))`) is
//! selectable. The kind used is recorded on every record so downstream
//! training never has to guess.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::{LogprobAgent, TokenDist};
use crate::error::{Result, VrError};
use crate::jsonl;
use crate::protocol::{render_prompt, TemplateId, TemplateSet, SLOT_PRIOR_SOLUTION, SLOT_REFERENCE_SOLUTION, SLOT_STATEMENT};
use crate::seed::{call_seed, ROLE_LOGPROB_STUDENT, ROLE_LOGPROB_TEACHER};
use crate::types::{Attempt, Message, Problem, Verdict, VRTrace};
use crate::SCHEMA_VERSION;

/// Probability floor applied during alignment, before any logarithm.
pub const EPS_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceKind {
    AlphaFamily,
    #[default]
    JensenShannon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StvConfig {
    /// Order of the α-family divergence; only read when `divergence_kind`
    /// is `alpha_family`.
    pub alpha: f64,
    pub divergence_kind: DivergenceKind,
    /// Weight of the verdict-reward term in the combined objective value.
    pub lambda: f64,
    /// Student responses sampled per (problem, attempt) pair.
    pub samples_per_pair: u32,
}

impl Default for StvConfig {
    fn default() -> Self {
        StvConfig {
            alpha: 0.5,
            divergence_kind: DivergenceKind::JensenShannon,
            lambda: 1.0,
            samples_per_pair: 1,
        }
    }
}

impl StvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(VrError::InvalidParameter(format!(
                "alpha must lie strictly inside (0,1), got {}",
                self.alpha
            )));
        }
        if !(self.lambda >= 0.0) {
            return Err(VrError::InvalidParameter(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if self.samples_per_pair < 1 {
            return Err(VrError::InvalidParameter(
                "samples_per_pair must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Two truncated distributions re-expressed over a common support: the
/// union of both sides' listed tokens plus one shared tail atom (the last
/// entry of each probability vector).
#[derive(Debug, Clone, PartialEq)]
pub struct Aligned {
    pub support: Vec<String>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

/// Align two truncated distributions onto the union of their listed tokens
/// plus a shared tail atom. A token listed on only one side gets an ε-floor
/// probability on the other, drawn out of that side's tail mass; both
/// vectors are then renormalized to sum to one.
pub fn align_distributions(p: &TokenDist, q: &TokenDist) -> Result<Aligned> {
    p.validate()?;
    q.validate()?;

    let p_listed = p.listed();
    let q_listed = q.listed();
    let mut support: Vec<String> = p_listed.iter().map(|(t, _)| (*t).to_string()).collect();
    for (t, _) in &q_listed {
        if !support.iter().any(|s| s == t) {
            support.push((*t).to_string());
        }
    }

    let expand = |listed: &[(&str, f64)], tail: f64| -> Vec<f64> {
        let mut out: Vec<f64> = Vec::with_capacity(support.len() + 1);
        let mut borrowed = 0.0;
        for t in &support {
            match listed.iter().find(|(lt, _)| lt == t) {
                Some((_, prob)) => out.push(prob.max(EPS_FLOOR)),
                None => {
                    out.push(EPS_FLOOR);
                    borrowed += EPS_FLOOR;
                }
            }
        }
        out.push((tail - borrowed).max(EPS_FLOOR));
        let total: f64 = out.iter().sum();
        out.iter().map(|x| x / total).collect()
    };

    let aligned = Aligned {
        p: expand(&p_listed, p.tail_mass),
        q: expand(&q_listed, q.tail_mass),
        support,
    };
    debug_assert!((aligned.p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    debug_assert!((aligned.q.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    Ok(aligned)
}

fn check_pair(p: &[f64], q: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(VrError::EmptyInput("divergence of empty distributions".into()));
    }
    if p.len() != q.len() {
        return Err(VrError::InvalidParameter(format!(
            "distribution lengths differ: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    Ok(())
}

/// α-family divergence `D_α(p‖q) = (1 − Σᵢ pᵢ^α qᵢ^{1−α}) / (α(1−α))` for
/// α strictly inside (0,1). At α = 0.5 this reduces to `4(1 − Σᵢ √(pᵢqᵢ))`,
/// which is symmetric; other orders are not.
pub fn alpha_divergence(p: &[f64], q: &[f64], alpha: f64) -> Result<f64> {
    check_pair(p, q)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(VrError::InvalidParameter(format!(
            "alpha must lie strictly inside (0,1), got {alpha}"
        )));
    }
    let sum: f64 = p
        .iter()
        .zip(q)
        .map(|(&pi, &qi)| pi.powf(alpha) * qi.powf(1.0 - alpha))
        .sum();
    Ok(((1.0 - sum) / (alpha * (1.0 - alpha))).max(0.0))
}

/// Jensen-Shannon divergence `½KL(p‖m) + ½KL(q‖m)` with `m = ½(p+q)`,
/// natural logarithm; symmetric, bounded by ln 2.
pub fn jensen_shannon(p: &[f64], q: &[f64]) -> Result<f64> {
    check_pair(p, q)?;
    let mut acc = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        let m = 0.5 * (pi + qi);
        if pi > 0.0 {
            acc += 0.5 * pi * (pi / m).ln();
        }
        if qi > 0.0 {
            acc += 0.5 * qi * (qi / m).ln();
        }
    }
    Ok(acc.max(0.0))
}

/// Dispatch on the configured divergence family.
pub fn divergence(p: &[f64], q: &[f64], config: &StvConfig) -> Result<f64> {
    match config.divergence_kind {
        DivergenceKind::JensenShannon => jensen_shannon(p, q),
        DivergenceKind::AlphaFamily => alpha_divergence(p, q, config.alpha),
    }
}

/// One scored position: the student's and teacher's truncated distributions
/// and their divergence on the aligned support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpdPosition {
    pub student: TokenDist,
    pub teacher: TokenDist,
    pub divergence: f64,
}

/// One distillation target: a student-sampled verifier response scored
/// prefix-by-prefix under the reference-conditioned teacher.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpdRecord {
    pub schema_version: u32,
    pub problem_id: String,
    pub loop_id: u64,
    /// Round index of the attempt being verified.
    pub attempt_round: u32,
    /// Text of that attempt, preserved so a trainer can rebuild the prompt.
    pub attempt_text: String,
    /// Index among `samples_per_pair` student samples for this pair.
    pub sample_index: u32,
    /// Tokens of the student-sampled response, in sampled order. Provenance:
    /// these were drawn from the student, never the teacher.
    pub student_tokens: Vec<String>,
    pub sampled_by: String,
    pub divergence_kind: DivergenceKind,
    pub alpha: f64,
    pub positions: Vec<OpdPosition>,
    /// Arithmetic mean of the per-position divergences.
    pub mean_divergence: f64,
}

impl OpdRecord {
    pub fn validate(&self) -> Result<()> {
        if self.positions.is_empty() {
            return Err(VrError::InvalidParameter(format!(
                "record {}/{}: no scored positions",
                self.problem_id, self.loop_id
            )));
        }
        if self.positions.len() != self.student_tokens.len() {
            return Err(VrError::InvalidParameter(format!(
                "record {}/{}: {} positions for {} tokens",
                self.problem_id,
                self.loop_id,
                self.positions.len(),
                self.student_tokens.len()
            )));
        }
        let mut sum = 0.0;
        for pos in &self.positions {
            if pos.divergence < 0.0 {
                return Err(VrError::InvalidParameter(format!(
                    "record {}/{}: negative divergence {}",
                    self.problem_id, self.loop_id, pos.divergence
                )));
            }
            sum += pos.divergence;
        }
        let mean = sum / self.positions.len() as f64;
        if (mean - self.mean_divergence).abs() > 1e-9 {
            return Err(VrError::InvalidParameter(format!(
                "record {}/{}: stored mean {} != recomputed {}",
                self.problem_id, self.loop_id, self.mean_divergence, mean
            )));
        }
        Ok(())
    }
}

/// One (problem, attempt) pair drawn from generator rollouts.
#[derive(Debug, Clone)]
pub struct OpdPair {
    pub problem: Problem,
    pub attempt: Attempt,
    pub loop_id: u64,
}

impl OpdPair {
    /// Every judged attempt of a trace becomes one pair.
    pub fn from_trace(problem: &Problem, trace: &VRTrace) -> Vec<OpdPair> {
        trace
            .rounds
            .iter()
            .filter(|r| r.verifier_output.is_some())
            .map(|r| OpdPair {
                problem: problem.clone(),
                attempt: r.attempt.clone(),
                loop_id: trace.loop_id,
            })
            .collect()
    }
}

/// Audit entry for a pair that produced no record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpdSkip {
    pub problem_id: String,
    pub loop_id: u64,
    pub attempt_round: u32,
    pub sample_index: u32,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct OpdBuildReport {
    pub records: Vec<OpdRecord>,
    pub skipped: Vec<OpdSkip>,
}

/// Build distillation records: sample responses from the student on the
/// plain verifier prompt, score the same tokens under the teacher prompt
/// (which carries the reference solution), align per position, and compute
/// divergences.
///
/// Capability problems fail fast via the agents' startup probes; transport
/// failures on individual pairs skip that record with an audit entry.
pub fn build_opd_records(
    student: &dyn LogprobAgent,
    teacher: &dyn LogprobAgent,
    templates: &TemplateSet,
    pairs: &[OpdPair],
    config: &StvConfig,
    base_seed: u64,
) -> Result<OpdBuildReport> {
    config.validate()?;
    student.probe()?;
    teacher.probe()?;

    let mut report = OpdBuildReport::default();
    for pair in pairs {
        for sample in 0..config.samples_per_pair {
            match build_one_record(student, teacher, templates, pair, sample, config, base_seed) {
                Ok(record) => report.records.push(record),
                Err(e @ VrError::Capability(_)) => return Err(e),
                Err(e) => report.skipped.push(OpdSkip {
                    problem_id: pair.problem.id.clone(),
                    loop_id: pair.loop_id,
                    attempt_round: pair.attempt.round_index,
                    sample_index: sample,
                    reason: e.to_string(),
                }),
            }
        }
    }
    Ok(report)
}

fn build_one_record(
    student: &dyn LogprobAgent,
    teacher: &dyn LogprobAgent,
    templates: &TemplateSet,
    pair: &OpdPair,
    sample: u32,
    config: &StvConfig,
    base_seed: u64,
) -> Result<OpdRecord> {
    let problem = &pair.problem;
    if problem.gold_answer.is_empty() {
        return Err(VrError::InvalidParameter(format!(
            "problem {}: teacher scoring requires a reference solution",
            problem.id
        )));
    }

    let student_messages = render_prompt(
        templates,
        TemplateId::VerifierPlain,
        &[
            (SLOT_STATEMENT, problem.statement.as_str()),
            (SLOT_PRIOR_SOLUTION, pair.attempt.text.as_str()),
        ]
        .into_iter()
        .collect(),
    )?;
    let teacher_messages = render_prompt(
        templates,
        TemplateId::VerifierTeacher,
        &[
            (SLOT_STATEMENT, problem.statement.as_str()),
            (SLOT_PRIOR_SOLUTION, pair.attempt.text.as_str()),
            (SLOT_REFERENCE_SOLUTION, problem.gold_answer.as_str()),
        ]
        .into_iter()
        .collect(),
    )?;

    let round = u64::from(pair.attempt.round_index);
    let student_role = format!("{ROLE_LOGPROB_STUDENT}/{sample}");
    let teacher_role = format!("{ROLE_LOGPROB_TEACHER}/{sample}");
    let completion = student.complete_with_logprobs(
        &student_messages,
        call_seed(base_seed, &problem.id, pair.loop_id, round, &student_role),
    )?;
    if completion.tokens.is_empty() {
        return Err(VrError::EmptyInput(
            "student sampled an empty response".into(),
        ));
    }
    if completion.dists.len() != completion.tokens.len() {
        return Err(VrError::InvalidParameter(format!(
            "student returned {} distributions for {} tokens",
            completion.dists.len(),
            completion.tokens.len()
        )));
    }

    let teacher_dists = teacher.score_tokens(
        &teacher_messages,
        &completion.tokens,
        call_seed(base_seed, &problem.id, pair.loop_id, round, &teacher_role),
    )?;
    if teacher_dists.len() != completion.tokens.len() {
        return Err(VrError::InvalidParameter(format!(
            "teacher returned {} distributions for {} tokens",
            teacher_dists.len(),
            completion.tokens.len()
        )));
    }

    let mut positions = Vec::with_capacity(completion.tokens.len());
    let mut sum = 0.0;
    for (s_dist, t_dist) in completion.dists.iter().zip(&teacher_dists) {
        let aligned = align_distributions(s_dist, t_dist)?;
        let d = divergence(&aligned.p, &aligned.q, config)?;
        sum += d;
        positions.push(OpdPosition {
            student: s_dist.clone(),
            teacher: t_dist.clone(),
            divergence: d,
        });
    }
    let mean_divergence = sum / positions.len() as f64;

    let record = OpdRecord {
        schema_version: SCHEMA_VERSION,
        problem_id: problem.id.clone(),
        loop_id: pair.loop_id,
        attempt_round: pair.attempt.round_index,
        attempt_text: pair.attempt.text.clone(),
        sample_index: sample,
        student_tokens: completion.tokens,
        sampled_by: "student".into(),
        divergence_kind: config.divergence_kind,
        alpha: config.alpha,
        positions,
        mean_divergence,
    };
    record.validate()?;
    Ok(record)
}

/// Indicator reward for a verdict against ground truth: 1 iff the verifier
/// accepted a correct attempt or rejected an incorrect one (the XNOR of
/// accept and correct).
pub fn verdict_reward(verdict: Verdict, attempt_correct: bool) -> u8 {
    u8::from((verdict == Verdict::Accept) == attempt_correct)
}

/// One verdict-RL training row: the plain verifier prompt, the verdict the
/// verifier gave, and its indicator reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub schema_version: u32,
    pub problem_id: String,
    pub loop_id: u64,
    pub attempt_round: u32,
    pub prompt: Vec<Message>,
    pub verdict: Verdict,
    pub attempt_correct: bool,
    pub reward: u8,
}

/// Extract a verdict record from every judged round of the given traces.
/// Rounds lacking a judgment or a graded attempt are skipped.
pub fn build_verdict_records(
    problems: &[Problem],
    traces: &[VRTrace],
    templates: &TemplateSet,
) -> Result<Vec<VerdictRecord>> {
    let mut out = Vec::new();
    for trace in traces {
        let problem = problems
            .iter()
            .find(|p| p.id == trace.problem_id)
            .ok_or_else(|| {
                VrError::InvalidParameter(format!(
                    "trace references unknown problem {}",
                    trace.problem_id
                ))
            })?;
        for round in &trace.rounds {
            let (Some(output), Some(correct)) = (&round.verifier_output, round.attempt.correct)
            else {
                continue;
            };
            let prompt = render_prompt(
                templates,
                TemplateId::VerifierPlain,
                &[
                    (SLOT_STATEMENT, problem.statement.as_str()),
                    (SLOT_PRIOR_SOLUTION, round.attempt.text.as_str()),
                ]
                .into_iter()
                .collect(),
            )?;
            out.push(VerdictRecord {
                schema_version: SCHEMA_VERSION,
                problem_id: trace.problem_id.clone(),
                loop_id: trace.loop_id,
                attempt_round: round.attempt.round_index,
                prompt,
                verdict: output.verdict,
                attempt_correct: correct,
                reward: verdict_reward(output.verdict, correct),
            });
        }
    }
    Ok(out)
}

/// Monitoring values of the combined objective; no gradients are computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StvLossReport {
    pub opd_records: usize,
    pub verdict_records: usize,
    pub lambda: f64,
    /// Mean over records of the per-record mean divergence.
    pub l_opd: f64,
    /// Negative mean verdict reward: reported in loss convention, so
    /// lower is better and a perfect verifier scores −1.
    pub l_rl: f64,
    /// `l_opd + lambda * l_rl`.
    pub total: f64,
}

pub fn stv_loss_report(
    opd: &[OpdRecord],
    verdicts: &[VerdictRecord],
    lambda: f64,
) -> Result<StvLossReport> {
    if opd.is_empty() {
        return Err(VrError::EmptyInput("no distillation records".into()));
    }
    if verdicts.is_empty() {
        return Err(VrError::EmptyInput("no verdict records".into()));
    }
    if !(lambda >= 0.0) {
        return Err(VrError::InvalidParameter(format!(
            "lambda must be >= 0, got {lambda}"
        )));
    }
    let l_opd = opd.iter().map(|r| r.mean_divergence).sum::<f64>() / opd.len() as f64;
    let mean_reward =
        verdicts.iter().map(|r| f64::from(r.reward)).sum::<f64>() / verdicts.len() as f64;
    let l_rl = -mean_reward;
    Ok(StvLossReport {
        opd_records: opd.len(),
        verdict_records: verdicts.len(),
        lambda,
        l_opd,
        l_rl,
        total: l_opd + lambda * l_rl,
    })
}

pub fn export_opd_dataset(records: &[OpdRecord], path: &Path) -> Result<()> {
    for r in records {
        r.validate()?;
    }
    jsonl::write_dataset(path, "opd", records)
}

pub fn import_opd_dataset(path: &Path) -> Result<Vec<OpdRecord>> {
    let records: Vec<OpdRecord> = jsonl::read_dataset(path)?;
    for r in &records {
        r.validate()?;
    }
    Ok(records)
}

pub fn export_verdict_dataset(records: &[VerdictRecord], path: &Path) -> Result<()> {
    jsonl::write_dataset(path, "verdict", records)
}

pub fn import_verdict_dataset(path: &Path) -> Result<Vec<VerdictRecord>> {
    jsonl::read_dataset(path)
}
