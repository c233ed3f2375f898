//! The evaluation battery: per-round pass@1, unbiased pass@k, the
//! precision-coverage frontier, the score-vs-accuracy diagnostic, and the
//! matched-compute comparison of refinement against best-of-N resampling.
//!
//! All trace-level metrics are pure folds over persisted loops. Traces that
//! terminated in an error before producing any attempt carry no signal and
//! are excluded; callers learn how many were dropped where the contract
//! requires an audit.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::agents::{GeneratorAgent, VerifierAgent, VerifyMode};
use crate::engine::{calls_at_budget, round_series};
use crate::error::{Result, VrError};
use crate::protocol::AnswerChecker;
use crate::seed::{call_seed, ROLE_BON_SELECT, ROLE_BON_VERIFY, ROLE_GENERATOR};
use crate::types::{CallUsage, Problem, Verdict, VerdictMode, VRTrace};
use crate::SCHEMA_VERSION;

/// Unbiased pass@k estimator: the probability that at least one of `k`
/// samples drawn without replacement from `n` (of which `c` are correct)
/// is correct, `1 − C(n−c, k)/C(n, k)`, in overflow-safe product form.
pub fn pass_at_k(n: u64, c: u64, k: u64) -> Result<f64> {
    if c > n {
        return Err(VrError::InvalidParameter(format!(
            "correct count {c} exceeds sample count {n}"
        )));
    }
    if k < 1 || k > n {
        return Err(VrError::InvalidParameter(format!(
            "k must lie in [1, {n}], got {k}"
        )));
    }
    let misses = n - c;
    if misses < k {
        return Ok(1.0);
    }
    let mut all_miss = 1.0;
    for i in 0..k {
        all_miss *= (misses - i) as f64 / (n - i) as f64;
    }
    Ok(1.0 - all_miss)
}

fn usable(traces: &[VRTrace]) -> Vec<&VRTrace> {
    traces.iter().filter(|t| !t.rounds.is_empty()).collect()
}

/// Mean correctness of the loop-final attempt at refinement budget `r`.
pub fn round_pass1(traces: &[VRTrace], r: u32) -> Result<f64> {
    let traces = usable(traces);
    if traces.is_empty() {
        return Err(VrError::EmptyInput("no usable traces".into()));
    }
    let mut sum = 0.0;
    for t in &traces {
        let series = round_series(t, r)?;
        sum += f64::from(u8::from(series[r as usize]));
    }
    Ok(sum / traces.len() as f64)
}

/// [`round_pass1`] at every budget `0..=cap`.
pub fn round_pass1_series(traces: &[VRTrace], cap: u32) -> Result<Vec<(u32, f64)>> {
    let traces_ref = usable(traces);
    if traces_ref.is_empty() {
        return Err(VrError::EmptyInput("no usable traces".into()));
    }
    let mut sums = vec![0.0f64; cap as usize + 1];
    for t in &traces_ref {
        for (r, ok) in round_series(t, cap)?.into_iter().enumerate() {
            sums[r] += f64::from(u8::from(ok));
        }
    }
    Ok(sums
        .into_iter()
        .enumerate()
        .map(|(r, s)| (r as u32, s / traces_ref.len() as f64))
        .collect())
}

/// pass@k of the budget-`r` solutions, averaged over problems. Loops are
/// grouped by problem; every problem must carry the same number of loops
/// (the estimator needs one fixed `n`).
pub fn pass_at_k_per_round(traces: &[VRTrace], r: u32, k: u64) -> Result<f64> {
    let traces = usable(traces);
    if traces.is_empty() {
        return Err(VrError::EmptyInput("no usable traces".into()));
    }
    let mut groups: BTreeMap<&str, Vec<bool>> = BTreeMap::new();
    for t in &traces {
        let series = round_series(t, r)?;
        groups
            .entry(t.problem_id.as_str())
            .or_default()
            .push(series[r as usize]);
    }
    let n = groups.values().next().map(|v| v.len()).unwrap_or(0);
    if groups.values().any(|v| v.len() != n) {
        return Err(VrError::InvalidParameter(
            "loops per problem must be uniform for pass@k".into(),
        ));
    }
    let mut sum = 0.0;
    for outcomes in groups.values() {
        let c = outcomes.iter().filter(|&&ok| ok).count() as u64;
        sum += pass_at_k(n as u64, c, k)?;
    }
    Ok(sum / groups.len() as f64)
}

/// One point of the precision-coverage frontier at verification round `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub round: u32,
    /// Fraction of loops with an accepting verdict at some round ≤ t.
    pub coverage: f64,
    /// Fraction of those acceptances whose accepted solution is correct;
    /// absent while nothing has been accepted.
    pub precision: Option<f64>,
    pub accepted: usize,
    pub accepted_correct: usize,
    pub total: usize,
}

/// Precision and coverage of verifier acceptances for each verification
/// round `1..=cap`.
pub fn precision_coverage(traces: &[VRTrace], cap: u32) -> Result<Vec<FrontierPoint>> {
    let traces = usable(traces);
    if traces.is_empty() {
        return Err(VrError::EmptyInput("no usable traces".into()));
    }
    // Acceptance round (1-based) and correctness of the accepted attempt.
    let accepts: Vec<Option<(u32, bool)>> = traces
        .iter()
        .map(|t| {
            t.accepted_round()
                .map(|idx| (idx as u32 + 1, t.rounds[idx].attempt.is_correct()))
        })
        .collect();
    let mut out = Vec::with_capacity(cap as usize);
    for t in 1..=cap {
        let mut accepted = 0;
        let mut accepted_correct = 0;
        for a in &accepts {
            if let Some((v, correct)) = a {
                if *v <= t {
                    accepted += 1;
                    if *correct {
                        accepted_correct += 1;
                    }
                }
            }
        }
        out.push(FrontierPoint {
            round: t,
            coverage: accepted as f64 / traces.len() as f64,
            precision: (accepted > 0).then(|| accepted_correct as f64 / accepted as f64),
            accepted,
            accepted_correct,
            total: traces.len(),
        });
    }
    Ok(out)
}

/// One point of the reward-hacking diagnostic: the mean score the verifier
/// reported at verification round `v`, next to the actual pass@1 of the
/// attempts it was judging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreAccuracyPoint {
    pub round: u32,
    pub mean_score: f64,
    /// How many traces contributed a score at this round.
    pub scored: usize,
    /// Mean correctness of the judged (round v−1) attempts, carry-forward.
    pub pass1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreAccuracySeries {
    pub points: Vec<ScoreAccuracyPoint>,
    /// Audit: usable traces carrying no score anywhere, excluded from means.
    pub traces_without_scores: usize,
}

pub fn score_accuracy_series(traces: &[VRTrace]) -> Result<ScoreAccuracySeries> {
    let traces = usable(traces);
    if traces.is_empty() {
        return Err(VrError::EmptyInput("no usable traces".into()));
    }
    let traces_without_scores = traces
        .iter()
        .filter(|t| {
            t.rounds
                .iter()
                .all(|r| r.verifier_output.as_ref().and_then(|v| v.score).is_none())
        })
        .count();
    if traces_without_scores == traces.len() {
        return Err(VrError::EmptyInput("no trace carries verifier scores".into()));
    }
    let cap = traces.iter().map(|t| t.max_rounds).max().unwrap_or(0);
    let mut points = Vec::new();
    for v in 1..=cap {
        let judged_idx = (v - 1) as usize;
        let mut score_sum = 0.0;
        let mut scored = 0;
        let mut pass_sum = 0.0;
        for t in &traces {
            if let Some(s) = t
                .rounds
                .get(judged_idx)
                .and_then(|r| r.verifier_output.as_ref())
                .and_then(|o| o.score)
            {
                score_sum += s;
                scored += 1;
            }
            let series = round_series(t, v - 1)?;
            pass_sum += f64::from(u8::from(series[judged_idx]));
        }
        if scored > 0 {
            points.push(ScoreAccuracyPoint {
                round: v,
                mean_score: score_sum / scored as f64,
                scored,
                pass1: pass_sum / traces.len() as f64,
            });
        }
    }
    Ok(ScoreAccuracySeries {
        points,
        traces_without_scores,
    })
}

/// One best-of-N sample with its judgment; failed samples keep their error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BonSample {
    pub index: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// One persisted best-of-N run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BonRecord {
    pub schema_version: u32,
    pub problem_id: String,
    pub run_id: u64,
    pub seed: u64,
    pub n_requested: u32,
    pub samples: Vec<BonSample>,
    pub selected_index: u32,
    pub selected_correct: bool,
    /// Uniform selection among accepted samples, or among all completed
    /// samples when nothing was accepted.
    pub selected_among_accepted: bool,
    /// True when transport failures left fewer than `n_requested` samples.
    pub degraded: bool,
    /// Accounting for the calls behind the samples, keyed by sample index.
    #[serde(default)]
    pub usage: Vec<CallUsage>,
}

impl BonRecord {
    /// Generator calls that actually completed.
    pub fn completed_samples(&self) -> usize {
        self.samples.iter().filter(|s| s.correct.is_some()).count()
    }
}

/// Best-of-N: draw N independent round-0 samples, judge each once, then
/// select uniformly among accepted samples — or uniformly among all
/// completed samples when the verifier accepted none.
#[allow(clippy::too_many_arguments)]
pub fn run_bon(
    problem: &Problem,
    generator: &dyn GeneratorAgent,
    verifier: &dyn VerifierAgent,
    checker: &dyn AnswerChecker,
    n: u32,
    verdict_mode: VerdictMode,
    run_id: u64,
    base_seed: u64,
) -> Result<BonRecord> {
    if n < 1 {
        return Err(VrError::InvalidParameter("best-of-N needs N >= 1".into()));
    }
    problem.validate()?;
    let mut samples = Vec::with_capacity(n as usize);
    let mut usage = Vec::new();
    for i in 0..n {
        // Same role and round as a loop's generator calls: sample 0 of run l
        // is the identical draw to round 0 of loop l under a shared seed.
        let gen_seed = call_seed(base_seed, &problem.id, run_id, u64::from(i), ROLE_GENERATOR);
        let out = match generator.generate_initial(problem, gen_seed) {
            Ok(o) => o,
            Err(e) => {
                samples.push(BonSample {
                    index: i,
                    correct: None,
                    verdict: None,
                    error: Some(e.to_string()),
                });
                continue;
            }
        };
        usage.push(CallUsage {
            role: ROLE_GENERATOR.to_string(),
            round: i,
            prompt_tokens: out.prompt_tokens,
            completion_tokens: out.completion_tokens,
            wall_time_ms: out.wall_time_ms,
        });
        let (extracted, correct) = checker.check(&out.text, &problem.gold_answer);
        let verdict = if verdict_mode == VerdictMode::GroundTruth {
            if correct {
                Verdict::Accept
            } else {
                Verdict::Reject
            }
        } else {
            let seed = call_seed(base_seed, &problem.id, run_id, u64::from(i), ROLE_BON_VERIFY);
            let attempt = crate::types::Attempt {
                round_index: 0,
                text: out.text,
                extracted_answer: extracted,
                correct: Some(correct),
            };
            match verifier.verify(problem, &attempt, VerifyMode::Plain, seed) {
                Ok(o) => {
                    usage.push(CallUsage {
                        role: ROLE_BON_VERIFY.to_string(),
                        round: i,
                        prompt_tokens: o.prompt_tokens,
                        completion_tokens: o.completion_tokens,
                        wall_time_ms: o.wall_time_ms,
                    });
                    o.output.verdict
                }
                Err(e) => {
                    samples.push(BonSample {
                        index: i,
                        correct: None,
                        verdict: None,
                        error: Some(e.to_string()),
                    });
                    continue;
                }
            }
        };
        samples.push(BonSample {
            index: i,
            correct: Some(correct),
            verdict: Some(verdict),
            error: None,
        });
    }

    let completed: Vec<&BonSample> = samples.iter().filter(|s| s.correct.is_some()).collect();
    if completed.is_empty() {
        return Err(VrError::EmptyInput(format!(
            "best-of-N on {}/{run_id}: no sample completed",
            problem.id
        )));
    }
    let accepted: Vec<&BonSample> = completed
        .iter()
        .copied()
        .filter(|s| s.verdict == Some(Verdict::Accept))
        .collect();
    let (pool, selected_among_accepted) = if accepted.is_empty() {
        (&completed, false)
    } else {
        (&accepted, true)
    };
    let mut rng = call_seed(base_seed, &problem.id, run_id, 0, ROLE_BON_SELECT).rng();
    let pick = rand::Rng::random_range(&mut rng, 0..pool.len());
    let chosen = pool[pick];

    Ok(BonRecord {
        schema_version: SCHEMA_VERSION,
        problem_id: problem.id.clone(),
        run_id,
        seed: base_seed,
        n_requested: n,
        selected_index: chosen.index,
        selected_correct: chosen.correct == Some(true),
        selected_among_accepted,
        degraded: completed.len() < n as usize,
        samples,
        usage,
    })
}

/// One row of the matched-compute table: `r` refinement rounds against
/// best-of-(r+1) resampling, with the per-arm generator-call totals that
/// justify the "matched" in the name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedComputeRow {
    pub budget_rounds: u32,
    pub bon_n: u32,
    pub vr_pass1: f64,
    pub bon_pass1: f64,
    pub vr_gen_calls: u64,
    pub bon_gen_calls: u64,
    pub vr_loops: usize,
    pub bon_runs: usize,
}

/// Align refinement traces with best-of-N runs at matched budgets
/// (`N = r + 1`). `bon_by_n` must hold records for every requested budget.
pub fn matched_compute_compare(
    traces: &[VRTrace],
    bon_by_n: &BTreeMap<u32, Vec<BonRecord>>,
    budgets: &[u32],
) -> Result<Vec<MatchedComputeRow>> {
    let usable_traces = usable(traces);
    if usable_traces.is_empty() {
        return Err(VrError::EmptyInput("no usable traces".into()));
    }
    let mut rows = Vec::with_capacity(budgets.len());
    for &r in budgets {
        let n = r + 1;
        let runs = bon_by_n.get(&n).ok_or_else(|| {
            VrError::InvalidParameter(format!(
                "no best-of-N runs at N = {n} for budget r = {r}; arms are misaligned"
            ))
        })?;
        if runs.is_empty() {
            return Err(VrError::EmptyInput(format!("empty best-of-N set at N = {n}")));
        }
        if let Some(bad) = runs.iter().find(|b| b.n_requested != n) {
            return Err(VrError::InvalidParameter(format!(
                "record at N = {n} was run with N = {}; arms are misaligned",
                bad.n_requested
            )));
        }
        let mut vr_sum = 0.0;
        let mut vr_gen_calls = 0u64;
        for t in &usable_traces {
            let series = round_series(t, r)?;
            vr_sum += f64::from(u8::from(series[r as usize]));
            vr_gen_calls += calls_at_budget(t, r) as u64;
        }
        let bon_correct = runs.iter().filter(|b| b.selected_correct).count();
        let bon_gen_calls: u64 = runs.iter().map(|b| b.completed_samples() as u64).sum();
        rows.push(MatchedComputeRow {
            budget_rounds: r,
            bon_n: n,
            vr_pass1: vr_sum / usable_traces.len() as f64,
            bon_pass1: bon_correct as f64 / runs.len() as f64,
            vr_gen_calls,
            bon_gen_calls,
            vr_loops: usable_traces.len(),
            bon_runs: runs.len(),
        });
    }
    Ok(rows)
}

fn fmt6(x: f64) -> String {
    format!("{x:.6}")
}

/// `round,pass1` rows for external plotting.
pub fn round_pass1_csv(series: &[(u32, f64)]) -> String {
    let mut out = String::from("round,pass1\n");
    for (r, p) in series {
        out.push_str(&format!("{r},{}\n", fmt6(*p)));
    }
    out
}

/// `round,coverage,precision,accepted,accepted_correct,total`; the
/// precision cell is empty at zero coverage.
pub fn frontier_csv(points: &[FrontierPoint]) -> String {
    let mut out = String::from("round,coverage,precision,accepted,accepted_correct,total\n");
    for p in points {
        let precision = p.precision.map(fmt6).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.round,
            fmt6(p.coverage),
            precision,
            p.accepted,
            p.accepted_correct,
            p.total
        ));
    }
    out
}

/// `round,mean_score,scored,pass1`.
pub fn score_accuracy_csv(points: &[ScoreAccuracyPoint]) -> String {
    let mut out = String::from("round,mean_score,scored,pass1\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{}\n",
            p.round,
            fmt6(p.mean_score),
            p.scored,
            fmt6(p.pass1)
        ));
    }
    out
}

/// `budget_rounds,bon_n,vr_pass1,bon_pass1,vr_gen_calls,bon_gen_calls,vr_loops,bon_runs`.
pub fn matched_compute_csv(rows: &[MatchedComputeRow]) -> String {
    let mut out =
        String::from("budget_rounds,bon_n,vr_pass1,bon_pass1,vr_gen_calls,bon_gen_calls,vr_loops,bon_runs\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.budget_rounds,
            r.bon_n,
            fmt6(r.vr_pass1),
            fmt6(r.bon_pass1),
            r.vr_gen_calls,
            r.bon_gen_calls,
            r.vr_loops,
            r.bon_runs
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::sim::{SimGenerator, SimGeneratorParams, SimVerifier, SimVerifierParams, ScoreModel};
    use crate::engine::run_vr_loop;
    use crate::protocol::AnswerSpec;
    use crate::types::{Attempt, FeedbackMode, LoopConfig, RoundRecord, Termination, VerifierOutput};

    /// Brute-force oracle: enumerate all k-subsets of n samples (c correct)
    /// and count subsets containing at least one correct sample.
    fn pass_at_k_enumeration(n: u32, c: u32, k: u32) -> f64 {
        let mut total = 0u64;
        let mut hits = 0u64;
        for mask in 0u32..(1 << n) {
            if mask.count_ones() != k {
                continue;
            }
            total += 1;
            // The first c samples are the correct ones.
            if mask & ((1 << c) - 1) != 0 {
                hits += 1;
            }
        }
        hits as f64 / total as f64
    }

    #[test]
    fn pass_at_k_matches_enumeration_oracle() {
        for n in 1..=9u32 {
            for c in 0..=n {
                for k in 1..=n {
                    let est = pass_at_k(n.into(), c.into(), k.into()).unwrap();
                    let oracle = pass_at_k_enumeration(n, c, k);
                    assert!(
                        (est - oracle).abs() < 1e-12,
                        "n={n} c={c} k={k}: {est} vs {oracle}"
                    );
                }
            }
        }
    }

    #[test]
    fn pass_at_k_known_values_and_bounds() {
        assert_eq!(pass_at_k(32, 0, 7).unwrap(), 0.0);
        assert_eq!(pass_at_k(4, 4, 1).unwrap(), 1.0);
        assert!((pass_at_k(5, 2, 2).unwrap() - 0.7).abs() < 1e-12);
        // k = 1 is c/n exactly.
        assert!((pass_at_k(32, 6, 1).unwrap() - 6.0 / 32.0).abs() < 1e-15);
        assert!(pass_at_k(4, 5, 1).is_err());
        assert!(pass_at_k(4, 2, 0).is_err());
        assert!(pass_at_k(4, 2, 5).is_err());
    }

    #[test]
    fn pass_at_k_monotone_in_k_and_c() {
        for c in 0..=10u64 {
            let mut prev = 0.0;
            for k in 1..=10 {
                let v = pass_at_k(10, c, k).unwrap();
                assert!(v >= prev - 1e-15);
                prev = v;
            }
        }
        for k in 1..=10u64 {
            let mut prev = 0.0;
            for c in 0..=10 {
                let v = pass_at_k(10, c, k).unwrap();
                assert!(v >= prev - 1e-15);
                prev = v;
            }
        }
    }

    fn synthetic_trace(
        problem_id: &str,
        loop_id: u64,
        correct: &[bool],
        accepted: bool,
        max_rounds: u32,
        scores: Option<&[f64]>,
    ) -> VRTrace {
        let n = correct.len();
        let rounds: Vec<RoundRecord> = correct
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let is_last = i + 1 == n;
                let verdict = if is_last && accepted {
                    Some(Verdict::Accept)
                } else if !is_last || (!accepted && (i as u32) < max_rounds && n as u32 == max_rounds)
                {
                    Some(Verdict::Reject)
                } else {
                    None
                };
                RoundRecord {
                    attempt: Attempt {
                        round_index: i as u32,
                        text: String::new(),
                        extracted_answer: None,
                        correct: Some(c),
                    },
                    verifier_output: verdict.map(|v| VerifierOutput {
                        verdict: v,
                        feedback: None,
                        score: scores.and_then(|s| s.get(i).copied()),
                        raw: String::new(),
                        mode: VerdictMode::Model,
                    }),
                }
            })
            .collect();
        VRTrace {
            schema_version: SCHEMA_VERSION,
            problem_id: problem_id.into(),
            loop_id,
            seed: 0,
            max_rounds,
            verdict_mode: VerdictMode::Model,
            feedback_mode: FeedbackMode::Model,
            rounds,
            termination: if accepted {
                Termination::Accepted
            } else {
                Termination::MaxRounds
            },
            error: None,
            usage: vec![],
        }
    }

    #[test]
    fn round_pass1_hand_computed() {
        let traces = vec![
            synthetic_trace("p", 0, &[false, true], true, 3, None),
            synthetic_trace("p", 1, &[true], true, 3, None),
            synthetic_trace("p", 2, &[false, false, false, false], false, 3, None),
            synthetic_trace("p", 3, &[false, false, true, true], false, 3, None),
        ];
        // Budget 0: [F, T, F, F] → 0.25; budget 3: [T, T, F, T] → 0.75.
        assert!((round_pass1(&traces, 0).unwrap() - 0.25).abs() < 1e-12);
        assert!((round_pass1(&traces, 3).unwrap() - 0.75).abs() < 1e-12);
        let series = round_pass1_series(&traces, 3).unwrap();
        assert_eq!(series.len(), 4);
        assert!((series[2].1 - 0.75).abs() < 1e-12);
        assert!(round_pass1(&[], 0).is_err());
    }

    #[test]
    fn pass_at_k_per_round_identities() {
        let traces = vec![
            synthetic_trace("a", 0, &[true], true, 2, None),
            synthetic_trace("a", 1, &[false, false, false], false, 2, None),
            synthetic_trace("b", 0, &[false, true], true, 2, None),
            synthetic_trace("b", 1, &[false, false, false], false, 2, None),
        ];
        // k = 1 equals round_pass1 (both problems have n = 2 loops).
        let k1 = pass_at_k_per_round(&traces, 2, 1).unwrap();
        assert!((k1 - round_pass1(&traces, 2).unwrap()).abs() < 1e-12);
        // k = n: per problem, 1 iff any loop is correct at the budget.
        let kn = pass_at_k_per_round(&traces, 2, 2).unwrap();
        assert!((kn - 1.0).abs() < 1e-12);
        let k0 = pass_at_k_per_round(&traces, 0, 2).unwrap();
        // At budget 0: problem a has one correct loop, problem b none.
        assert!((k0 - 0.5).abs() < 1e-12);

        let mut nonuniform = traces.clone();
        nonuniform.push(synthetic_trace("a", 2, &[true], true, 2, None));
        assert!(pass_at_k_per_round(&nonuniform, 0, 1).is_err());
    }

    #[test]
    fn frontier_hand_enumerated() {
        let traces = vec![
            // Accepted at round 1, correct.
            synthetic_trace("p", 0, &[true], true, 3, None),
            // Accepted at round 2, incorrect accept.
            synthetic_trace("p", 1, &[false, false], true, 3, None),
            // Accepted at round 3, correct.
            synthetic_trace("p", 2, &[false, false, true], true, 3, None),
            // Never accepted.
            synthetic_trace("p", 3, &[false, false, false, false], false, 3, None),
            synthetic_trace("p", 4, &[false, true, false, false], false, 3, None),
            synthetic_trace("p", 5, &[true, true, true, true], false, 3, None),
        ];
        let frontier = precision_coverage(&traces, 3).unwrap();
        assert_eq!(frontier.len(), 3);
        assert!((frontier[0].coverage - 1.0 / 6.0).abs() < 1e-12);
        assert_eq!(frontier[0].precision, Some(1.0));
        assert!((frontier[1].coverage - 2.0 / 6.0).abs() < 1e-12);
        assert_eq!(frontier[1].precision, Some(0.5));
        assert!((frontier[2].coverage - 3.0 / 6.0).abs() < 1e-12);
        assert!((frontier[2].precision.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        // Coverage is non-decreasing.
        assert!(frontier.windows(2).all(|w| w[0].coverage <= w[1].coverage));
    }

    #[test]
    fn frontier_precision_absent_at_zero_coverage() {
        let traces = vec![synthetic_trace("p", 0, &[false, false], false, 1, None)];
        let frontier = precision_coverage(&traces, 1).unwrap();
        assert_eq!(frontier[0].accepted, 0);
        assert_eq!(frontier[0].precision, None);
    }

    #[test]
    fn score_series_extracts_per_round_means() {
        let traces = vec![
            synthetic_trace("p", 0, &[false, false, false], false, 2, Some(&[0.2, 0.4, 0.9])),
            synthetic_trace("p", 1, &[true, true, true], false, 2, Some(&[0.4, 0.6, 0.9])),
        ];
        let series = score_accuracy_series(&traces).unwrap();
        assert_eq!(series.traces_without_scores, 0);
        assert_eq!(series.points.len(), 2);
        assert_eq!(series.points[0].round, 1);
        assert!((series.points[0].mean_score - 0.3).abs() < 1e-12);
        assert!((series.points[0].pass1 - 0.5).abs() < 1e-12);
        assert!((series.points[1].mean_score - 0.5).abs() < 1e-12);
    }

    #[test]
    fn score_series_requires_some_scores() {
        let unscored = vec![synthetic_trace("p", 0, &[true], true, 1, None)];
        assert!(score_accuracy_series(&unscored).is_err());
        let mixed = vec![
            synthetic_trace("p", 0, &[true], true, 1, None),
            synthetic_trace("p", 1, &[false, false], false, 1, Some(&[0.5, 0.5])),
        ];
        let series = score_accuracy_series(&mixed).unwrap();
        assert_eq!(series.traces_without_scores, 1);
    }

    #[test]
    fn score_drift_produces_rising_scores_over_flat_accuracy() {
        let generator = SimGenerator::new(SimGeneratorParams {
            base_solve_prob: 0.3,
            uplift_informative: 0.0,
            uplift_generic: 0.0,
            ..SimGeneratorParams::default()
        })
        .unwrap();
        let verifier = SimVerifier::new(
            SimVerifierParams {
                tpr: 0.0,
                fpr: 0.0,
                score_model: ScoreModel::Drift {
                    base: 0.1,
                    per_round: 0.04,
                },
                ..SimVerifierParams::default()
            },
            None,
        );
        let config = LoopConfig {
            max_rounds: 6,
            ..LoopConfig::default()
        };
        let problem = Problem::new("m-drift", "s", "42");
        let traces: Vec<VRTrace> = (0..40)
            .map(|l| {
                run_vr_loop(&problem, &generator, &verifier, &AnswerSpec::default(), &config, l, 5)
                    .unwrap()
            })
            .collect();
        let series = score_accuracy_series(&traces).unwrap();
        assert_eq!(series.points.len(), 6);
        assert!(series
            .points
            .windows(2)
            .all(|w| w[1].mean_score > w[0].mean_score));
    }

    fn oracle_verifier() -> SimVerifier {
        SimVerifier::new(SimVerifierParams::oracle(), None)
    }

    #[test]
    fn bon_selects_correct_under_oracle() {
        let problem = Problem::new("m-bon", "s", "42");
        let generator = SimGenerator::new(SimGeneratorParams {
            base_solve_prob: 0.5,
            ..SimGeneratorParams::default()
        })
        .unwrap();
        for run in 0..20 {
            let rec = run_bon(
                &problem,
                &generator,
                &oracle_verifier(),
                &AnswerSpec::default(),
                8,
                VerdictMode::Model,
                run,
                11,
            )
            .unwrap();
            let any_correct = rec.samples.iter().any(|s| s.correct == Some(true));
            if any_correct {
                assert!(rec.selected_correct, "oracle must pick a correct sample");
                assert!(rec.selected_among_accepted);
            }
            assert!(!rec.degraded);
        }
    }

    #[test]
    fn bon_all_rejected_falls_back_uniform_and_reproducible() {
        let problem = Problem::new("m-bon2", "s", "42");
        let generator = SimGenerator::new(SimGeneratorParams {
            base_solve_prob: 0.4,
            ..SimGeneratorParams::default()
        })
        .unwrap();
        let reject_all = SimVerifier::new(
            SimVerifierParams {
                tpr: 0.0,
                fpr: 0.0,
                ..SimVerifierParams::default()
            },
            None,
        );
        let a = run_bon(&problem, &generator, &reject_all, &AnswerSpec::default(), 6, VerdictMode::Model, 3, 7).unwrap();
        let b = run_bon(&problem, &generator, &reject_all, &AnswerSpec::default(), 6, VerdictMode::Model, 3, 7).unwrap();
        assert_eq!(a, b);
        assert!(!a.selected_among_accepted);
    }

    #[test]
    fn bon_n1_returns_the_single_sample() {
        let problem = Problem::new("m-bon3", "s", "42");
        let generator = SimGenerator::new(SimGeneratorParams {
            base_solve_prob: 0.0,
            ..SimGeneratorParams::default()
        })
        .unwrap();
        let rec = run_bon(
            &problem,
            &generator,
            &oracle_verifier(),
            &AnswerSpec::default(),
            1,
            VerdictMode::Model,
            0,
            1,
        )
        .unwrap();
        assert_eq!(rec.samples.len(), 1);
        assert_eq!(rec.selected_index, 0);
        assert!(!rec.selected_correct);
    }

    #[test]
    fn matched_budget_zero_equals_one_sample_bon_under_shared_seed() {
        let problem = Problem::new("m-match", "s", "42");
        let generator = SimGenerator::new(SimGeneratorParams {
            base_solve_prob: 0.35,
            ..SimGeneratorParams::default()
        })
        .unwrap();
        let reject_all = SimVerifier::new(
            SimVerifierParams {
                tpr: 0.0,
                fpr: 0.0,
                ..SimVerifierParams::default()
            },
            None,
        );
        let config = LoopConfig {
            max_rounds: 2,
            ..LoopConfig::default()
        };
        let base_seed = 31;
        let loops = 64;
        let traces: Vec<VRTrace> = (0..loops)
            .map(|l| {
                run_vr_loop(&problem, &generator, &reject_all, &AnswerSpec::default(), &config, l, base_seed)
                    .unwrap()
            })
            .collect();
        let bons: Vec<BonRecord> = (0..loops)
            .map(|l| {
                run_bon(&problem, &generator, &reject_all, &AnswerSpec::default(), 1, VerdictMode::Model, l, base_seed)
                    .unwrap()
            })
            .collect();
        let by_n: BTreeMap<u32, Vec<BonRecord>> = [(1u32, bons)].into_iter().collect();
        let rows = matched_compute_compare(&traces, &by_n, &[0]).unwrap();
        // Sample 0 of run l is the same draw as round 0 of loop l.
        assert_eq!(rows[0].vr_pass1, rows[0].bon_pass1);
        assert_eq!(rows[0].vr_gen_calls, rows[0].bon_gen_calls);
    }

    #[test]
    fn matched_compare_rejects_misaligned_budgets() {
        let traces = vec![synthetic_trace("p", 0, &[false, false], false, 1, None)];
        let by_n: BTreeMap<u32, Vec<BonRecord>> = BTreeMap::new();
        assert!(matched_compute_compare(&traces, &by_n, &[0]).is_err());
    }

    #[test]
    fn csv_emission_formats() {
        let series = vec![(0u32, 0.25f64), (1, 0.5)];
        let csv = round_pass1_csv(&series);
        assert_eq!(csv, "round,pass1\n0,0.250000\n1,0.500000\n");

        let frontier = vec![FrontierPoint {
            round: 1,
            coverage: 0.0,
            precision: None,
            accepted: 0,
            accepted_correct: 0,
            total: 4,
        }];
        let csv = frontier_csv(&frontier);
        assert!(csv.contains("1,0.000000,,0,0,4\n"));

        let rows = vec![MatchedComputeRow {
            budget_rounds: 0,
            bon_n: 1,
            vr_pass1: 1.0 / 3.0,
            bon_pass1: 0.5,
            vr_gen_calls: 3,
            bon_gen_calls: 3,
            vr_loops: 3,
            bon_runs: 3,
        }];
        let csv = matched_compute_csv(&rows);
        assert!(csv.contains("0,1,0.333333,0.500000,3,3,3,3\n"));
    }
}
