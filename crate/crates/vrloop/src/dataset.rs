//! Difficulty binning and embedding-based test-set decontamination.
//!
//! Problems are binned by pass@1 estimated from independent round-0
//! rollouts; the bin boundaries are checked on exact integer ratios so a
//! 6/32-vs-7/32 boundary case can never fall to float rounding. Test
//! problems too similar to any training problem (cosine similarity strictly
//! above the threshold) are removed, with an audit trail naming the nearest
//! neighbor.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::http::HttpClient;
use crate::agents::GeneratorAgent;
use crate::error::{Result, VrError};
use crate::jsonl;
use crate::protocol::AnswerChecker;
use crate::seed::{call_seed, ROLE_ROLLOUT};
use crate::types::{Bin, Pass1Estimate, Problem};
use crate::SCHEMA_VERSION;

/// One problem's embedding, tagged with its provider for cache keying.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub problem_id: String,
    pub provider: String,
    pub dim: usize,
    pub vector: Vec<f64>,
}

impl EmbeddingVector {
    pub fn validate(&self) -> Result<()> {
        if self.vector.len() != self.dim {
            return Err(VrError::InvalidParameter(format!(
                "embedding {}: vector length {} != declared dim {}",
                self.problem_id,
                self.vector.len(),
                self.dim
            )));
        }
        let norm_sq: f64 = self.vector.iter().map(|x| x * x).sum();
        if norm_sq <= 0.0 {
            return Err(VrError::InvalidParameter(format!(
                "embedding {}: zero norm",
                self.problem_id
            )));
        }
        Ok(())
    }
}

/// Outcome of one round-0 rollout during pass@1 estimation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub problem_id: String,
    pub rollout_index: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Pass@1 estimation result with its per-rollout audit trail. The estimate
/// is taken over completed rollouts only; `complete` says whether all
/// requested rollouts finished.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pass1Report {
    pub schema_version: u32,
    pub problem_id: String,
    pub requested: u32,
    pub completed: u32,
    pub correct: u32,
    pub complete: bool,
    pub rollouts: Vec<RolloutRecord>,
}

impl Pass1Report {
    pub fn estimate(&self) -> Pass1Estimate {
        Pass1Estimate {
            correct: self.correct,
            total: self.completed,
        }
    }
}

/// Estimate pass@1 from `n` independent round-0 generations. Transport
/// failures become per-rollout error records rather than aborting the
/// estimate.
pub fn estimate_pass1(
    problem: &Problem,
    generator: &dyn GeneratorAgent,
    checker: &dyn AnswerChecker,
    n: u32,
    base_seed: u64,
) -> Result<Pass1Report> {
    if n < 1 {
        return Err(VrError::InvalidParameter("rollout count must be >= 1".into()));
    }
    problem.validate()?;
    let mut rollouts = Vec::with_capacity(n as usize);
    let mut completed = 0;
    let mut correct = 0;
    for i in 0..n {
        let seed = call_seed(base_seed, &problem.id, u64::from(i), 0, ROLE_ROLLOUT);
        match generator.generate_initial(problem, seed) {
            Ok(out) => {
                let (_, ok) = checker.check(&out.text, &problem.gold_answer);
                completed += 1;
                if ok {
                    correct += 1;
                }
                rollouts.push(RolloutRecord {
                    problem_id: problem.id.clone(),
                    rollout_index: i,
                    correct: Some(ok),
                    error: None,
                });
            }
            Err(e) => rollouts.push(RolloutRecord {
                problem_id: problem.id.clone(),
                rollout_index: i,
                correct: None,
                error: Some(e.to_string()),
            }),
        }
    }
    Ok(Pass1Report {
        schema_version: SCHEMA_VERSION,
        problem_id: problem.id.clone(),
        requested: n,
        completed,
        correct,
        complete: completed == n,
        rollouts,
    })
}

/// Bin one exact pass@1 ratio. The boundaries are the integer comparisons
/// `c = 0` (Hardest) and `5c < n` (Hard, i.e. c/n < 0.2 exactly).
pub fn bin_estimate(estimate: Pass1Estimate) -> Result<Bin> {
    if estimate.total == 0 {
        return Err(VrError::InvalidParameter(
            "cannot bin an estimate with zero completed rollouts".into(),
        ));
    }
    if estimate.correct > estimate.total {
        return Err(VrError::InvalidParameter(format!(
            "estimate {}/{} exceeds 1",
            estimate.correct, estimate.total
        )));
    }
    Ok(if estimate.correct == 0 {
        Bin::Hardest
    } else if 5 * u64::from(estimate.correct) < u64::from(estimate.total) {
        Bin::Hard
    } else {
        Bin::Excluded
    })
}

/// Bin every problem; total partition over the input map.
pub fn bin_problems(
    estimates: &BTreeMap<String, Pass1Estimate>,
) -> Result<BTreeMap<String, Bin>> {
    estimates
        .iter()
        .map(|(id, e)| Ok((id.clone(), bin_estimate(*e)?)))
        .collect()
}

/// Cosine similarity `dot(u,v) / (‖u‖‖v‖)`, clamped to [−1, 1] against
/// floating-point drift.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(VrError::InvalidParameter(format!(
            "dimension mismatch: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    if u.is_empty() {
        return Err(VrError::EmptyInput("cosine of empty vectors".into()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|b| b * b).sum::<f64>().sqrt();
    if nu <= 0.0 || nv <= 0.0 {
        return Err(VrError::InvalidParameter("cosine of a zero-norm vector".into()));
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Audit row for one removed test problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DedupRemoval {
    pub problem_id: String,
    pub nearest_train_id: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DedupReport {
    pub kept: Vec<Problem>,
    pub removed: Vec<DedupRemoval>,
    pub threshold: f64,
}

/// Remove test problems whose cosine similarity to *any* training problem
/// strictly exceeds `threshold`. Every problem on both sides must have an
/// embedding; missing ones are a hard error listing the offending ids.
pub fn dedup_test_set(
    test: &[Problem],
    train: &[Problem],
    embeddings: &BTreeMap<String, EmbeddingVector>,
    threshold: f64,
) -> Result<DedupReport> {
    let mut missing: Vec<String> = Vec::new();
    for p in test.iter().chain(train) {
        if !embeddings.contains_key(&p.id) {
            missing.push(p.id.clone());
        }
    }
    if !missing.is_empty() {
        missing.sort();
        missing.dedup();
        return Err(VrError::MissingEmbeddings {
            count: missing.len(),
            ids: missing,
        });
    }
    let dims: Vec<usize> = embeddings.values().map(|e| e.dim).collect();
    if let Some(&first) = dims.first() {
        if dims.iter().any(|&d| d != first) {
            return Err(VrError::InvalidParameter(
                "embeddings have mixed dimensions".into(),
            ));
        }
    }

    let mut kept = Vec::new();
    let mut removed = Vec::new();
    for t in test {
        let tv = &embeddings[&t.id];
        tv.validate()?;
        let mut nearest: Option<(f64, &str)> = None;
        for s in train {
            let sv = &embeddings[&s.id];
            sv.validate()?;
            let sim = cosine_similarity(&tv.vector, &sv.vector)?;
            if nearest.map(|(best, _)| sim > best).unwrap_or(true) {
                nearest = Some((sim, &s.id));
            }
        }
        match nearest {
            Some((sim, train_id)) if sim > threshold => removed.push(DedupRemoval {
                problem_id: t.id.clone(),
                nearest_train_id: train_id.to_string(),
                similarity: sim,
            }),
            _ => kept.push(t.clone()),
        }
    }
    Ok(DedupReport {
        kept,
        removed,
        threshold,
    })
}

/// Source of embeddings: a live endpoint, a deterministic simulator, or a
/// previously saved sidecar file.
pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, problems: &[Problem]) -> Result<Vec<EmbeddingVector>>;
    fn provider_tag(&self) -> String;
}

/// Deterministic unit vectors derived by hashing the problem statement;
/// identical statements map to identical vectors (similarity 1), distinct
/// statements to near-orthogonal ones at reasonable dimensions.
pub struct SimEmbedder {
    pub dim: usize,
}

impl SimEmbedder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(VrError::InvalidParameter("embedding dim must be >= 2".into()));
        }
        Ok(SimEmbedder { dim })
    }
}

impl EmbeddingProvider for SimEmbedder {
    fn embed(&self, problems: &[Problem]) -> Result<Vec<EmbeddingVector>> {
        let mut out = Vec::with_capacity(problems.len());
        for p in problems {
            let mut vector;
            let mut salt = 0u64;
            loop {
                let mut h = Sha256::new();
                h.update(b"sim-embedding");
                h.update([0u8]);
                h.update(p.statement.as_bytes());
                h.update([0u8]);
                h.update(salt.to_le_bytes());
                let mut rng = rand_chacha::ChaCha8Rng::from_seed(h.finalize().into());
                vector = (0..self.dim)
                    .map(|_| 2.0 * rng.random::<f64>() - 1.0)
                    .collect::<Vec<f64>>();
                let norm: f64 = vector.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-6 {
                    for x in vector.iter_mut() {
                        *x /= norm;
                    }
                    break;
                }
                salt += 1;
            }
            out.push(EmbeddingVector {
                problem_id: p.id.clone(),
                provider: self.provider_tag(),
                dim: self.dim,
                vector,
            });
        }
        Ok(out)
    }

    fn provider_tag(&self) -> String {
        format!("sim:{}", self.dim)
    }
}

/// Live embeddings over the endpoint's `/embeddings` route, batched.
pub struct HttpEmbedder {
    client: Arc<HttpClient>,
    batch_size: usize,
}

impl HttpEmbedder {
    pub fn new(client: Arc<HttpClient>, batch_size: usize) -> Self {
        HttpEmbedder {
            client,
            batch_size: batch_size.max(1),
        }
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn embed(&self, problems: &[Problem]) -> Result<Vec<EmbeddingVector>> {
        let mut out = Vec::with_capacity(problems.len());
        for (batch_idx, chunk) in problems.chunks(self.batch_size).enumerate() {
            let inputs: Vec<String> = chunk.iter().map(|p| p.statement.clone()).collect();
            let seed = call_seed(0, "embeddings", batch_idx as u64, 0, "embed");
            let vectors = self.client.embeddings(&inputs, seed)?;
            for (p, vector) in chunk.iter().zip(vectors) {
                let dim = vector.len();
                let e = EmbeddingVector {
                    problem_id: p.id.clone(),
                    provider: self.provider_tag(),
                    dim,
                    vector,
                };
                e.validate()?;
                out.push(e);
            }
        }
        Ok(out)
    }

    fn provider_tag(&self) -> String {
        format!("http:{}", self.client.config().model)
    }
}

/// Fetch embeddings for all problems and key them by problem id, validating
/// dimension uniformity.
pub fn embed_problems(
    provider: &dyn EmbeddingProvider,
    problems: &[Problem],
) -> Result<BTreeMap<String, EmbeddingVector>> {
    let rows = provider.embed(problems)?;
    if rows.len() != problems.len() {
        return Err(VrError::InvalidParameter(format!(
            "provider returned {} embeddings for {} problems",
            rows.len(),
            problems.len()
        )));
    }
    let mut map = BTreeMap::new();
    let mut dim = None;
    for e in rows {
        e.validate()?;
        match dim {
            None => dim = Some(e.dim),
            Some(d) if d != e.dim => {
                return Err(VrError::InvalidParameter(format!(
                    "embedding {} has dim {}, expected {}",
                    e.problem_id, e.dim, d
                )))
            }
            _ => {}
        }
        map.insert(e.problem_id.clone(), e);
    }
    Ok(map)
}

/// Persist an embedding cache as a headered JSONL sidecar.
pub fn save_embeddings(
    embeddings: &BTreeMap<String, EmbeddingVector>,
    path: &Path,
) -> Result<()> {
    let rows: Vec<&EmbeddingVector> = embeddings.values().collect();
    jsonl::write_dataset(path, "embeddings", &rows)
}

pub fn load_embeddings(path: &Path) -> Result<BTreeMap<String, EmbeddingVector>> {
    let rows: Vec<EmbeddingVector> = jsonl::read_dataset(path)?;
    let mut map = BTreeMap::new();
    for e in rows {
        e.validate()?;
        map.insert(e.problem_id.clone(), e);
    }
    Ok(map)
}

/// Load problems from the ingestion JSONL schema
/// `{id, statement, gold_answer, source}`, rejecting duplicate ids.
pub fn load_problems(path: &Path) -> Result<Vec<Problem>> {
    let problems: Vec<Problem> = jsonl::read_jsonl(path)?;
    let mut seen = std::collections::BTreeSet::new();
    for p in &problems {
        p.validate()?;
        if !seen.insert(&p.id) {
            return Err(VrError::InvalidParameter(format!(
                "duplicate problem id {} in {}",
                p.id,
                path.display()
            )));
        }
    }
    Ok(problems)
}
