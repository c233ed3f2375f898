//! Run configuration: one TOML file describes the agents, the loop policy,
//! and the evaluation knobs, so a run is reproducible from (config file,
//! base seed) alone. Secrets never live in the file — API keys come from
//! `VRLOOP_API_KEY` — and never enter the config hash.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::http::{
    EndpointConfig, HttpClient, HttpGenerator, HttpLogprobAgent, HttpVerifier,
};
use crate::agents::sim::{
    SimGenerator, SimGeneratorParams, SimLogprobAgent, SimVerifier, SimVerifierParams,
};
use crate::agents::{GeneratorAgent, LogprobAgent, VerifierAgent};
use crate::dataset::{EmbeddingProvider, HttpEmbedder, SimEmbedder};
use crate::error::{Result, VrError};
use crate::protocol::{AnswerSpec, TemplateSet};
use crate::stv::StvConfig;
use crate::types::{FeedbackMode, LoopConfig, VerdictMode, DEFAULT_GENERIC_FEEDBACK};

/// Name of the environment variable consulted for endpoint credentials.
pub const API_KEY_ENV: &str = "VRLOOP_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Sim,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub kind: AgentKind,
    pub sim: SimGeneratorParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub http: Option<EndpointConfig>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            kind: AgentKind::Sim,
            sim: SimGeneratorParams::default(),
            http: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifierConfig {
    pub kind: AgentKind,
    pub sim: SimVerifierParams,
    /// Reference-conditioned grade of the simulated verifier; enables
    /// teacher-mode judging and teacher-side scoring in simulated runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sim_teacher: Option<SimVerifierParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub http: Option<EndpointConfig>,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        VerifierConfig {
            kind: AgentKind::Sim,
            sim: SimVerifierParams::default(),
            sim_teacher: None,
            http: None,
        }
    }
}

/// Token-distribution access for distillation-data builds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogprobConfig {
    pub kind: AgentKind,
    /// Simulated vocabulary truncation (top-K listed tokens).
    pub top_k: usize,
    /// How far the simulated student's distributions sit from the
    /// teacher's; zero makes them identical.
    pub perturbation: f64,
    pub student_key: u64,
    pub teacher_key: u64,
    /// Endpoint for HTTP mode; the student and teacher are the same model
    /// under different prompts, so one endpoint serves both.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub http: Option<EndpointConfig>,
}

impl Default for LogprobConfig {
    fn default() -> Self {
        LogprobConfig {
            kind: AgentKind::Sim,
            top_k: 5,
            perturbation: 0.3,
            student_key: 1,
            teacher_key: 2,
            http: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingsConfig {
    pub kind: AgentKind,
    /// Dimension of the simulated embedding space.
    pub dim: usize,
    /// Problems per request in HTTP mode.
    pub batch_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub http: Option<EndpointConfig>,
}

impl Default for EmbeddingsConfig {
    fn default() -> Self {
        EmbeddingsConfig {
            kind: AgentKind::Sim,
            dim: 64,
            batch_size: 32,
            http: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    /// Override for the fallback answer-line pattern.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_answer_pattern: Option<String>,
    /// Directory of prompt template files; built-ins when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub templates_dir: Option<PathBuf>,
}

/// The whole run, one file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub base_seed: u64,
    pub max_rounds: u32,
    pub loops_per_problem: u64,
    pub in_flight: usize,
    pub verdict_mode: VerdictMode,
    pub feedback_mode: FeedbackMode,
    pub generic_feedback_text: String,
    pub protocol: ProtocolConfig,
    pub generator: GeneratorConfig,
    pub verifier: VerifierConfig,
    pub logprob: LogprobConfig,
    pub embeddings: EmbeddingsConfig,
    pub stv: StvConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            base_seed: 0,
            max_rounds: 20,
            loops_per_problem: 32,
            in_flight: 8,
            verdict_mode: VerdictMode::Model,
            feedback_mode: FeedbackMode::Model,
            generic_feedback_text: DEFAULT_GENERIC_FEEDBACK.to_string(),
            protocol: ProtocolConfig::default(),
            generator: GeneratorConfig::default(),
            verifier: VerifierConfig::default(),
            logprob: LogprobConfig::default(),
            embeddings: EmbeddingsConfig::default(),
            stv: StvConfig::default(),
        }
    }
}

fn require_http<'a>(section: &str, http: &'a Option<EndpointConfig>) -> Result<&'a EndpointConfig> {
    http.as_ref().ok_or_else(|| {
        VrError::Config(format!(
            "[{section}] kind = \"http\" requires an [{section}.http] endpoint table"
        ))
    })
}

impl RunConfig {
    /// Parse and validate a config file; endpoint credentials are then
    /// filled from the environment.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| VrError::io(path, e))?;
        let mut config: RunConfig = toml::from_str(&text)
            .map_err(|e| VrError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        config.apply_env();
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_rounds < 1 {
            return Err(VrError::Config("max_rounds must be >= 1".into()));
        }
        if self.loops_per_problem < 1 {
            return Err(VrError::Config("loops_per_problem must be >= 1".into()));
        }
        if self.in_flight < 1 {
            return Err(VrError::Config("in_flight must be >= 1".into()));
        }
        match self.generator.kind {
            AgentKind::Sim => self.generator.sim.validate()?,
            AgentKind::Http => require_http("generator", &self.generator.http)?.validate()?,
        }
        match self.verifier.kind {
            AgentKind::Sim => {
                self.verifier.sim.validate()?;
                if let Some(t) = &self.verifier.sim_teacher {
                    t.validate()?;
                }
            }
            AgentKind::Http => require_http("verifier", &self.verifier.http)?.validate()?,
        }
        match self.logprob.kind {
            AgentKind::Sim => {
                if self.logprob.top_k < 1 {
                    return Err(VrError::Config("[logprob] top_k must be >= 1".into()));
                }
                if !(0.0..=1.0).contains(&self.logprob.perturbation) {
                    return Err(VrError::Config(
                        "[logprob] perturbation must lie in [0, 1]".into(),
                    ));
                }
            }
            AgentKind::Http => require_http("logprob", &self.logprob.http)?.validate()?,
        }
        match self.embeddings.kind {
            AgentKind::Sim => {
                if self.embeddings.dim < 2 {
                    return Err(VrError::Config("[embeddings] dim must be >= 2".into()));
                }
            }
            AgentKind::Http => {
                require_http("embeddings", &self.embeddings.http)?.validate()?;
                if self.embeddings.batch_size < 1 {
                    return Err(VrError::Config("[embeddings] batch_size must be >= 1".into()));
                }
            }
        }
        if let Some(p) = &self.protocol.final_answer_pattern {
            AnswerSpec::new(p)?;
        }
        self.stv.validate()?;
        Ok(())
    }

    fn apply_env(&mut self) {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        for endpoint in [
            &mut self.generator.http,
            &mut self.verifier.http,
            &mut self.logprob.http,
            &mut self.embeddings.http,
        ]
        .into_iter()
        .flatten()
        {
            if endpoint.api_key.is_none() {
                endpoint.api_key.clone_from(&key);
            }
        }
    }

    /// True when no section talks to the network.
    pub fn fully_simulated(&self) -> bool {
        self.generator.kind == AgentKind::Sim
            && self.verifier.kind == AgentKind::Sim
            && self.logprob.kind == AgentKind::Sim
            && self.embeddings.kind == AgentKind::Sim
    }

    /// Hash of the effective configuration. Computed over the canonical
    /// serialized form, so formatting and comments never matter; API keys
    /// are skipped during serialization, so credentials never matter.
    pub fn hash(&self) -> Result<String> {
        let canonical = serde_json::to_string(self)?;
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        Ok(hex::encode(hasher.finalize()))
    }

    pub fn loop_config(&self) -> LoopConfig {
        LoopConfig {
            max_rounds: self.max_rounds,
            verdict_mode: self.verdict_mode,
            feedback_mode: self.feedback_mode,
            generic_feedback_text: self.generic_feedback_text.clone(),
        }
    }

    pub fn templates(&self) -> Result<Arc<TemplateSet>> {
        let set = match &self.protocol.templates_dir {
            Some(dir) => TemplateSet::from_dir(dir)?,
            None => TemplateSet::builtin(),
        };
        Ok(Arc::new(set))
    }

    pub fn answer_checker(&self) -> Result<AnswerSpec> {
        match &self.protocol.final_answer_pattern {
            Some(p) => AnswerSpec::new(p),
            None => Ok(AnswerSpec::default()),
        }
    }

    pub fn build_generator(&self, templates: &Arc<TemplateSet>) -> Result<Box<dyn GeneratorAgent>> {
        match self.generator.kind {
            AgentKind::Sim => Ok(Box::new(SimGenerator::new(self.generator.sim.clone())?)),
            AgentKind::Http => {
                let endpoint = require_http("generator", &self.generator.http)?;
                let client = HttpClient::new(endpoint.clone())?;
                Ok(Box::new(HttpGenerator::new(client, Arc::clone(templates))))
            }
        }
    }

    pub fn build_verifier(&self, templates: &Arc<TemplateSet>) -> Result<Box<dyn VerifierAgent>> {
        match self.verifier.kind {
            AgentKind::Sim => Ok(Box::new(SimVerifier::new(
                self.verifier.sim.clone(),
                self.verifier.sim_teacher.clone(),
            ))),
            AgentKind::Http => {
                let endpoint = require_http("verifier", &self.verifier.http)?;
                let client = HttpClient::new(endpoint.clone())?;
                Ok(Box::new(HttpVerifier::new(client, Arc::clone(templates))))
            }
        }
    }

    /// The (student, teacher) pair for distillation builds. In HTTP mode
    /// both are the same model reached through one endpoint — the student
    /// and the teacher differ only in prompt — while simulated mode uses
    /// two keyed agents so their distributions measurably diverge.
    pub fn build_logprob_agents(&self) -> Result<(Box<dyn LogprobAgent>, Box<dyn LogprobAgent>)> {
        match self.logprob.kind {
            AgentKind::Sim => {
                let student = SimLogprobAgent::procedural(
                    self.logprob.student_key,
                    self.logprob.top_k,
                    self.logprob.perturbation,
                );
                let teacher =
                    SimLogprobAgent::procedural(self.logprob.teacher_key, self.logprob.top_k, 0.0);
                Ok((Box::new(student), Box::new(teacher)))
            }
            AgentKind::Http => {
                let endpoint = require_http("logprob", &self.logprob.http)?;
                let client = HttpClient::new(endpoint.clone())?;
                let student = HttpLogprobAgent::new(Arc::clone(&client));
                let teacher = HttpLogprobAgent::new(client);
                Ok((Box::new(student), Box::new(teacher)))
            }
        }
    }

    pub fn build_embedder(&self) -> Result<Box<dyn EmbeddingProvider>> {
        match self.embeddings.kind {
            AgentKind::Sim => Ok(Box::new(SimEmbedder::new(self.embeddings.dim)?)),
            AgentKind::Http => {
                let endpoint = require_http("embeddings", &self.embeddings.http)?;
                let client = HttpClient::new(endpoint.clone())?;
                Ok(Box::new(HttpEmbedder::new(client, self.embeddings.batch_size)))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stv::DivergenceKind;

    #[test]
    fn minimal_sim_config_parses_with_defaults() {
        let config: RunConfig = toml::from_str("").unwrap();
        assert_eq!(config.max_rounds, 20);
        assert_eq!(config.loops_per_problem, 32);
        assert_eq!(config.verdict_mode, VerdictMode::Model);
        assert!(config.fully_simulated());
        config.validate().unwrap();
    }

    #[test]
    fn partial_tables_fill_from_defaults() {
        let text = r#"
            base_seed = 7
            max_rounds = 5

            [generator]
            kind = "sim"

            [generator.sim]
            base_solve_prob = 0.25

            [verifier.sim]
            tpr = 0.95

            [stv]
            divergence_kind = "alpha_family"
            alpha = 0.5
        "#;
        let config: RunConfig = toml::from_str(text).unwrap();
        config.validate().unwrap();
        assert_eq!(config.base_seed, 7);
        assert_eq!(config.generator.sim.base_solve_prob, 0.25);
        // Unset sim fields keep their defaults.
        assert_eq!(
            config.verifier.sim.fpr,
            SimVerifierParams::default().fpr
        );
        assert_eq!(config.stv.divergence_kind, DivergenceKind::AlphaFamily);
    }

    #[test]
    fn http_kind_without_endpoint_is_a_config_error() {
        let text = r#"
            [generator]
            kind = "http"
        "#;
        let config: RunConfig = toml::from_str(text).unwrap();
        let err = config.validate().unwrap_err();
        assert!(matches!(err, VrError::Config(_)), "got {err:?}");
        assert!(err.to_string().contains("generator.http"));
    }

    #[test]
    fn invalid_values_are_rejected_with_field_context() {
        let bad_rounds: RunConfig = toml::from_str("max_rounds = 0").unwrap();
        assert!(bad_rounds.validate().is_err());

        let bad_pattern: RunConfig = toml::from_str(
            r#"
            [protocol]
            final_answer_pattern = "(unclosed"
        "#,
        )
        .unwrap();
        assert!(bad_pattern.validate().is_err());

        let bad_prob: RunConfig = toml::from_str(
            r#"
            [generator.sim]
            base_solve_prob = 1.5
        "#,
        )
        .unwrap();
        assert!(bad_prob.validate().is_err());
    }

    #[test]
    fn unknown_keys_are_tolerated_but_typos_in_enums_are_not() {
        // Unknown tables are ignored (forward compatibility)...
        let ok: std::result::Result<RunConfig, _> = toml::from_str("[future_section]\nx = 1");
        assert!(ok.is_ok());
        // ...but a bad enum value is a parse error with the value named.
        let bad: std::result::Result<RunConfig, _> = toml::from_str("verdict_mode = \"oracle\"");
        assert!(bad.is_err());
    }

    #[test]
    fn hash_ignores_formatting_and_credentials_but_not_values() {
        let a: RunConfig = toml::from_str("base_seed = 1\nmax_rounds = 20").unwrap();
        let b: RunConfig = toml::from_str("max_rounds   = 20\n\nbase_seed = 1").unwrap();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());

        let c: RunConfig = toml::from_str("base_seed = 2").unwrap();
        assert_ne!(a.hash().unwrap(), c.hash().unwrap());

        let mut with_key: RunConfig = toml::from_str(
            r#"
            [generator]
            kind = "http"
            [generator.http]
            base_url = "http://localhost:1"
            model = "m"
        "#,
        )
        .unwrap();
        let before = with_key.hash().unwrap();
        with_key.generator.http.as_mut().unwrap().api_key = Some("secret".into());
        assert_eq!(before, with_key.hash().unwrap());
    }

    #[test]
    fn loop_config_and_builders_come_from_the_file() {
        let text = r#"
            max_rounds = 3
            verdict_mode = "ground_truth"
            feedback_mode = "generic"
            generic_feedback_text = "Try again."
        "#;
        let config: RunConfig = toml::from_str(text).unwrap();
        let lc = config.loop_config();
        assert_eq!(lc.max_rounds, 3);
        assert_eq!(lc.verdict_mode, VerdictMode::GroundTruth);
        assert_eq!(lc.feedback_mode, FeedbackMode::Generic);
        assert_eq!(lc.generic_feedback_text, "Try again.");

        let templates = config.templates().unwrap();
        config.build_generator(&templates).unwrap();
        config.build_verifier(&templates).unwrap();
        config.build_logprob_agents().unwrap();
        config.build_embedder().unwrap();
    }

    #[test]
    fn env_key_fills_missing_credentials_only() {
        let mut config: RunConfig = toml::from_str(
            r#"
            [verifier]
            kind = "http"
            [verifier.http]
            base_url = "http://localhost:1"
            model = "m"
        "#,
        )
        .unwrap();
        // Simulate what load() does after validation, without touching the
        // process environment (tests run in parallel).
        let key = Some("from-env".to_string());
        for endpoint in [&mut config.verifier.http].into_iter().flatten() {
            if endpoint.api_key.is_none() {
                endpoint.api_key.clone_from(&key);
            }
        }
        assert_eq!(config.verifier.http.unwrap().api_key.as_deref(), Some("from-env"));
    }

    #[test]
    fn load_reads_file_and_reports_parse_errors_with_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "base_seed = 9\n").unwrap();
        let config = RunConfig::load(&path).unwrap();
        assert_eq!(config.base_seed, 9);

        std::fs::write(&path, "base_seed = \"nine\"\n").unwrap();
        let err = RunConfig::load(&path).unwrap_err();
        assert!(matches!(err, VrError::Config(_)));
        assert!(err.to_string().contains("run.toml"));
    }
}
