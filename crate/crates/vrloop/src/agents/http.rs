//! Networked agents speaking the OpenAI-compatible wire format.
//!
//! One shared client per endpoint enforces the in-flight bound and the retry
//! policy (exponential backoff with deterministic jitter, retrying only
//! transport errors, 429 and 5xx). Requests carry the derived per-call seed,
//! so a retried request is idempotent at the application level.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU8, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::agents::{
    GenOutput, GeneratorAgent, LogprobAgent, LogprobCompletion, TokenDist, TokenLogprob,
    VerifierAgent, VerifyMode, VerifyOutcome,
};
use crate::error::{Result, VrError};
use crate::protocol::{
    parse_verdict, render_prompt, TemplateId, TemplateSet, SLOT_FEEDBACK, SLOT_PRIOR_SOLUTION,
    SLOT_REFERENCE_SOLUTION, SLOT_STATEMENT,
};
use crate::seed::CallSeed;
use crate::types::{Attempt, Message, Problem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    /// Endpoint root including the version prefix, e.g.
    /// `https://api.example.com/v1`.
    pub base_url: String,
    pub model: String,
    /// Filled from the environment when absent; never serialized back out.
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_top_p")]
    pub top_p: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    /// K for top-K logprobs on logprob-capable calls.
    #[serde(default = "default_top_logprobs")]
    pub top_logprobs: u32,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// First backoff step; doubles per retry, plus deterministic jitter.
    #[serde(default = "default_backoff_ms")]
    pub retry_backoff_ms: u64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
}

fn default_temperature() -> f64 {
    0.7
}
fn default_top_p() -> f64 {
    1.0
}
fn default_max_tokens() -> u32 {
    1024
}
fn default_top_logprobs() -> u32 {
    5
}
fn default_timeout_secs() -> u64 {
    120
}
fn default_max_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    500
}
fn default_max_in_flight() -> usize {
    8
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_url.is_empty() {
            return Err(VrError::Config("endpoint base_url is empty".into()));
        }
        if self.model.is_empty() {
            return Err(VrError::Config("endpoint model is empty".into()));
        }
        if self.top_logprobs < 1 {
            return Err(VrError::Config("top_logprobs must be >= 1".into()));
        }
        if self.max_in_flight < 1 {
            return Err(VrError::Config("max_in_flight must be >= 1".into()));
        }
        Ok(())
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.base_url.trim_end_matches('/'), path)
    }
}

/// Counting semaphore bounding concurrent requests per endpoint.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Gate {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> GateGuard<'_> {
        let mut free = self.free.lock().expect("gate poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("gate poisoned");
        }
        *free -= 1;
        GateGuard { gate: self }
    }
}

struct GateGuard<'a> {
    gate: &'a Gate,
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        let mut free = self.gate.free.lock().expect("gate poisoned");
        *free += 1;
        self.gate.cv.notify_one();
    }
}

/// Shared blocking HTTP client for one endpoint.
pub struct HttpClient {
    cfg: EndpointConfig,
    client: reqwest::blocking::Client,
    gate: Gate,
}

#[derive(Debug, Clone)]
pub struct ChatResult {
    pub text: String,
    pub dists: Option<Vec<TokenDist>>,
    pub tokens: Option<Vec<String>>,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub wall_time_ms: u64,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<UsageBlock>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: ChatMessage,
    #[serde(default)]
    logprobs: Option<ChatLogprobs>,
}

#[derive(Debug, Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Deserialize)]
struct ChatLogprobs {
    #[serde(default)]
    content: Option<Vec<ChatTokenLogprob>>,
}

#[derive(Debug, Deserialize)]
struct ChatTokenLogprob {
    token: String,
    logprob: f64,
    #[serde(default)]
    top_logprobs: Vec<TopLogprobEntry>,
}

#[derive(Debug, Deserialize)]
struct TopLogprobEntry {
    token: String,
    logprob: f64,
}

#[derive(Debug, Deserialize)]
struct UsageBlock {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

#[derive(Debug, Deserialize)]
struct CompletionsResponse {
    choices: Vec<CompletionsChoice>,
}

#[derive(Debug, Deserialize)]
struct CompletionsChoice {
    #[serde(default)]
    logprobs: Option<CompletionsLogprobs>,
}

#[derive(Debug, Deserialize)]
struct CompletionsLogprobs {
    #[serde(default)]
    tokens: Vec<String>,
    #[serde(default)]
    token_logprobs: Vec<Option<f64>>,
    #[serde(default)]
    top_logprobs: Vec<Option<BTreeMap<String, f64>>>,
}

impl HttpClient {
    pub fn new(cfg: EndpointConfig) -> Result<Arc<Self>> {
        cfg.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| VrError::Transport(e.to_string()))?;
        let gate = Gate::new(cfg.max_in_flight);
        Ok(Arc::new(HttpClient { cfg, client, gate }))
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    /// POST a JSON body with the retry policy; returns the raw body text.
    fn post_json(&self, path: &str, body: &serde_json::Value, seed: CallSeed) -> Result<String> {
        let url = self.cfg.url(path);
        let mut last_err: Option<VrError> = None;
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                let backoff = self.cfg.retry_backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                let jitter_span = self.cfg.retry_backoff_ms / 2 + 1;
                let jitter = (seed.as_u64() >> (8 * (attempt as u64 % 8))) % jitter_span;
                std::thread::sleep(Duration::from_millis(backoff + jitter));
            }
            let _slot = self.gate.acquire();
            let mut req = self.client.post(&url).json(body);
            if let Some(key) = &self.cfg.api_key {
                req = req.bearer_auth(key);
            }
            let result = req.send();
            let err = match result {
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp
                        .text()
                        .map_err(|e| VrError::Transport(e.to_string()))?;
                    if status.is_success() {
                        return Ok(text);
                    }
                    VrError::Endpoint {
                        status: status.as_u16(),
                        body: text.chars().take(500).collect(),
                    }
                }
                Err(e) => VrError::Transport(e.to_string()),
            };
            if !err.is_retryable() {
                return Err(err);
            }
            log::warn!("retryable failure against {url} (attempt {attempt}): {err}");
            last_err = Some(err);
        }
        Err(last_err.unwrap_or_else(|| VrError::Transport("retries exhausted".into())))
    }

    /// One chat completion. `with_logprobs` also requests per-token top-K.
    pub fn chat(
        &self,
        messages: &[Message],
        with_logprobs: bool,
        max_tokens: Option<u32>,
        seed: CallSeed,
    ) -> Result<ChatResult> {
        let mut body = json!({
            "model": self.cfg.model,
            "messages": messages,
            "temperature": self.cfg.temperature,
            "top_p": self.cfg.top_p,
            "max_tokens": max_tokens.unwrap_or(self.cfg.max_tokens),
            "seed": seed.as_u64() & (i64::MAX as u64),
        });
        if with_logprobs {
            body["logprobs"] = json!(true);
            body["top_logprobs"] = json!(self.cfg.top_logprobs);
        }
        let started = Instant::now();
        let text = self.post_json("chat/completions", &body, seed)?;
        let wall_time_ms = started.elapsed().as_millis() as u64;
        let parsed: ChatResponse = serde_json::from_str(&text)?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| VrError::Transport("chat response has no choices".into()))?;
        let content = choice.message.content.unwrap_or_default();
        let (dists, tokens) = match choice.logprobs.and_then(|l| l.content) {
            Some(entries) => {
                let mut dists = Vec::with_capacity(entries.len());
                let mut tokens = Vec::with_capacity(entries.len());
                for (pos, e) in entries.into_iter().enumerate() {
                    let alternatives = e
                        .top_logprobs
                        .into_iter()
                        .map(|t| TokenLogprob {
                            token: t.token,
                            logprob: t.logprob.min(0.0),
                        })
                        .collect();
                    let dist = TokenDist::from_listed(
                        pos as u32,
                        e.token.clone(),
                        e.logprob.min(0.0),
                        alternatives,
                    )?;
                    tokens.push(e.token);
                    dists.push(dist);
                }
                (Some(dists), Some(tokens))
            }
            None => (None, None),
        };
        let usage = parsed.usage.unwrap_or(UsageBlock {
            prompt_tokens: 0,
            completion_tokens: 0,
        });
        Ok(ChatResult {
            text: content,
            dists,
            tokens,
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
            wall_time_ms,
        })
    }

    /// Legacy completions call used by the echo scoring pathway.
    fn completions_echo(&self, prompt: &str, seed: CallSeed) -> Result<CompletionsResponse> {
        let body = json!({
            "model": self.cfg.model,
            "prompt": prompt,
            "max_tokens": 0,
            "echo": true,
            "logprobs": self.cfg.top_logprobs,
        });
        let text = self.post_json("completions", &body, seed)?;
        Ok(serde_json::from_str(&text)?)
    }

    fn completions_next_token(&self, prompt: &str, seed: CallSeed) -> Result<CompletionsResponse> {
        let body = json!({
            "model": self.cfg.model,
            "prompt": prompt,
            "max_tokens": 1,
            "logprobs": self.cfg.top_logprobs,
        });
        let text = self.post_json("completions", &body, seed)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn embeddings(&self, inputs: &[String], seed: CallSeed) -> Result<Vec<Vec<f64>>> {
        #[derive(Deserialize)]
        struct EmbeddingsResponse {
            data: Vec<EmbeddingRow>,
        }
        #[derive(Deserialize)]
        struct EmbeddingRow {
            index: usize,
            embedding: Vec<f64>,
        }
        let body = json!({
            "model": self.cfg.model,
            "input": inputs,
        });
        let text = self.post_json("embeddings", &body, seed)?;
        let parsed: EmbeddingsResponse = serde_json::from_str(&text)?;
        if parsed.data.len() != inputs.len() {
            return Err(VrError::Transport(format!(
                "embeddings response has {} rows for {} inputs",
                parsed.data.len(),
                inputs.len()
            )));
        }
        let mut rows = parsed.data;
        rows.sort_by_key(|r| r.index);
        Ok(rows.into_iter().map(|r| r.embedding).collect())
    }
}

fn flatten_messages(messages: &[Message]) -> String {
    let mut out = String::new();
    for m in messages {
        out.push_str(&m.content);
        out.push('\n');
    }
    out
}

/// Networked generator: renders the generator templates and samples.
pub struct HttpGenerator {
    client: Arc<HttpClient>,
    templates: Arc<TemplateSet>,
}

impl HttpGenerator {
    pub fn new(client: Arc<HttpClient>, templates: Arc<TemplateSet>) -> Self {
        HttpGenerator { client, templates }
    }
}

impl GeneratorAgent for HttpGenerator {
    fn generate_initial(&self, problem: &Problem, seed: CallSeed) -> Result<GenOutput> {
        let bindings = BTreeMap::from([(SLOT_STATEMENT, problem.statement.as_str())]);
        let messages = render_prompt(&self.templates, TemplateId::GeneratorInitial, &bindings)?;
        let res = self.client.chat(&messages, false, None, seed)?;
        Ok(GenOutput {
            text: res.text,
            prompt_tokens: res.prompt_tokens,
            completion_tokens: res.completion_tokens,
            wall_time_ms: res.wall_time_ms,
        })
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
        let mut bindings = BTreeMap::from([
            (SLOT_STATEMENT, problem.statement.as_str()),
            (SLOT_PRIOR_SOLUTION, prev.text.as_str()),
        ]);
        if let Some(f) = feedback {
            bindings.insert(SLOT_FEEDBACK, f);
        }
        let messages = render_prompt(&self.templates, TemplateId::GeneratorRefine, &bindings)?;
        let res = self.client.chat(&messages, false, None, seed)?;
        Ok(GenOutput {
            text: res.text,
            prompt_tokens: res.prompt_tokens,
            completion_tokens: res.completion_tokens,
            wall_time_ms: res.wall_time_ms,
        })
    }
}

/// Networked verifier: plain or reference-conditioned judgment.
pub struct HttpVerifier {
    client: Arc<HttpClient>,
    templates: Arc<TemplateSet>,
}

impl HttpVerifier {
    pub fn new(client: Arc<HttpClient>, templates: Arc<TemplateSet>) -> Self {
        HttpVerifier { client, templates }
    }
}

impl VerifierAgent for HttpVerifier {
    fn verify(
        &self,
        problem: &Problem,
        attempt: &Attempt,
        mode: VerifyMode,
        seed: CallSeed,
    ) -> Result<VerifyOutcome> {
        let mut bindings = BTreeMap::from([
            (SLOT_STATEMENT, problem.statement.as_str()),
            (SLOT_PRIOR_SOLUTION, attempt.text.as_str()),
        ]);
        let template = match mode {
            VerifyMode::Plain => TemplateId::VerifierPlain,
            VerifyMode::ReferenceConditioned => {
                if problem.gold_answer.is_empty() {
                    return Err(VrError::InvalidParameter(format!(
                        "problem {}: reference-conditioned verify requires a gold answer",
                        problem.id
                    )));
                }
                bindings.insert(SLOT_REFERENCE_SOLUTION, problem.gold_answer.as_str());
                TemplateId::VerifierTeacher
            }
        };
        let messages = render_prompt(&self.templates, template, &bindings)?;
        let res = self.client.chat(&messages, false, None, seed)?;
        Ok(VerifyOutcome {
            output: parse_verdict(&res.text),
            prompt_tokens: res.prompt_tokens,
            completion_tokens: res.completion_tokens,
            wall_time_ms: res.wall_time_ms,
        })
    }

    fn tag(&self) -> String {
        format!("http:{}", self.client.cfg.model)
    }
}

const MECH_AUTO: u8 = 0;
const MECH_ECHO: u8 = 1;
const MECH_CONTINUATION: u8 = 2;

/// Logprob-capable networked agent. Teacher scoring prefers the completions
/// echo pathway (one request per sequence); endpoints without it fall back
/// to per-position single-token continuation queries. The mechanism in use
/// is recorded in run metadata.
pub struct HttpLogprobAgent {
    client: Arc<HttpClient>,
    mechanism: AtomicU8,
}

impl HttpLogprobAgent {
    pub fn new(client: Arc<HttpClient>) -> Self {
        HttpLogprobAgent {
            client,
            mechanism: AtomicU8::new(MECH_AUTO),
        }
    }

    fn score_via_echo(
        &self,
        messages: &[Message],
        forced_tokens: &[String],
        seed: CallSeed,
    ) -> Result<Vec<TokenDist>> {
        let prompt = format!("{}{}", flatten_messages(messages), forced_tokens.concat());
        let resp = self.client.completions_echo(&prompt, seed)?;
        let choice = resp
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| VrError::Capability("echo scoring returned no choices".into()))?;
        let lp = choice
            .logprobs
            .ok_or_else(|| VrError::Capability("echo scoring returned no logprobs".into()))?;
        let n = forced_tokens.len();
        if lp.tokens.len() < n {
            return Err(VrError::Capability(format!(
                "echo scoring returned {} tokens, need at least {n}",
                lp.tokens.len()
            )));
        }
        // The forced sequence occupies the trailing positions, but only if
        // the server's tokenization reproduced it verbatim.
        let start = lp.tokens.len() - n;
        if lp.tokens[start..] != forced_tokens[..] {
            return Err(VrError::Capability(
                "echo tokenization does not reproduce the forced tokens".into(),
            ));
        }
        let mut out = Vec::with_capacity(n);
        for (i, token) in forced_tokens.iter().enumerate() {
            let idx = start + i;
            let chosen_logprob = lp
                .token_logprobs
                .get(idx)
                .copied()
                .flatten()
                .ok_or_else(|| {
                    VrError::Capability(format!("echo scoring has no logprob at position {idx}"))
                })?;
            let alternatives = lp
                .top_logprobs
                .get(idx)
                .cloned()
                .flatten()
                .map(|m| {
                    m.into_iter()
                        .map(|(token, logprob)| TokenLogprob {
                            token,
                            logprob: logprob.min(0.0),
                        })
                        .collect::<Vec<_>>()
                })
                .unwrap_or_default();
            out.push(TokenDist::from_listed(
                i as u32,
                token.clone(),
                chosen_logprob.min(0.0),
                alternatives,
            )?);
        }
        Ok(out)
    }

    fn score_via_continuation(
        &self,
        messages: &[Message],
        forced_tokens: &[String],
        seed: CallSeed,
    ) -> Result<Vec<TokenDist>> {
        let base = flatten_messages(messages);
        let mut out = Vec::with_capacity(forced_tokens.len());
        for (i, token) in forced_tokens.iter().enumerate() {
            let prompt = format!("{base}{}", forced_tokens[..i].concat());
            let resp = self.client.completions_next_token(&prompt, seed)?;
            let choice = resp
                .choices
                .into_iter()
                .next()
                .ok_or_else(|| VrError::Capability("continuation returned no choices".into()))?;
            let lp = choice
                .logprobs
                .ok_or_else(|| VrError::Capability("continuation returned no logprobs".into()))?;
            let top = lp
                .top_logprobs
                .first()
                .cloned()
                .flatten()
                .unwrap_or_default();
            let alternatives: Vec<TokenLogprob> = top
                .iter()
                .map(|(t, l)| TokenLogprob {
                    token: t.clone(),
                    logprob: l.min(0.0),
                })
                .collect();
            let chosen_logprob = match top.get(token) {
                Some(l) => l.min(0.0),
                None => {
                    // The forced token fell outside the returned top-K. Its
                    // true probability is unknowable over this API; bound it
                    // by the smaller of the lowest listed probability and
                    // the unlisted tail, floored for numerical safety.
                    let listed: f64 = top.values().map(|l| l.exp()).sum();
                    let min_listed = top
                        .values()
                        .map(|l| l.exp())
                        .fold(f64::INFINITY, f64::min);
                    let tail = (1.0 - listed).max(0.0);
                    min_listed.min(tail).max(1e-12).ln()
                }
            };
            out.push(TokenDist::from_listed(
                i as u32,
                token.clone(),
                chosen_logprob,
                alternatives,
            )?);
        }
        Ok(out)
    }
}

impl LogprobAgent for HttpLogprobAgent {
    fn complete_with_logprobs(
        &self,
        messages: &[Message],
        seed: CallSeed,
    ) -> Result<LogprobCompletion> {
        let res = self.client.chat(messages, true, None, seed)?;
        let dists = res.dists.ok_or_else(|| {
            VrError::Capability("endpoint returned no logprobs on a logprob request".into())
        })?;
        let tokens = res.tokens.unwrap_or_default();
        Ok(LogprobCompletion {
            text: res.text,
            tokens,
            dists,
            prompt_tokens: res.prompt_tokens,
            completion_tokens: res.completion_tokens,
            wall_time_ms: res.wall_time_ms,
        })
    }

    fn score_tokens(
        &self,
        messages: &[Message],
        forced_tokens: &[String],
        seed: CallSeed,
    ) -> Result<Vec<TokenDist>> {
        match self.mechanism.load(Ordering::Relaxed) {
            MECH_ECHO => self.score_via_echo(messages, forced_tokens, seed),
            MECH_CONTINUATION => self.score_via_continuation(messages, forced_tokens, seed),
            _ => match self.score_via_echo(messages, forced_tokens, seed) {
                Ok(dists) => {
                    self.mechanism.store(MECH_ECHO, Ordering::Relaxed);
                    Ok(dists)
                }
                Err(VrError::Capability(reason)) => {
                    log::info!("echo scoring unavailable ({reason}); using continuation queries");
                    self.mechanism.store(MECH_CONTINUATION, Ordering::Relaxed);
                    self.score_via_continuation(messages, forced_tokens, seed)
                }
                Err(e) => Err(e),
            },
        }
    }

    fn mechanism(&self) -> &'static str {
        match self.mechanism.load(Ordering::Relaxed) {
            MECH_ECHO => "echo",
            MECH_CONTINUATION => "continuation",
            _ => "auto",
        }
    }

    /// Startup capability probe: one tiny logprob request must come back
    /// with per-token distributions.
    fn probe(&self) -> Result<()> {
        let seed = crate::seed::call_seed(0, "capability-probe", 0, 0, "probe");
        let messages = [Message::user("Reply with the single word: ok")];
        let res = self.client.chat(&messages, true, Some(1), seed)?;
        match res.dists {
            Some(d) if !d.is_empty() => Ok(()),
            _ => Err(VrError::Capability(format!(
                "endpoint {} does not return token logprobs",
                self.client.cfg.base_url
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn url_join_tolerates_trailing_slash() {
        let mut cfg = EndpointConfig {
            base_url: "http://localhost:8000/v1/".into(),
            model: "m".into(),
            api_key: None,
            temperature: 0.7,
            top_p: 1.0,
            max_tokens: 16,
            top_logprobs: 5,
            timeout_secs: 5,
            max_retries: 0,
            retry_backoff_ms: 100,
            max_in_flight: 2,
        };
        assert_eq!(cfg.url("chat/completions"), "http://localhost:8000/v1/chat/completions");
        cfg.base_url = "http://localhost:8000/v1".into();
        assert_eq!(cfg.url("embeddings"), "http://localhost:8000/v1/embeddings");
    }

    #[test]
    fn chat_response_logprobs_map_to_token_dists() {
        let body = r#"{
            "choices": [{
                "message": {"role": "assistant", "content": "ok"},
                "logprobs": {"content": [
                    {"token": "ok", "logprob": -0.1,
                     "top_logprobs": [
                        {"token": "ok", "logprob": -0.1},
                        {"token": "no", "logprob": -3.0}
                     ]}
                ]}
            }],
            "usage": {"prompt_tokens": 12, "completion_tokens": 1}
        }"#;
        let parsed: ChatResponse = serde_json::from_str(body).unwrap();
        let entry = &parsed.choices[0].logprobs.as_ref().unwrap().content.as_ref().unwrap()[0];
        let dist = TokenDist::from_listed(
            0,
            entry.token.clone(),
            entry.logprob,
            entry
                .top_logprobs
                .iter()
                .map(|t| TokenLogprob {
                    token: t.token.clone(),
                    logprob: t.logprob,
                })
                .collect(),
        )
        .unwrap();
        dist.validate().unwrap();
        assert_eq!(dist.listed().len(), 2);
    }

    #[test]
    fn completions_response_parses_nullable_logprobs() {
        // echo=true marks the first prompt token with null logprob.
        let body = r#"{
            "choices": [{
                "text": "abc",
                "logprobs": {
                    "tokens": ["a", "b"],
                    "token_logprobs": [null, -0.5],
                    "top_logprobs": [null, {"b": -0.5, "c": -1.5}]
                }
            }]
        }"#;
        let parsed: CompletionsResponse = serde_json::from_str(body).unwrap();
        let lp = parsed.choices[0].logprobs.as_ref().unwrap();
        assert_eq!(lp.tokens.len(), 2);
        assert!(lp.token_logprobs[0].is_none());
        assert_eq!(lp.top_logprobs[1].as_ref().unwrap()["b"], -0.5);
    }

    #[test]
    fn gate_bounds_concurrency() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        let gate = Gate::new(2);
        let active = AtomicUsize::new(0);
        let peak = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    let _g = gate.acquire();
                    let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                    active.fetch_sub(1, Ordering::SeqCst);
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
