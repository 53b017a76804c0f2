//! Uniform contract for text-generation and embedding providers, the
//! retrying gateway in front of it, Phase-1 profile elicitation, and a
//! deterministic offline stub.
//!
//! The stub's output is a pure function of (prompt, seed, model), so
//! corpora generated with it are byte-reproducible. Its vocabulary pool is
//! keyed by the prompt content: identical prompts draw from the same topical
//! word window, which gives stub corpora realistic cluster structure.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::schema::{parse_profile, PilotProfile, ProfileSource, SCHEMA_JSON};

const ELICIT_TEMPLATE: &str = include_str!("../resources/templates/elicit.txt");
const STUB_WORDS: &str = include_str!("../resources/stub_words.txt");

/// Marker the stub uses to recognize a profile-elicitation prompt.
const ELICIT_MARKER: &str = "Respond with ONLY the raw JSON object";
/// Marker for prompts that instruct tagged explanation/response output.
const TAGGED_MARKER: &str = "<response> response </response>";

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("provider throttled")]
    Throttled,
    #[error("provider error: {0}")]
    Provider(String),
    #[error("network failure: {0}")]
    Network(String),
    #[error("empty generation")]
    EmptyGeneration,
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("max_output_chars must be positive")]
    BadMaxChars,
    #[error("embedding count mismatch: {got} vectors for {want} texts")]
    CountMismatch { got: usize, want: usize },
    #[error("embedding dimension mismatch in batch")]
    DimMismatch,
    #[error("elicitation needs at least one non-empty text sample")]
    NoSamples,
    #[error("non-document prefix in analyzer output")]
    NonDocumentPrefix,
    #[error(transparent)]
    Schema(#[from] crate::schema::SchemaError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub model_id: String,
    pub prompt: String,
    pub max_output_chars: usize,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl GenerationRequest {
    pub fn new(model_id: &str, prompt: &str) -> Self {
        GenerationRequest {
            model_id: model_id.to_owned(),
            prompt: prompt.to_owned(),
            max_output_chars: 4000,
            // Decoding defaults are unverified against any published setup.
            temperature: 0.7,
            seed: None,
        }
    }

    fn validate(&self) -> Result<(), ProviderError> {
        if self.prompt.is_empty() {
            return Err(ProviderError::EmptyPrompt);
        }
        if self.max_output_chars == 0 {
            return Err(ProviderError::BadMaxChars);
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GenerationResult {
    pub text: String,
    pub model_id: String,
    pub latency_ms: u64,
    /// 1 on first success; retries + 1 otherwise.
    pub attempt: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Single-call provider surface; retry behavior lives in [`Gateway`].
pub trait Provider: Send + Sync {
    fn generate_raw(&self, req: &GenerationRequest) -> Result<String, ProviderError>;
    fn embed_raw(&self, texts: &[String], model_id: &str) -> Result<Vec<Vec<f64>>, ProviderError>;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub timeout_s: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            backoff_base_ms: 500,
            timeout_s: 60,
        }
    }
}

/// Provider configuration file. Credentials are referenced by environment
/// variable name, never stored inline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProviderConfig {
    /// "stub" or an HTTP endpoint URL.
    pub endpoint: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    /// Logical name -> provider model identifier.
    #[serde(default)]
    pub models: HashMap<String, String>,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
}

fn default_concurrency() -> usize {
    4
}

impl ProviderConfig {
    pub fn stub() -> Self {
        ProviderConfig {
            endpoint: "stub".to_owned(),
            api_key_env: None,
            models: HashMap::new(),
            concurrency: 4,
            retry: RetryPolicy {
                backoff_base_ms: 0,
                ..RetryPolicy::default()
            },
        }
    }
}

pub struct Gateway {
    provider: Box<dyn Provider>,
    retry: RetryPolicy,
    concurrency: usize,
}

impl Gateway {
    pub fn new(provider: Box<dyn Provider>, retry: RetryPolicy, concurrency: usize) -> Self {
        Gateway {
            provider,
            retry,
            concurrency: concurrency.max(1),
        }
    }

    pub fn from_config(config: &ProviderConfig) -> Result<Self, ProviderError> {
        let provider: Box<dyn Provider> = if config.endpoint == "stub" {
            Box::new(StubProvider::default())
        } else {
            Box::new(HttpProvider::from_config(config)?)
        };
        Ok(Gateway::new(provider, config.retry.clone(), config.concurrency))
    }

    /// Generates with retry on transient failures (throttling, network);
    /// backoff doubles per attempt from the configured base.
    pub fn generate(&self, req: &GenerationRequest) -> Result<GenerationResult, ProviderError> {
        req.validate()?;
        let started = Instant::now();
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            match self.provider.generate_raw(req) {
                Ok(text) if text.is_empty() => return Err(ProviderError::EmptyGeneration),
                Ok(text) => {
                    return Ok(GenerationResult {
                        text,
                        model_id: req.model_id.clone(),
                        latency_ms: started.elapsed().as_millis() as u64,
                        attempt,
                    })
                }
                Err(e @ (ProviderError::Throttled | ProviderError::Network(_)))
                    if attempt <= self.retry.max_retries =>
                {
                    let delay = self.retry.backoff_base_ms.saturating_mul(1 << (attempt - 1));
                    if delay > 0 {
                        std::thread::sleep(Duration::from_millis(delay));
                    }
                    let _ = e;
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Runs a batch with bounded worker threads; the output order matches
    /// the input order regardless of scheduling.
    pub fn generate_batch(
        &self,
        reqs: &[GenerationRequest],
    ) -> Vec<Result<GenerationResult, ProviderError>> {
        let results: Mutex<Vec<Option<Result<GenerationResult, ProviderError>>>> =
            Mutex::new((0..reqs.len()).map(|_| None).collect());
        let cursor = AtomicUsize::new(0);
        let workers = self.concurrency.min(reqs.len()).max(1);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = cursor.fetch_add(1, Ordering::SeqCst);
                    if i >= reqs.len() {
                        break;
                    }
                    let result = self.generate(&reqs[i]);
                    results.lock().expect("results lock")[i] = Some(result);
                });
            }
        });
        results
            .into_inner()
            .expect("results lock")
            .into_iter()
            .map(|r| r.expect("every index visited"))
            .collect()
    }

    pub fn embed(
        &self,
        texts: &[String],
        model_id: &str,
    ) -> Result<Vec<EmbeddingVector>, ProviderError> {
        if texts.is_empty() {
            return Err(ProviderError::NoSamples);
        }
        let raw = self.provider.embed_raw(texts, model_id)?;
        if raw.len() != texts.len() {
            return Err(ProviderError::CountMismatch {
                got: raw.len(),
                want: texts.len(),
            });
        }
        let dim = raw[0].len();
        if raw.iter().any(|v| v.len() != dim) {
            return Err(ProviderError::DimMismatch);
        }
        Ok(raw.into_iter().map(|values| EmbeddingVector { values }).collect())
    }

    /// Phase-1 elicitation: sends the analysis prompt with the canonical
    /// schema and the concatenated samples, strips a whole-payload code
    /// fence if present, and validates the result as a complete profile.
    pub fn elicit_profile(
        &self,
        persona_id: &str,
        persona_texts: &[String],
        analyzer_model: &str,
    ) -> Result<PilotProfile, ProviderError> {
        if persona_texts.iter().all(|t| t.trim().is_empty()) {
            return Err(ProviderError::NoSamples);
        }
        let prompt = render_elicit_prompt(persona_texts);
        let result = self.generate(&GenerationRequest::new(analyzer_model, &prompt))?;
        let payload = strip_whole_fence(result.text.trim());
        if !payload.starts_with('{') {
            return Err(ProviderError::NonDocumentPrefix);
        }
        let mut profile = parse_profile(payload)?;
        profile.persona_id = persona_id.to_owned();
        profile.source = ProfileSource::Elicited;
        Ok(profile)
    }
}

pub fn render_elicit_prompt(persona_texts: &[String]) -> String {
    let samples = persona_texts.join("\n\n");
    ELICIT_TEMPLATE
        .trim_end_matches('\n')
        .replace("{schema}", SCHEMA_JSON.trim_end_matches('\n'))
        .replace("{text}", &samples)
}

/// Removes a leading/trailing triple-backtick fence iff it wraps the whole
/// payload; any other extraneous text is left for the caller to reject.
fn strip_whole_fence(text: &str) -> &str {
    let trimmed = text.trim();
    if !trimmed.starts_with("```") || !trimmed.ends_with("```") || trimmed.len() < 6 {
        return trimmed;
    }
    let inner = &trimmed[3..trimmed.len() - 3];
    // Drop an optional language hint on the opening fence line.
    let inner = match inner.split_once('\n') {
        Some((first, rest)) if !first.contains('{') => rest,
        _ => inner,
    };
    inner.trim()
}

fn hash64(parts: &[&[u8]]) -> u64 {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update(p);
        hasher.update([0u8]);
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// Offline deterministic provider. Three built-in pseudo-models (stub-a,
/// stub-b, stub-c) differ in sentence length and vocabulary breadth so stub
/// corpora have distinguishable per-model statistics.
#[derive(Debug, Default, Clone)]
pub struct StubProvider;

struct StubParams {
    sentences: usize,
    words_per_sentence: usize,
    pool_size: usize,
}

fn stub_params(model_id: &str) -> StubParams {
    match model_id {
        "stub-a" => StubParams {
            sentences: 4,
            words_per_sentence: 8,
            pool_size: 24,
        },
        "stub-b" => StubParams {
            sentences: 6,
            words_per_sentence: 12,
            pool_size: 36,
        },
        "stub-c" => StubParams {
            sentences: 9,
            words_per_sentence: 15,
            pool_size: 48,
        },
        other => {
            let h = hash64(&[other.as_bytes()]);
            StubParams {
                sentences: 4 + (h % 5) as usize,
                words_per_sentence: 8 + (h / 7 % 8) as usize,
                pool_size: 24 + (h / 11 % 24) as usize,
            }
        }
    }
}

impl Provider for StubProvider {
    fn generate_raw(&self, req: &GenerationRequest) -> Result<String, ProviderError> {
        if req.prompt.contains(ELICIT_MARKER) {
            return Ok(self.stub_profile_document(req));
        }
        let body = self.stub_body(req);
        if req.prompt.contains(TAGGED_MARKER) {
            Ok(format!(
                "<explanation> Matched profile parameters to the request. </explanation>\n\n<response> {body} </response>"
            ))
        } else {
            Ok(body)
        }
    }

    fn embed_raw(&self, texts: &[String], model_id: &str) -> Result<Vec<Vec<f64>>, ProviderError> {
        const DIM: usize = 16;
        Ok(texts
            .iter()
            .map(|t| {
                let mut values = Vec::with_capacity(DIM);
                for i in 0..DIM {
                    let h = hash64(&[model_id.as_bytes(), t.as_bytes(), &[i as u8]]);
                    values.push((h % 2000) as f64 / 1000.0 - 1.0);
                }
                let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    for v in &mut values {
                        *v /= norm;
                    }
                }
                values
            })
            .collect())
    }
}

impl StubProvider {
    fn stub_body(&self, req: &GenerationRequest) -> String {
        let words: Vec<&str> = STUB_WORDS.lines().filter(|l| !l.is_empty()).collect();
        let params = stub_params(&req.model_id);
        let seed = req.seed.unwrap_or(0);

        // The vocabulary window depends only on the prompt: identical
        // prompts share a topical pool.
        let pool_hash = hash64(&[req.prompt.as_bytes()]);
        let pool_start = (pool_hash % (words.len() - params.pool_size) as u64) as usize;
        let pool = &words[pool_start..pool_start + params.pool_size];

        let mut state = hash64(&[
            req.prompt.as_bytes(),
            req.model_id.as_bytes(),
            &seed.to_le_bytes(),
        ]);
        let mut next = || {
            // splitmix64
            state = state.wrapping_add(0x9E3779B97F4A7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
            z ^ (z >> 31)
        };

        let mut out = String::new();
        for s in 0..params.sentences {
            if s > 0 {
                out.push(' ');
            }
            let len = params.words_per_sentence - 1 + (next() % 3) as usize;
            for w in 0..len {
                let word = pool[(next() % pool.len() as u64) as usize];
                if w == 0 {
                    let mut chars = word.chars();
                    let first = chars.next().expect("words are non-empty");
                    out.extend(first.to_uppercase());
                    out.push_str(chars.as_str());
                } else {
                    out.push(' ');
                    out.push_str(word);
                }
            }
            out.push('.');
            if out.chars().count() >= req.max_output_chars {
                break;
            }
        }
        out.chars().take(req.max_output_chars).collect()
    }

    fn stub_profile_document(&self, req: &GenerationRequest) -> String {
        let mut profile = PilotProfile::uniform("", 50.0).expect("uniform profile is valid");
        let seed = req.seed.unwrap_or(0);
        for path in crate::schema::canonical_paths() {
            let h = hash64(&[
                req.prompt.as_bytes(),
                path.to_string().as_bytes(),
                &seed.to_le_bytes(),
            ]);
            profile
                .set_score(path, (h % 101) as f64)
                .expect("canonical path with in-range score");
        }
        crate::schema::serialize_profile(&profile)
    }
}

/// HTTP adapter: one POST endpoint taking the structured request and
/// returning `{"text": ...}` (or `{"vectors": [[..]]}` for embeddings).
pub struct HttpProvider {
    endpoint: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpProvider {
    pub fn from_config(config: &ProviderConfig) -> Result<Self, ProviderError> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                ProviderError::Provider(format!("credential variable {var} is not set"))
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.retry.timeout_s))
            .build()
            .map_err(|e| ProviderError::Network(e.to_string()))?;
        Ok(HttpProvider {
            endpoint: config.endpoint.clone(),
            api_key,
            client,
        })
    }

    fn post(&self, body: &serde_json::Value) -> Result<serde_json::Value, ProviderError> {
        let mut request = self.client.post(&self.endpoint).json(body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request
            .send()
            .map_err(|e| ProviderError::Network(e.to_string()))?;
        let status = response.status();
        if status.as_u16() == 429 || status.as_u16() == 503 {
            return Err(ProviderError::Throttled);
        }
        if !status.is_success() {
            return Err(ProviderError::Provider(format!("status {status}")));
        }
        response
            .json()
            .map_err(|e| ProviderError::Provider(e.to_string()))
    }
}

impl Provider for HttpProvider {
    fn generate_raw(&self, req: &GenerationRequest) -> Result<String, ProviderError> {
        let body = serde_json::to_value(req).expect("requests serialize");
        let reply = self.post(&body)?;
        match reply.get("text").and_then(serde_json::Value::as_str) {
            Some(text) if !text.is_empty() => Ok(text.to_owned()),
            Some(_) => Err(ProviderError::EmptyGeneration),
            None => Err(ProviderError::Provider("reply missing text field".into())),
        }
    }

    fn embed_raw(&self, texts: &[String], model_id: &str) -> Result<Vec<Vec<f64>>, ProviderError> {
        let body = serde_json::json!({ "model_id": model_id, "texts": texts });
        let reply = self.post(&body)?;
        serde_json::from_value(
            reply
                .get("vectors")
                .cloned()
                .ok_or_else(|| ProviderError::Provider("reply missing vectors field".into()))?,
        )
        .map_err(|e| ProviderError::Provider(e.to_string()))
    }
}
