//! JSON-over-HTTP adapter for live model services.
//!
//! Endpoints, all `POST` with UTF-8 JSON bodies:
//!
//! ```text
//! /v1/select    {instruction, mention, context, clues, candidates, temperature} -> {text}
//! /v1/embed     {texts: [str]}                                                 -> {vectors: [[f64]]}
//! /v1/xmodal    {text, image_b64}                                              -> {score}
//! /v1/i2t       {image_b64, kind}                                              -> {text}
//! /v1/summarize {text, max_chars}                                              -> {text}
//! ```

use std::collections::HashMap;
use std::sync::{Condvar, Mutex, OnceLock};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    BackendError, ClueExtractor, ClueKind, CrossModalScorer, DescriptionSummarizer,
    EmbeddingVector, EntitySelector, SelectorRequest, TextEmbedder, VisualClue,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpBackendConfig {
    pub base_url: String,
    pub timeout: Duration,
    /// Total attempts per request, including the first.
    pub max_attempts: u32,
    pub backoff_base: Duration,
    pub max_in_flight: usize,
    /// Expected embedding width; learned from the first response when unset.
    pub embedding_dimension: Option<usize>,
}

impl HttpBackendConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            timeout: Duration::from_secs(60),
            max_attempts: 3,
            backoff_base: Duration::from_millis(200),
            max_in_flight: 8,
            embedding_dimension: None,
        }
    }
}

/// Counting semaphore bounding in-flight requests.
struct Gate {
    available: Mutex<usize>,
    freed: Condvar,
}

impl Gate {
    fn new(permits: usize) -> Self {
        Self {
            available: Mutex::new(permits.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> GatePermit<'_> {
        let mut available = self.available.lock().expect("gate poisoned");
        while *available == 0 {
            available = self.freed.wait(available).expect("gate poisoned");
        }
        *available -= 1;
        GatePermit { gate: self }
    }
}

struct GatePermit<'a> {
    gate: &'a Gate,
}

impl Drop for GatePermit<'_> {
    fn drop(&mut self) {
        *self.gate.available.lock().expect("gate poisoned") += 1;
        self.gate.freed.notify_one();
    }
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    client: reqwest::blocking::Client,
    gate: Gate,
    embed_cache: Mutex<HashMap<String, EmbeddingVector>>,
    dimension: OnceLock<usize>,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Unreachable(e.to_string()))?;
        let dimension = OnceLock::new();
        if let Some(d) = config.embedding_dimension {
            let _ = dimension.set(d);
        }
        Ok(Self {
            gate: Gate::new(config.max_in_flight),
            config,
            client,
            embed_cache: Mutex::new(HashMap::new()),
            dimension,
        })
    }

    pub fn config(&self) -> &HttpBackendConfig {
        &self.config
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.config.base_url.trim_end_matches('/'), path)
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R, BackendError> {
        let url = self.url(path);
        let attempts = self.config.max_attempts.max(1);
        let mut last = BackendError::Unreachable(url.clone());
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.config.backoff_base * 2u32.pow(attempt - 1));
            }
            let result = {
                let _permit = self.gate.acquire();
                self.post_once(&url, body)
            };
            match result {
                Ok(value) => return Ok(value),
                Err(err) if is_retryable(&err) => {
                    tracing::warn!(%url, attempt, error = %err, "retrying backend request");
                    last = err;
                }
                Err(err) => return Err(err),
            }
        }
        Err(last)
    }

    fn post_once<B: Serialize, R: DeserializeOwned>(&self, url: &str, body: &B) -> Result<R, BackendError> {
        let response = self.client.post(url).json(body).send().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout
            } else {
                BackendError::Unreachable(e.to_string())
            }
        })?;
        let status = response.status();
        if !status.is_success() {
            return Err(BackendError::Status(status.as_u16()));
        }
        response.json().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout
            } else {
                BackendError::Protocol(e.to_string())
            }
        })
    }
}

fn is_retryable(err: &BackendError) -> bool {
    match err {
        BackendError::Timeout | BackendError::Unreachable(_) => true,
        BackendError::Status(code) => *code == 429 || *code >= 500,
        _ => false,
    }
}

#[derive(Deserialize)]
struct TextReply {
    text: String,
}

#[derive(Deserialize)]
struct EmbedReply {
    vectors: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct ScoreReply {
    score: f64,
}

impl EntitySelector for HttpBackend {
    fn generate(&self, request: &SelectorRequest) -> Result<String, BackendError> {
        let reply: TextReply = self.post("/v1/select", request)?;
        Ok(reply.text)
    }
}

impl TextEmbedder for HttpBackend {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        if let Some(hit) = self.embed_cache.lock().expect("cache poisoned").get(text) {
            return Ok(hit.clone());
        }
        let reply: EmbedReply = self.post("/v1/embed", &json!({"texts": [text]}))?;
        let values = reply
            .vectors
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Protocol("empty `vectors`".into()))?;
        let expected = *self.dimension.get_or_init(|| values.len());
        if values.len() != expected {
            return Err(BackendError::DimensionMismatch {
                expected,
                got: values.len(),
            });
        }
        let vector = EmbeddingVector::new(values)?;
        self.embed_cache
            .lock()
            .expect("cache poisoned")
            .insert(text.to_string(), vector.clone());
        Ok(vector)
    }
}

impl CrossModalScorer for HttpBackend {
    fn score(&self, text: &str, image: &[u8]) -> Result<f64, BackendError> {
        if image.is_empty() {
            return Err(BackendError::ImageDecode);
        }
        let reply: ScoreReply = self
            .post(
                "/v1/xmodal",
                &json!({"text": text, "image_b64": BASE64.encode(image)}),
            )
            .map_err(image_status)?;
        if !reply.score.is_finite() {
            return Err(BackendError::Protocol("non-finite score".into()));
        }
        Ok(reply.score)
    }
}

impl ClueExtractor for HttpBackend {
    fn extract(&self, image: &[u8], kind: ClueKind) -> Result<VisualClue, BackendError> {
        if image.is_empty() {
            return Err(BackendError::ImageDecode);
        }
        let reply: TextReply = self
            .post(
                "/v1/i2t",
                &json!({"image_b64": BASE64.encode(image), "kind": kind}),
            )
            .map_err(image_status)?;
        Ok(VisualClue {
            kind,
            text: reply.text,
        })
    }
}

impl DescriptionSummarizer for HttpBackend {
    fn summarize(&self, text: &str, max_chars: usize) -> Result<String, BackendError> {
        let reply: TextReply =
            self.post("/v1/summarize", &json!({"text": text, "max_chars": max_chars}))?;
        Ok(reply.text)
    }
}

/// Image endpoints answer 415/422 for undecodable images.
fn image_status(err: BackendError) -> BackendError {
    match err {
        BackendError::Status(415 | 422) => BackendError::ImageDecode,
        other => other,
    }
}
