//! Transcript-driven mock for every model role.
//!
//! A transcript is JSONL, one `{role, request_fingerprint, response}` object
//! per line. The fingerprint is the SHA-256 of the canonical JSON of the
//! semantic request fields, so transcripts survive changes to wire encoding.
//!
//! Response bodies per role:
//!
//! | role        | response                  |
//! |-------------|---------------------------|
//! | `select`    | `{"text": str}`           |
//! | `embed`     | `{"vector": [f64]}`       |
//! | `xmodal`    | `{"score": f64}`          |
//! | `i2t`       | `{"text": str}`           |
//! | `summarize` | `{"text": str}`           |
//!
//! Any response may instead be `{"error": "timeout" | "unreachable" | "status:<code>" | "image"}`.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::{
    cosine, BackendError, ClueExtractor, ClueKind, CrossModalScorer, DescriptionSummarizer,
    EmbeddingVector, EntitySelector, Role, SelectorRequest, TextEmbedder, VisualClue,
};
use crate::digest::{self, sha256_hex};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub role: Role,
    pub request_fingerprint: String,
    pub response: Value,
}

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("failed to read transcript: {0}")]
    Io(#[from] std::io::Error),
    #[error("transcript line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("conflicting responses for {role} request {fingerprint}")]
    Conflict { role: Role, fingerprint: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MockMode {
    /// A request absent from the transcript is an error.
    #[default]
    Strict,
    /// Absent requests get a role-specific default answer.
    Lenient,
}

impl FromStr for MockMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "strict" => Ok(MockMode::Strict),
            "lenient" => Ok(MockMode::Lenient),
            other => Err(format!("unknown mock mode `{other}`")),
        }
    }
}

pub fn select_fingerprint(request: &SelectorRequest) -> String {
    digest::fingerprint(&json!({"role": Role::Select, "request": request}))
}

pub fn embed_fingerprint(text: &str) -> String {
    digest::fingerprint(&json!({"role": Role::Embed, "text": text}))
}

pub fn xmodal_fingerprint(text: &str, image: &[u8]) -> String {
    digest::fingerprint(&json!({
        "role": Role::Xmodal,
        "text": text,
        "image_sha256": sha256_hex(image),
    }))
}

pub fn i2t_fingerprint(image: &[u8], kind: ClueKind) -> String {
    digest::fingerprint(&json!({
        "role": Role::I2t,
        "image_sha256": sha256_hex(image),
        "kind": kind,
    }))
}

pub fn summarize_fingerprint(text: &str, max_chars: usize) -> String {
    digest::fingerprint(&json!({
        "role": Role::Summarize,
        "text": text,
        "max_chars": max_chars,
    }))
}

pub fn read_transcript(path: impl AsRef<Path>) -> Result<Vec<TranscriptEntry>, TranscriptError> {
    let file = std::fs::File::open(path)?;
    let mut entries = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line).map_err(|e| TranscriptError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        entries.push(entry);
    }
    Ok(entries)
}

/// Writes entries sorted by (role, fingerprint) so equal transcripts are
/// byte-identical.
pub fn write_transcript<W: Write>(
    mut writer: W,
    entries: &[TranscriptEntry],
) -> std::io::Result<()> {
    let mut sorted: Vec<&TranscriptEntry> = entries.iter().collect();
    sorted.sort_by(|a, b| {
        (a.role, &a.request_fingerprint).cmp(&(b.role, &b.request_fingerprint))
    });
    for entry in sorted {
        writeln!(writer, "{}", digest::canonical_json(entry))?;
    }
    Ok(())
}

pub struct MockBackend {
    table: HashMap<(Role, String), Value>,
    mode: MockMode,
    embed_dimension: usize,
}

impl MockBackend {
    /// Later duplicates of an identical entry are ignored; use
    /// [`MockBackend::try_new`] to reject conflicting duplicates.
    pub fn new(entries: Vec<TranscriptEntry>, mode: MockMode) -> Self {
        let mut table = HashMap::new();
        let mut embed_dimension = None;
        for entry in entries {
            if entry.role == Role::Embed && embed_dimension.is_none() {
                embed_dimension = entry.response["vector"].as_array().map(Vec::len);
            }
            table
                .entry((entry.role, entry.request_fingerprint))
                .or_insert(entry.response);
        }
        Self {
            table,
            mode,
            embed_dimension: embed_dimension.unwrap_or(1),
        }
    }

    pub fn try_new(entries: Vec<TranscriptEntry>, mode: MockMode) -> Result<Self, TranscriptError> {
        let mut seen: HashMap<(Role, &str), &Value> = HashMap::new();
        for entry in &entries {
            if let Some(prev) = seen.insert((entry.role, &entry.request_fingerprint), &entry.response) {
                if prev != &entry.response {
                    return Err(TranscriptError::Conflict {
                        role: entry.role,
                        fingerprint: entry.request_fingerprint.clone(),
                    });
                }
            }
        }
        Ok(Self::new(entries, mode))
    }

    pub fn from_file(path: impl AsRef<Path>, mode: MockMode) -> Result<Self, TranscriptError> {
        Self::try_new(read_transcript(path)?, mode)
    }

    pub fn mode(&self) -> MockMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// `Ok(None)` is a lenient miss.
    fn lookup(&self, role: Role, fingerprint: String) -> Result<Option<&Value>, BackendError> {
        match self.table.get(&(role, fingerprint.clone())) {
            Some(value) => {
                if let Some(error) = value.get("error").and_then(Value::as_str) {
                    return Err(scripted_error(error));
                }
                Ok(Some(value))
            }
            None if self.mode == MockMode::Lenient => Ok(None),
            None => Err(BackendError::MockMiss { role, fingerprint }),
        }
    }
}

fn scripted_error(spec: &str) -> BackendError {
    match spec {
        "timeout" => BackendError::Timeout,
        "unreachable" => BackendError::Unreachable("scripted".into()),
        "image" => BackendError::ImageDecode,
        other => match other.strip_prefix("status:").and_then(|c| c.parse().ok()) {
            Some(code) => BackendError::Status(code),
            None => BackendError::Protocol(format!("scripted error `{other}`")),
        },
    }
}

fn field<'a>(value: &'a Value, key: &str) -> Result<&'a Value, BackendError> {
    value
        .get(key)
        .ok_or_else(|| BackendError::Protocol(format!("transcript response lacks `{key}`")))
}

fn text_field(value: &Value) -> Result<String, BackendError> {
    field(value, "text")?
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| BackendError::Protocol("`text` is not a string".into()))
}

impl EntitySelector for MockBackend {
    fn generate(&self, request: &SelectorRequest) -> Result<String, BackendError> {
        match self.lookup(Role::Select, select_fingerprint(request))? {
            Some(value) => text_field(value),
            None => Ok(request
                .candidates
                .first()
                .map(|c| c.name.clone())
                .unwrap_or_else(|| "nil".into())),
        }
    }
}

impl TextEmbedder for MockBackend {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        match self.lookup(Role::Embed, embed_fingerprint(text))? {
            Some(value) => {
                let values: Vec<f64> = serde_json::from_value(field(value, "vector")?.clone())
                    .map_err(|e| BackendError::Protocol(e.to_string()))?;
                if values.len() != self.embed_dimension {
                    return Err(BackendError::DimensionMismatch {
                        expected: self.embed_dimension,
                        got: values.len(),
                    });
                }
                EmbeddingVector::new(values)
            }
            None => EmbeddingVector::new(vec![0.0; self.embed_dimension]),
        }
    }
}

impl CrossModalScorer for MockBackend {
    fn score(&self, text: &str, image: &[u8]) -> Result<f64, BackendError> {
        if image.is_empty() {
            return Err(BackendError::ImageDecode);
        }
        match self.lookup(Role::Xmodal, xmodal_fingerprint(text, image))? {
            Some(value) => field(value, "score")?
                .as_f64()
                .filter(|s| s.is_finite())
                .ok_or_else(|| BackendError::Protocol("`score` is not a finite number".into())),
            None => Ok(0.0),
        }
    }
}

impl ClueExtractor for MockBackend {
    fn extract(&self, image: &[u8], kind: ClueKind) -> Result<VisualClue, BackendError> {
        if image.is_empty() {
            return Err(BackendError::ImageDecode);
        }
        let text = match self.lookup(Role::I2t, i2t_fingerprint(image, kind))? {
            Some(value) => text_field(value)?,
            None => String::new(),
        };
        Ok(VisualClue { kind, text })
    }
}

impl DescriptionSummarizer for MockBackend {
    fn summarize(&self, text: &str, max_chars: usize) -> Result<String, BackendError> {
        let fingerprint = summarize_fingerprint(text, max_chars);
        match self.table.get(&(Role::Summarize, fingerprint.clone())) {
            Some(value) => match value.get("error").and_then(Value::as_str) {
                Some(error) => Err(scripted_error(error)),
                None => text_field(value),
            },
            // no sensible default summary exists, so this misses in both modes
            None => Err(BackendError::MockMiss {
                role: Role::Summarize,
                fingerprint,
            }),
        }
    }
}

/// Builds transcripts in code, keyed the same way the mock looks them up.
#[derive(Debug, Clone, Default)]
pub struct TranscriptBuilder {
    entries: Vec<TranscriptEntry>,
}

impl TranscriptBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(mut self, role: Role, request_fingerprint: String, response: Value) -> Self {
        self.entries.push(TranscriptEntry {
            role,
            request_fingerprint,
            response,
        });
        self
    }

    pub fn select(self, request: &SelectorRequest, answer: &str) -> Self {
        self.push(Role::Select, select_fingerprint(request), json!({"text": answer}))
    }

    pub fn embed(self, text: &str, vector: &[f64]) -> Self {
        self.push(Role::Embed, embed_fingerprint(text), json!({"vector": vector}))
    }

    pub fn xmodal(self, text: &str, image: &[u8], score: f64) -> Self {
        self.push(Role::Xmodal, xmodal_fingerprint(text, image), json!({"score": score}))
    }

    pub fn clue(self, image: &[u8], kind: ClueKind, text: &str) -> Self {
        self.push(Role::I2t, i2t_fingerprint(image, kind), json!({"text": text}))
    }

    pub fn summarize(self, text: &str, max_chars: usize, summary: &str) -> Self {
        self.push(
            Role::Summarize,
            summarize_fingerprint(text, max_chars),
            json!({"text": summary}),
        )
    }

    /// Scripts a failure (`"timeout"`, `"status:500"`, ...) for a raw fingerprint.
    pub fn error(self, role: Role, request_fingerprint: String, error: &str) -> Self {
        self.push(role, request_fingerprint, json!({"error": error}))
    }

    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    pub fn build(self) -> Vec<TranscriptEntry> {
        self.entries
    }

    pub fn into_backend(self, mode: MockMode) -> MockBackend {
        MockBackend::new(self.entries, mode)
    }
}

/// Cross-modal scorer over fixed text and image embedding tables, returning
/// 100 × cosine.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingTableScorer {
    texts: HashMap<String, EmbeddingVector>,
    images: HashMap<String, EmbeddingVector>,
}

impl EmbeddingTableScorer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn text(mut self, text: &str, vector: EmbeddingVector) -> Self {
        self.texts.insert(text.to_string(), vector);
        self
    }

    pub fn image(mut self, image: &[u8], vector: EmbeddingVector) -> Self {
        self.images.insert(sha256_hex(image), vector);
        self
    }
}

impl CrossModalScorer for EmbeddingTableScorer {
    fn score(&self, text: &str, image: &[u8]) -> Result<f64, BackendError> {
        if image.is_empty() {
            return Err(BackendError::ImageDecode);
        }
        let miss = |role_fp: String| BackendError::MockMiss {
            role: Role::Xmodal,
            fingerprint: role_fp,
        };
        let t = self.texts.get(text).ok_or_else(|| miss(embed_fingerprint(text)))?;
        let i = self
            .images
            .get(&sha256_hex(image))
            .ok_or_else(|| miss(sha256_hex(image)))?;
        cosine(t, i)
            .map(|c| 100.0 * c)
            .ok_or_else(|| BackendError::Protocol("degenerate embedding".into()))
    }
}
