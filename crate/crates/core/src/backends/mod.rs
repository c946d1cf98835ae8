//! Model roles consumed by the pipeline.
//!
//! Each role (selector, embedder, cross-modal scorer, clue extractor,
//! summarizer) has its own trait. [`http`] talks to live services, [`mock`]
//! replays a transcript, and [`recording`] captures a transcript from any
//! other implementation.

pub mod http;
pub mod mock;
pub mod recording;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("backend timed out")]
    Timeout,
    #[error("backend unreachable: {0}")]
    Unreachable(String),
    #[error("backend returned status {0}")]
    Status(u16),
    #[error("malformed backend response: {0}")]
    Protocol(String),
    #[error("selector output matches no candidate: {0:?}")]
    Unparseable(String),
    #[error("embedding dimension {got} does not match expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding has non-finite components")]
    NonFinite,
    #[error("image could not be decoded")]
    ImageDecode,
    #[error("no transcript entry for {role} request {fingerprint}")]
    MockMiss { role: Role, fingerprint: String },
}

impl BackendError {
    /// Errors meaning the service itself is unavailable, as opposed to a bad
    /// answer to one request.
    pub fn is_unavailable(&self) -> bool {
        matches!(
            self,
            BackendError::Timeout | BackendError::Unreachable(_) | BackendError::Status(502..=504)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Select,
    Embed,
    Xmodal,
    I2t,
    Summarize,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Select => "select",
            Role::Embed => "embed",
            Role::Xmodal => "xmodal",
            Role::I2t => "i2t",
            Role::Summarize => "summarize",
        })
    }
}

/// Image-to-text model family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClueKind {
    Ocr,
    Cap,
    Den,
    Tag,
}

impl ClueKind {
    pub const ALL: [ClueKind; 4] = [ClueKind::Ocr, ClueKind::Cap, ClueKind::Den, ClueKind::Tag];

    pub fn as_str(self) -> &'static str {
        match self {
            ClueKind::Ocr => "ocr",
            ClueKind::Cap => "cap",
            ClueKind::Den => "den",
            ClueKind::Tag => "tag",
        }
    }

    /// Label used when a clue is rendered into a prompt.
    pub fn label(self) -> &'static str {
        match self {
            ClueKind::Ocr => "OCR",
            ClueKind::Cap => "CAP",
            ClueKind::Den => "DEN",
            ClueKind::Tag => "TAG",
        }
    }
}

impl fmt::Display for ClueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClueKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ocr" => Ok(ClueKind::Ocr),
            "cap" => Ok(ClueKind::Cap),
            "den" => Ok(ClueKind::Den),
            "tag" => Ok(ClueKind::Tag),
            other => Err(format!("unknown clue kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisualClue {
    pub kind: ClueKind,
    pub text: String,
}

impl VisualClue {
    pub fn new(kind: ClueKind, text: impl Into<String>) -> Self {
        Self {
            kind,
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateText {
    pub name: String,
    pub description: String,
}

/// Prompt for the entity selector. Serializes to the `/v1/select` wire body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorRequest {
    pub instruction: String,
    pub mention: String,
    pub context: String,
    pub clues: Vec<VisualClue>,
    pub candidates: Vec<CandidateText>,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Choice {
    Entity(String),
    Nil,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectorResponse {
    pub choice: Choice,
    pub raw_text: String,
}

/// Maps raw selector output onto a candidate name or `nil`.
///
/// Exact trimmed match wins; then the `nil` marker; then a case-insensitive
/// match, which must be unique.
pub fn parse_selection(raw: &str, candidates: &[CandidateText]) -> Result<Choice, BackendError> {
    let answer = raw.trim();
    if let Some(c) = candidates.iter().find(|c| c.name.trim() == answer) {
        return Ok(Choice::Entity(c.name.clone()));
    }
    if answer.eq_ignore_ascii_case("nil") {
        return Ok(Choice::Nil);
    }
    let folded = answer.to_lowercase();
    let mut matches = candidates
        .iter()
        .filter(|c| c.name.trim().to_lowercase() == folded);
    match (matches.next(), matches.next()) {
        (Some(c), None) => Ok(Choice::Entity(c.name.clone())),
        _ => Err(BackendError::Unparseable(raw.to_string())),
    }
}

pub trait EntitySelector: Send + Sync {
    /// Raw model output for the prompt.
    fn generate(&self, request: &SelectorRequest) -> Result<String, BackendError>;
}

/// Queries the selector and classifies its answer.
pub fn select_entity(
    selector: &dyn EntitySelector,
    request: &SelectorRequest,
) -> Result<SelectorResponse, BackendError> {
    let raw_text = selector.generate(request)?;
    let choice = parse_selection(&raw_text, &request.candidates)?;
    Ok(SelectorResponse { choice, raw_text })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, BackendError> {
        if values.iter().all(|v| v.is_finite()) {
            Ok(Self(values))
        } else {
            Err(BackendError::NonFinite)
        }
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub trait TextEmbedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError>;
}

pub trait CrossModalScorer: Send + Sync {
    /// 100 × cosine between the text and image embeddings.
    fn score(&self, text: &str, image: &[u8]) -> Result<f64, BackendError>;
}

pub trait ClueExtractor: Send + Sync {
    fn extract(&self, image: &[u8], kind: ClueKind) -> Result<VisualClue, BackendError>;
}

pub trait DescriptionSummarizer: Send + Sync {
    fn summarize(&self, text: &str, max_chars: usize) -> Result<String, BackendError>;
}

/// Cosine similarity; `None` when either vector has zero norm or the
/// dimensions differ.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Option<f64> {
    if a.dimension() != b.dimension() {
        return None;
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    let dot: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x / na) * (y / nb))
        .sum();
    Some(dot.clamp(-1.0, 1.0))
}

/// Shared handles to every model role.
#[derive(Clone)]
pub struct Backends {
    pub selector: Arc<dyn EntitySelector>,
    pub embedder: Arc<dyn TextEmbedder>,
    pub cross_modal: Arc<dyn CrossModalScorer>,
    pub clues: Arc<dyn ClueExtractor>,
    pub summarizer: Arc<dyn DescriptionSummarizer>,
}

impl Backends {
    /// Uses one object for every role.
    pub fn uniform<B>(backend: Arc<B>) -> Self
    where
        B: EntitySelector
            + TextEmbedder
            + CrossModalScorer
            + ClueExtractor
            + DescriptionSummarizer
            + 'static,
    {
        Self {
            selector: backend.clone(),
            embedder: backend.clone(),
            cross_modal: backend.clone(),
            clues: backend.clone(),
            summarizer: backend,
        }
    }
}

impl fmt::Debug for Backends {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Backends").finish_non_exhaustive()
    }
}
