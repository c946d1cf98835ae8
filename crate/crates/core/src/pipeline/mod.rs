//! The linking state machine: selection, consistency gate, alignment gate,
//! and the visual-clue feedback loop.

mod config;
mod context;
mod engine;
mod topk;
pub mod trace;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::BackendError;

pub use config::{
    parse_clue_list, ClueInjection, ClueList, ConfigError, DatasetPreset, PipelineConfig,
    DEFAULT_INSTRUCTION,
};
pub use context::{
    build_entity_context, build_mention_context, build_selector_request, render_clue,
};
pub use engine::{iav_score, icr_score, link, run_tes};
pub use topk::link_topk;
pub use trace::{validate_trace, FallbackRule, LinkTrace, TraceEvent, TraceViolation};

/// One mention to link.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MentionSample {
    pub mention: String,
    pub context: String,
    pub image: Option<Arc<[u8]>>,
    pub gold_id: Option<String>,
    /// Gold is known to be outside the KG; the expected answer is nil.
    pub out_of_kg: bool,
}

impl MentionSample {
    pub fn new(mention: impl Into<String>, context: impl Into<String>) -> Self {
        Self {
            mention: mention.into(),
            context: context.into(),
            image: None,
            gold_id: None,
            out_of_kg: false,
        }
    }

    pub fn with_image(mut self, image: impl Into<Arc<[u8]>>) -> Self {
        self.image = Some(image.into());
        self
    }

    pub fn with_gold(mut self, gold_id: impl Into<String>) -> Self {
        self.gold_id = Some(gold_id.into());
        self
    }

    pub fn out_of_kg(mut self) -> Self {
        self.out_of_kg = true;
        self
    }

    /// Gold answer as a prediction; `None` when the sample is unlabeled.
    pub fn gold(&self) -> Option<Prediction> {
        if self.out_of_kg {
            Some(Prediction::Nil)
        } else {
            self.gold_id.clone().map(Prediction::Entity)
        }
    }
}

/// An entity id, or nil (serialized as JSON `null`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Prediction {
    Entity(String),
    Nil,
}

impl Prediction {
    pub fn entity(&self) -> Option<&str> {
        match self {
            Prediction::Entity(id) => Some(id),
            Prediction::Nil => None,
        }
    }

    pub fn is_nil(&self) -> bool {
        matches!(self, Prediction::Nil)
    }
}

impl From<Option<String>> for Prediction {
    fn from(value: Option<String>) -> Self {
        value.map_or(Prediction::Nil, Prediction::Entity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkResult {
    pub prediction: Prediction,
    pub topk: Vec<Prediction>,
    pub trace: LinkTrace,
    /// Traces of the extra runs used to fill a Top-K list.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reselection: Vec<LinkTrace>,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineFailure {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("{stage} backend failed: {error}")]
    Backend {
        stage: &'static str,
        error: BackendError,
    },
    #[error("zero-norm embedding for consistency scoring")]
    DegenerateEmbedding,
    #[error("embedding dimensions differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("entity `{0}` missing from the knowledge graph")]
    UnknownEntity(String),
}

impl PipelineFailure {
    pub fn backend(&self) -> Option<&BackendError> {
        match self {
            PipelineFailure::Backend { error, .. } => Some(error),
            _ => None,
        }
    }
}

/// A failed link attempt with the events recorded before the failure.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{failure}")]
pub struct LinkError {
    pub failure: PipelineFailure,
    pub trace: LinkTrace,
}
