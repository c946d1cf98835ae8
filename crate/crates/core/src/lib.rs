//! Multimodal entity linking engine.
//!
//! A mention (surface string, textual context, optional image) is linked to an
//! entity of a local knowledge-graph snapshot in four stages:
//!
//! 1. lexical Top-k retrieval over entity names and aliases ([`retrieval`]),
//!    followed by an LLM choosing one candidate or `nil`;
//! 2. a text-text consistency gate on the chosen entity (threshold `alpha`);
//! 3. a text-image alignment gate on the entity description (threshold `beta`);
//! 4. when the image gate fails, one image-to-text clue is extracted and the
//!    selection is repeated with that clue in context.
//!
//! Every model the pipeline consumes sits behind a trait in [`backends`], with
//! an HTTP adapter for live services and a transcript-driven mock for
//! reproducible runs.

pub mod backends;
pub mod digest;
pub mod evaluation;
pub mod instruction;
pub mod kg;
pub mod pipeline;
pub mod retrieval;
pub mod synthetic;

pub use backends::{BackendError, Backends, ClueKind, VisualClue};
pub use kg::{EntityRecord, KgError, KgFormat, KgSnapshot};
pub use pipeline::{
    link, link_topk, ClueInjection, LinkError, LinkResult, LinkTrace, MentionSample,
    PipelineConfig, Prediction,
};
pub use retrieval::{retrieve_topk, CandidateSet, LexicalScore};
