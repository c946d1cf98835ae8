//! Captures a replayable transcript from any set of backends.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use serde_json::{json, Value};

use super::mock::{
    embed_fingerprint, i2t_fingerprint, select_fingerprint, summarize_fingerprint,
    xmodal_fingerprint, TranscriptEntry,
};
use super::{
    BackendError, Backends, ClueExtractor, ClueKind, CrossModalScorer, DescriptionSummarizer,
    EmbeddingVector, EntitySelector, Role, SelectorRequest, TextEmbedder, VisualClue,
};

/// Forwards every call to `inner` and records successful responses.
///
/// Failed calls are not recorded, so replaying the transcript in strict mode
/// turns them into misses.
pub struct RecordingBackend {
    inner: Backends,
    log: Mutex<BTreeMap<(Role, String), Value>>,
}

impl RecordingBackend {
    pub fn new(inner: Backends) -> Arc<Self> {
        Arc::new(Self {
            inner,
            log: Mutex::new(BTreeMap::new()),
        })
    }

    fn record(&self, role: Role, fingerprint: String, response: Value) {
        self.log
            .lock()
            .expect("recording log poisoned")
            .insert((role, fingerprint), response);
    }

    /// Entries in (role, fingerprint) order.
    pub fn transcript(&self) -> Vec<TranscriptEntry> {
        self.log
            .lock()
            .expect("recording log poisoned")
            .iter()
            .map(|((role, fp), response)| TranscriptEntry {
                role: *role,
                request_fingerprint: fp.clone(),
                response: response.clone(),
            })
            .collect()
    }
}

impl EntitySelector for RecordingBackend {
    fn generate(&self, request: &SelectorRequest) -> Result<String, BackendError> {
        let text = self.inner.selector.generate(request)?;
        self.record(Role::Select, select_fingerprint(request), json!({"text": text}));
        Ok(text)
    }
}

impl TextEmbedder for RecordingBackend {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        let vector = self.inner.embedder.embed(text)?;
        self.record(Role::Embed, embed_fingerprint(text), json!({"vector": vector}));
        Ok(vector)
    }
}

impl CrossModalScorer for RecordingBackend {
    fn score(&self, text: &str, image: &[u8]) -> Result<f64, BackendError> {
        let score = self.inner.cross_modal.score(text, image)?;
        self.record(Role::Xmodal, xmodal_fingerprint(text, image), json!({"score": score}));
        Ok(score)
    }
}

impl ClueExtractor for RecordingBackend {
    fn extract(&self, image: &[u8], kind: ClueKind) -> Result<VisualClue, BackendError> {
        let clue = self.inner.clues.extract(image, kind)?;
        self.record(Role::I2t, i2t_fingerprint(image, kind), json!({"text": clue.text}));
        Ok(clue)
    }
}

impl DescriptionSummarizer for RecordingBackend {
    fn summarize(&self, text: &str, max_chars: usize) -> Result<String, BackendError> {
        let summary = self.inner.summarizer.summarize(text, max_chars)?;
        self.record(
            Role::Summarize,
            summarize_fingerprint(text, max_chars),
            json!({"text": summary}),
        );
        Ok(summary)
    }
}
