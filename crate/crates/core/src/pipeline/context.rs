//! Text views of mentions and entities fed to the embedder and selector.

use crate::backends::{CandidateText, SelectorRequest, VisualClue};
use crate::kg::EntityRecord;

use super::{MentionSample, PipelineConfig};

/// `<KIND>: <text>`
pub fn render_clue(clue: &VisualClue) -> String {
    format!("{}: {}", clue.kind.label(), clue.text)
}

/// Mention, context, and rendered clues joined by newlines. Empty segments
/// are dropped.
pub fn build_mention_context(mention: &str, context: &str, clues: &[VisualClue]) -> String {
    let rendered: Vec<String> = clues.iter().map(render_clue).collect();
    [mention, context]
        .into_iter()
        .chain(rendered.iter().map(String::as_str))
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn build_entity_context(entity: &EntityRecord) -> String {
    if entity.description.is_empty() {
        entity.name.clone()
    } else {
        format!("{}\n{}", entity.name, entity.description)
    }
}

pub fn build_selector_request(
    sample: &MentionSample,
    candidates: &[&EntityRecord],
    clues: &[VisualClue],
    config: &PipelineConfig,
) -> SelectorRequest {
    SelectorRequest {
        instruction: config.instruction.clone(),
        mention: sample.mention.clone(),
        context: sample.context.clone(),
        clues: clues.to_vec(),
        candidates: candidates
            .iter()
            .map(|e| CandidateText {
                name: e.name.clone(),
                description: e.description.clone(),
            })
            .collect(),
        temperature: config.temperature,
    }
}
