//! Instruction-tuning records for the entity selector.

use std::collections::BTreeSet;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::CandidateText;
use crate::kg::KgSnapshot;
use crate::pipeline::MentionSample;
use crate::retrieval::retrieve_topk;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionInput {
    pub mention: String,
    pub context: String,
    pub candidates: Vec<CandidateText>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub instruction: String,
    pub input: InstructionInput,
    pub output: String,
}

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("sample {0} has neither a gold id nor an out-of-KG flag")]
    MissingGold(usize),
    #[error("sample {index}: gold entity `{id}` is not in the knowledge graph")]
    UnknownGold { index: usize, id: String },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("failed to write instructions: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub written: usize,
    /// Records whose output is an entity name.
    pub labeled: usize,
    /// Labeled records whose gold came back from lexical retrieval unaided.
    pub gold_in_topk: usize,
    pub out_of_kg: usize,
    pub gold_in_topk_rate: f64,
}

/// Checks a record: output is `nil` or exactly one candidate name, and at
/// most `k` candidates are listed.
pub fn validate_record(record: &InstructionRecord, k: usize) -> Result<(), String> {
    let candidates = &record.input.candidates;
    if candidates.len() > k {
        return Err(format!("{} candidates exceed k = {k}", candidates.len()));
    }
    if record.output == "nil" {
        return Ok(());
    }
    match candidates.iter().filter(|c| c.name == record.output).count() {
        1 => Ok(()),
        0 => Err(format!("output `{}` is not a candidate name", record.output)),
        n => Err(format!("output `{}` matches {n} candidates", record.output)),
    }
}

/// Builds the record for one sample. The flag reports whether the gold
/// entity was retrieved without injection.
pub fn build_record(
    index: usize,
    sample: &MentionSample,
    kg: &KgSnapshot,
    k: usize,
    instruction: &str,
) -> Result<(InstructionRecord, bool), ExportError> {
    if k == 0 {
        return Err(ExportError::ZeroK);
    }
    let gold = match (&sample.gold_id, sample.out_of_kg) {
        (_, true) => None,
        (Some(id), false) => Some(
            kg.get(id)
                .ok_or_else(|| ExportError::UnknownGold {
                    index,
                    id: id.clone(),
                })?,
        ),
        (None, false) => return Err(ExportError::MissingGold(index)),
    };
    let mut ids: Vec<String> = retrieve_topk(&sample.mention, kg, k)
        .ids()
        .map(str::to_string)
        .collect();
    let mut retrieved = false;
    if let Some(gold) = gold {
        retrieved = ids.contains(&gold.id);
        if !retrieved {
            if ids.len() == k {
                ids.pop();
            }
            ids.push(gold.id.clone());
        }
    }
    let candidates: Vec<CandidateText> = ids
        .iter()
        .map(|id| {
            let e = kg.get(id).expect("retrieved ids exist");
            CandidateText {
                name: e.name.clone(),
                description: e.description.clone(),
            }
        })
        .collect();
    let record = InstructionRecord {
        instruction: instruction.to_string(),
        input: InstructionInput {
            mention: sample.mention.clone(),
            context: sample.context.clone(),
            candidates,
        },
        output: gold.map_or_else(|| "nil".to_string(), |g| g.name.clone()),
    };
    Ok((record, retrieved))
}

/// Writes one JSONL record per sample, in dataset order.
pub fn export_instructions<W: Write>(
    samples: &[MentionSample],
    kg: &KgSnapshot,
    k: usize,
    instruction: &str,
    mut out: W,
) -> Result<ExportSummary, ExportError> {
    let built = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| build_record(i, s, kg, k, instruction))
        .collect::<Result<Vec<_>, _>>()?;
    let mut summary = ExportSummary::default();
    let mut names_seen = BTreeSet::new();
    for (record, retrieved) in &built {
        serde_json::to_writer(&mut out, record).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
        summary.written += 1;
        if record.output == "nil" {
            summary.out_of_kg += 1;
        } else {
            summary.labeled += 1;
            summary.gold_in_topk += usize::from(*retrieved);
            names_seen.insert(record.output.as_str());
        }
    }
    out.flush()?;
    summary.gold_in_topk_rate = if summary.labeled == 0 {
        0.0
    } else {
        summary.gold_in_topk as f64 / summary.labeled as f64
    };
    tracing::info!(
        written = summary.written,
        distinct_labels = names_seen.len(),
        gold_in_topk_rate = summary.gold_in_topk_rate,
        "exported instructions"
    );
    Ok(summary)
}
