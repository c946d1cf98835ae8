#![allow(dead_code)]

use i2cr_core::instruction::{export_instructions, validate_record, InstructionRecord};
use i2cr_core::pipeline::DEFAULT_INSTRUCTION;
use i2cr_core::retrieval::retrieve_topk;
use i2cr_core::synthetic::export_fixture;

pub const EXPORT_SEED: u64 = 77;

/// Exports the 100-sample fixture and checks every record against the
/// validator and the construction-time expectations.
pub fn check_export(k: usize) -> Result<String, String> {
    let (kg, samples) = export_fixture(100, k, EXPORT_SEED);
    let mut buf = Vec::new();
    let summary = export_instructions(&samples, &kg, k, DEFAULT_INSTRUCTION, &mut buf)
        .map_err(|e| e.to_string())?;
    let text = String::from_utf8(buf).map_err(|e| e.to_string())?;
    let records: Vec<InstructionRecord> = text
        .lines()
        .map(serde_json::from_str)
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    if records.len() != samples.len() || summary.written != samples.len() {
        return Err(format!("{} records for {} samples", records.len(), samples.len()));
    }
    let mut expected_hits = 0;
    let mut labeled = 0;
    for (i, (record, sample)) in records.iter().zip(&samples).enumerate() {
        validate_record(record, k).map_err(|e| format!("record {i}: {e}"))?;
        if sample.out_of_kg {
            if record.output != "nil" {
                return Err(format!("record {i}: out-of-KG output `{}`", record.output));
            }
            continue;
        }
        labeled += 1;
        let gold = kg.get(sample.gold_id.as_deref().unwrap()).unwrap();
        if record.output != gold.name {
            return Err(format!("record {i}: output `{}` is not the gold name", record.output));
        }
        let retrieved = retrieve_topk(&sample.mention, &kg, k);
        if retrieved.contains(&gold.id) {
            expected_hits += 1;
        } else if record.input.candidates.last().map(|c| &c.name) != Some(&gold.name) {
            return Err(format!("record {i}: injected gold not in last position"));
        }
    }
    let rate = expected_hits as f64 / labeled as f64;
    if summary.gold_in_topk != expected_hits || summary.gold_in_topk_rate != rate {
        return Err(format!(
            "reported gold-in-topk {}/{}, recount {expected_hits}/{labeled}",
            summary.gold_in_topk, summary.labeled
        ));
    }
    Ok(format!(
        "{} records valid, {} nil, gold-in-topk rate {:.2}",
        summary.written, summary.out_of_kg, summary.gold_in_topk_rate
    ))
}
