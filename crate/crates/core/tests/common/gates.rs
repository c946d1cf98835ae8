//! Numeric checks for the two reflection scores and their gates.

#![allow(dead_code)]

use std::sync::Arc;

use i2cr_core::backends::mock::{MockMode, TranscriptBuilder};
use i2cr_core::kg::EntityRecord;
use i2cr_core::pipeline::{iav_score, icr_score, PipelineFailure};

pub fn cosine_examples() -> Result<(), String> {
    // hand-computed: cos((1,1),(1,0)) = 1/sqrt(2)
    let cases: [(&[f64], &[f64], f64); 4] = [
        (&[0.3, -0.4, 1.2], &[0.3, -0.4, 1.2], 1.0),
        (&[1.0, 0.0], &[0.0, 1.0], 0.0),
        (&[1.0, 1.0], &[1.0, 0.0], 0.707_106_781_186_547_5),
        (&[2.0, 0.0], &[-3.0, 0.0], -1.0),
    ];
    for (a, b, want) in cases {
        let mock = Arc::new(
            TranscriptBuilder::new()
                .embed("mention side", a)
                .embed("entity side", b)
                .into_backend(MockMode::Strict),
        );
        let got = icr_score("mention side", "entity side", mock.as_ref())
            .map_err(|e| e.to_string())?;
        if (got - want).abs() > 1e-6 {
            return Err(format!("cosine({a:?}, {b:?}) = {got}, expected {want}"));
        }
    }
    let mock = TranscriptBuilder::new()
        .embed("zero", &[0.0, 0.0])
        .embed("x", &[1.0, 0.0])
        .into_backend(MockMode::Strict);
    match icr_score("zero", "x", &mock) {
        Err(PipelineFailure::DegenerateEmbedding) => Ok(()),
        other => Err(format!("zero vector should be degenerate, got {other:?}")),
    }
}

pub fn alignment_passthrough_and_strict_gate() -> Result<(), String> {
    let image = b"img".as_slice();
    let entity = EntityRecord::new("Q1", "Paris", "Capital of France");
    let mock = TranscriptBuilder::new()
        .xmodal("Capital of France", image, 35.0)
        .into_backend(MockMode::Strict);
    let score = iav_score(&entity, image, &mock).map_err(|e| e.to_string())?;
    if score != 35.0 {
        return Err(format!("passthrough gave {score}"));
    }
    // the name alone is never scored
    let by_name = TranscriptBuilder::new()
        .xmodal("Paris", image, 99.0)
        .into_backend(MockMode::Strict);
    if iav_score(&entity, image, &by_name).is_ok() {
        return Err("alignment must use the description".into());
    }
    let beta = 31.0;
    if !(35.0 > beta) || (31.0_f64 > beta) {
        return Err("strict gate".into());
    }
    Ok(())
}
