//! Scaled synthetic experiments shared by the evaluation tests and the
//! acceptance suite.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use i2cr_core::backends::mock::{MockBackend, MockMode, TranscriptEntry};
use i2cr_core::backends::recording::RecordingBackend;
use i2cr_core::backends::Backends;
use i2cr_core::evaluation::{
    clue_order_sweep, parse_ablations, render_table, round_accuracy_curve, run_ablation,
    topk_accuracy, avg_response_time, AblationDelta, EvalOptions, EvalRecord, EvalReport,
    NilScoring,
};
use i2cr_core::pipeline::{PipelineConfig, Prediction};
use i2cr_core::synthetic::{steering_fixture, SteeringFixture};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEERING_SEED: u64 = 20_240_601;

pub fn options() -> EvalOptions {
    EvalOptions {
        record_timing: false,
        workers: 4,
        ..EvalOptions::default()
    }
}

#[derive(Debug)]
pub struct Steering {
    pub curve: Vec<(usize, f64)>,
    pub ablations: Vec<(AblationDelta, EvalReport)>,
    pub sweep: Vec<EvalReport>,
}

impl Steering {
    pub fn report(&self, label: &str) -> Option<&EvalReport> {
        self.ablations
            .iter()
            .find(|(d, _)| d.label() == label)
            .map(|(_, r)| r)
    }
}

pub fn run_steering(fx: &SteeringFixture, backends: &Backends) -> Result<Steering, String> {
    let config = PipelineConfig::default();
    let opts = options();
    let curve = round_accuracy_curve(&fx.samples, &fx.kg, backends, &config, &opts)
        .map_err(|e| e.to_string())?;
    let deltas = parse_ablations("full; w/o b; w/o c; w/o d; w/o bcd; w/o ocr,cap; all-at-once")
        .map_err(|e| e.to_string())?;
    let ablations = run_ablation(&fx.samples, &fx.kg, backends, &config, &deltas, &opts)
        .map_err(|e| e.to_string())?;
    let sweep = clue_order_sweep(&fx.samples, &fx.kg, backends, &config, &opts)
        .map_err(|e| e.to_string())?;
    Ok(Steering {
        curve,
        ablations,
        sweep,
    })
}

/// Runs the experiment once against the rule-based models while recording a
/// transcript, then replays it from a strict mock and returns both results.
pub fn record_and_replay(fx: &SteeringFixture) -> Result<(Steering, Steering, Vec<TranscriptEntry>), String> {
    let recorder = RecordingBackend::new(fx.backends());
    let recorded = run_steering(fx, &Backends::uniform(recorder.clone()))?;
    let transcript = recorder.transcript();
    let mock = MockBackend::try_new(transcript.clone(), MockMode::Strict).map_err(|e| e.to_string())?;
    let replayed = run_steering(fx, &Backends::uniform(Arc::new(mock)))?;
    Ok((recorded, replayed, transcript))
}

/// Checks the expected shape; returns a one-line summary on success.
pub fn check_steering(fx: &SteeringFixture, s: &Steering) -> Result<String, String> {
    let n = fx.samples.len() as f64;
    let text_only = fx.text_resolvable() as f64 / n;
    for w in s.curve.windows(2) {
        if w[1].1 < w[0].1 {
            return Err(format!("curve decreases: {:?}", s.curve));
        }
    }
    // each round adds exactly the samples needing the newly available clue
    let per_kind = (fx.samples.len() / 10) as f64 / n;
    for (i, (round, acc)) in s.curve.iter().enumerate() {
        let want = text_only + per_kind * i as f64;
        if *round != i + 1 || (acc - want).abs() > 1e-12 {
            return Err(format!("round {round}: accuracy {acc}, expected {want}"));
        }
    }
    let full = s.report("full").ok_or("missing full report")?.accuracy[&1];
    let bare = s.report("w/o bcd").ok_or("missing w/o bcd report")?.accuracy[&1];
    let all_at_once = s.report("all-at-once").ok_or("missing all-at-once report")?;
    if (bare - text_only).abs() > 1e-12 {
        return Err(format!("text-only accuracy {bare}, expected {text_only}"));
    }
    if full - bare < 0.30 - 1e-12 {
        return Err(format!("full {full} - text-only {bare} < 0.30"));
    }
    let fingerprints: std::collections::BTreeSet<&str> = s
        .ablations
        .iter()
        .map(|(_, r)| r.config_fingerprint.as_str())
        .collect();
    if fingerprints.len() != s.ablations.len() {
        return Err("ablation configs are not distinct".into());
    }
    for (_, r) in &s.ablations {
        if !r.is_monotone() {
            return Err(format!("report `{}` not monotone in K", r.label));
        }
    }
    Ok(format!(
        "curve {:?}; full {full:.2}, w/o bcd {bare:.2}, all-at-once {:.2}",
        s.curve.iter().map(|(_, a)| *a).collect::<Vec<_>>(),
        all_at_once.accuracy[&1]
    ))
}

pub fn check_sweep(s: &Steering) -> Result<String, String> {
    if s.sweep.len() != 24 {
        return Err(format!("{} orders evaluated", s.sweep.len()));
    }
    let labels: std::collections::BTreeSet<&str> = s.sweep.iter().map(|r| r.label.as_str()).collect();
    if labels.len() != 24 {
        return Err("order labels are not distinct".into());
    }
    let first = s.sweep[0].accuracy[&1];
    if let Some(r) = s.sweep.iter().find(|r| r.accuracy[&1] != first) {
        return Err(format!("order {} gives {} vs {first}", r.label, r.accuracy[&1]));
    }
    let table = render_table(&s.sweep);
    if table.lines().count() < 25 {
        return Err("comparison table is incomplete".into());
    }
    Ok(format!("24 orders, final Top-1 {first:.2} for all"))
}

pub fn fixture() -> SteeringFixture {
    steering_fixture(200, STEERING_SEED)
}

/// 200 records with a known gold position (or none) and wall times in
/// eighths of a second, so sums are exact.
pub fn metric_fixture(seed: u64) -> Vec<(EvalRecord, Option<usize>, u32)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..200)
        .map(|index| {
            let eighths: u32 = rng.gen_range(0..80);
            let (gold, predictions, position) = if rng.gen_bool(0.1) {
                // nil gold: correct only when the list is exactly [nil]
                let hit = rng.gen_bool(0.5);
                let preds = if hit {
                    vec![Prediction::Nil]
                } else {
                    vec![Prediction::Entity("X".into()), Prediction::Nil]
                };
                (Prediction::Nil, preds, hit.then_some(0))
            } else {
                let len = rng.gen_range(0..=5);
                let mut preds: Vec<Prediction> = (0..len)
                    .map(|j| Prediction::Entity(format!("D{index}-{j}")))
                    .collect();
                let position = if len > 0 && rng.gen_bool(0.7) {
                    let p = rng.gen_range(0..len);
                    preds[p] = Prediction::Entity("G".into());
                    Some(p)
                } else {
                    None
                };
                (Prediction::Entity("G".into()), preds, position)
            };
            let record = EvalRecord {
                index,
                mention: format!("m{index}"),
                gold,
                predictions,
                correct_at: BTreeMap::new(),
                rounds: 1,
                wall_time: f64::from(eighths) / 8.0,
                error: None,
            };
            (record, position, eighths)
        })
        .collect()
}

/// Recounts accuracy from the construction-time gold positions and checks
/// monotonicity in K.
pub fn check_metrics(seed: u64) -> Result<String, String> {
    let fixture = metric_fixture(seed);
    let records: Vec<EvalRecord> = fixture.iter().map(|(r, _, _)| r.clone()).collect();
    let mut last = 0.0;
    for k in 1..=6 {
        let hits = fixture
            .iter()
            .filter(|(_, pos, _)| pos.is_some_and(|p| p < k))
            .count();
        let want = hits as f64 / fixture.len() as f64;
        let got = topk_accuracy(&records, k, NilScoring::Strict).map_err(|e| e.to_string())?;
        if got != want {
            return Err(format!("top-{k}: {got} vs recount {want}"));
        }
        if got < last {
            return Err(format!("top-{k} decreased"));
        }
        last = got;

        let entity_rows: Vec<_> = fixture.iter().filter(|(r, _, _)| !r.gold.is_nil()).collect();
        let hits = entity_rows.iter().filter(|(_, pos, _)| pos.is_some_and(|p| p < k)).count();
        let want = hits as f64 / entity_rows.len() as f64;
        let got = topk_accuracy(&records, k, NilScoring::IgnoreNil).map_err(|e| e.to_string())?;
        if got != want {
            return Err(format!("ignore-nil top-{k}: {got} vs recount {want}"));
        }
    }
    let total: u32 = fixture.iter().map(|(_, _, t)| t).sum();
    let want = f64::from(total) / 8.0 / fixture.len() as f64;
    let got = avg_response_time(&records).map_err(|e| e.to_string())?;
    if got != want {
        return Err(format!("avg time {got} vs recount {want}"));
    }
    Ok(format!("top-1..6 and avg time match recount (avg {got:.4}s)"))
}
