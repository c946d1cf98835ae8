use std::collections::HashMap;
use std::time::Instant;

use crate::backends::Backends;
use crate::kg::KgSnapshot;
use crate::retrieval::retrieve_topk;

use super::engine::{final_prediction, run_pipeline};
use super::trace::{LinkTrace, TraceEvent};
use super::{LinkError, LinkResult, MentionSample, PipelineConfig, Prediction};

/// Best score seen for an entity that failed a gate. Alignment scores, once
/// observed, replace consistency scores.
#[derive(Default)]
struct GateMisses {
    scores: HashMap<String, (bool, f64)>,
}

impl GateMisses {
    fn observe(&mut self, trace: &LinkTrace) {
        for event in &trace.events {
            match event {
                TraceEvent::Icr {
                    entity,
                    score,
                    passed: false,
                    ..
                } => self.note(entity, false, *score),
                TraceEvent::Iav {
                    entity,
                    score,
                    passed: false,
                    ..
                } => self.note(entity, true, *score),
                _ => {}
            }
        }
    }

    fn note(&mut self, entity: &str, from_iav: bool, score: f64) {
        let slot = self
            .scores
            .entry(entity.to_string())
            .or_insert((from_iav, score));
        match (slot.0, from_iav) {
            (false, true) => *slot = (true, score),
            (a, b) if a == b && score > slot.1 => slot.1 = score,
            _ => {}
        }
    }
}

/// Ranked list of up to `top_k` predictions.
///
/// The first entry is always what [`super::link`] predicts. While runs end
/// with a prediction that passed every gate, the pipeline is rerun on the
/// candidate pool minus the entities already accepted. Entities that failed a
/// gate follow, best observed score first; remaining lexical candidates pad
/// the list in retrieval order.
pub fn link_topk(
    sample: &MentionSample,
    kg: &KgSnapshot,
    backends: &Backends,
    config: &PipelineConfig,
    top_k: usize,
) -> Result<LinkResult, LinkError> {
    let started = Instant::now();
    config.validate().map_err(|e| LinkError {
        failure: e.into(),
        trace: LinkTrace::default(),
    })?;
    let top_k = top_k.max(1);
    let pool = retrieve_topk(&sample.mention, kg, config.k);
    let trace = run_pipeline(sample, kg, backends, config, &pool)?;
    let (prediction, accepted) = final_prediction(&trace);

    let Prediction::Entity(first) = &prediction else {
        return Ok(LinkResult {
            prediction: Prediction::Nil,
            topk: vec![Prediction::Nil],
            trace,
            reselection: Vec::new(),
            wall_time: started.elapsed().as_secs_f64(),
        });
    };

    let mut misses = GateMisses::default();
    misses.observe(&trace);
    let mut ranked: Vec<String> = vec![first.clone()];
    let mut reselection = Vec::new();
    let mut keep_going = accepted;
    while keep_going && ranked.len() < top_k {
        let rest = pool.without(ranked.iter().map(String::as_str));
        if rest.is_empty() {
            break;
        }
        let extra = run_pipeline(sample, kg, backends, config, &rest)?;
        misses.observe(&extra);
        let (next, ok) = final_prediction(&extra);
        reselection.push(extra);
        match next {
            Prediction::Entity(id) if ok => ranked.push(id),
            _ => keep_going = false,
        }
    }

    let lexical_rank = |id: &str| pool.ids().position(|c| c == id).unwrap_or(usize::MAX);
    let mut failed: Vec<(&String, f64)> = misses
        .scores
        .iter()
        .filter(|(id, _)| !ranked.contains(id))
        .map(|(id, (_, score))| (id, *score))
        .collect();
    failed.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| lexical_rank(a.0).cmp(&lexical_rank(b.0)))
    });
    ranked.extend(failed.into_iter().map(|(id, _)| id.clone()));
    for id in pool.ids() {
        if !ranked.iter().any(|r| r == id) {
            ranked.push(id.to_string());
        }
    }
    ranked.truncate(top_k);

    Ok(LinkResult {
        prediction,
        topk: ranked.into_iter().map(Prediction::Entity).collect(),
        trace,
        reselection,
        wall_time: started.elapsed().as_secs_f64(),
    })
}
