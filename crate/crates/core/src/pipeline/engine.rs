use std::time::Instant;

use crate::backends::{
    cosine, parse_selection, BackendError, Backends, Choice, CrossModalScorer, EntitySelector,
    TextEmbedder, VisualClue,
};
use crate::kg::{EntityRecord, KgSnapshot};
use crate::retrieval::{retrieve_topk, CandidateSet};

use super::context::{build_entity_context, build_mention_context, build_selector_request};
use super::trace::{FallbackRule, LinkTrace, TraceEvent};
use super::{
    ClueInjection, LinkError, LinkResult, MentionSample, PipelineConfig, PipelineFailure,
    Prediction,
};

fn backend(stage: &'static str) -> impl Fn(BackendError) -> PipelineFailure {
    move |error| PipelineFailure::Backend { stage, error }
}

/// Cosine of the two text embeddings.
pub fn icr_score(
    mention_context: &str,
    entity_context: &str,
    embedder: &dyn TextEmbedder,
) -> Result<f64, PipelineFailure> {
    let m = embedder.embed(mention_context).map_err(backend("embed"))?;
    let e = embedder.embed(entity_context).map_err(backend("embed"))?;
    score_embeddings(&m, &e)
}

fn score_embeddings(
    m: &crate::backends::EmbeddingVector,
    e: &crate::backends::EmbeddingVector,
) -> Result<f64, PipelineFailure> {
    if m.dimension() != e.dimension() {
        return Err(PipelineFailure::DimensionMismatch(m.dimension(), e.dimension()));
    }
    cosine(m, e).ok_or(PipelineFailure::DegenerateEmbedding)
}

/// Alignment of the entity description (not its name) with the mention image.
pub fn iav_score(
    entity: &EntityRecord,
    image: &[u8],
    scorer: &dyn CrossModalScorer,
) -> Result<f64, PipelineFailure> {
    scorer
        .score(&entity.description, image)
        .map_err(backend("xmodal"))
}

/// One selector call over `candidates`, recording a `tes` event.
///
/// Returns `None` for nil. An empty candidate set is nil without a backend
/// call. When no answer parses within `selector_max_attempts`, the top
/// candidate is used and an `unparseable` fallback is recorded.
#[allow(clippy::too_many_arguments)]
pub fn run_tes<'kg>(
    sample: &MentionSample,
    candidates: &CandidateSet,
    clues: &[VisualClue],
    selector: &dyn EntitySelector,
    kg: &'kg KgSnapshot,
    config: &PipelineConfig,
    round: usize,
    trace: &mut LinkTrace,
) -> Result<Option<&'kg EntityRecord>, PipelineFailure> {
    let records = candidates
        .ids()
        .map(|id| kg.get(id).ok_or_else(|| PipelineFailure::UnknownEntity(id.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let Some(top) = records.first().copied() else {
        trace.push(TraceEvent::Tes {
            round,
            chosen: None,
            raw: None,
            attempts: 0,
        });
        return Ok(None);
    };
    let request = build_selector_request(sample, &records, clues, config);
    let mut raw = String::new();
    for attempt in 1..=config.selector_max_attempts {
        raw = selector.generate(&request).map_err(backend("select"))?;
        match parse_selection(&raw, &request.candidates) {
            Ok(Choice::Nil) => {
                trace.push(TraceEvent::Tes {
                    round,
                    chosen: None,
                    raw: Some(raw),
                    attempts: attempt,
                });
                return Ok(None);
            }
            Ok(Choice::Entity(name)) => {
                // duplicate names resolve to the best-ranked candidate
                let entity = records
                    .iter()
                    .copied()
                    .find(|e| e.name == name)
                    .expect("parsed name comes from the candidate list");
                trace.push(TraceEvent::Tes {
                    round,
                    chosen: Some(entity.id.clone()),
                    raw: Some(raw),
                    attempts: attempt,
                });
                return Ok(Some(entity));
            }
            Err(_) => {
                tracing::debug!(round, attempt, raw = %raw, "unparseable selector output");
            }
        }
    }
    trace.push(TraceEvent::Tes {
        round,
        chosen: Some(top.id.clone()),
        raw: Some(raw),
        attempts: config.selector_max_attempts,
    });
    trace.push(TraceEvent::Fallback {
        round: Some(round),
        rule: FallbackRule::Unparseable,
        entity: Some(top.id.clone()),
    });
    Ok(Some(top))
}

struct Selection<'kg> {
    entity: &'kg EntityRecord,
    icr_ok: bool,
}

/// Selection plus consistency checks for one round.
#[allow(clippy::too_many_arguments)]
fn select_consistent<'kg>(
    sample: &MentionSample,
    pool: &CandidateSet,
    clues: &[VisualClue],
    kg: &'kg KgSnapshot,
    backends: &Backends,
    config: &PipelineConfig,
    round: usize,
    trace: &mut LinkTrace,
) -> Result<Option<Selection<'kg>>, PipelineFailure> {
    let mut remaining = pool.clone();
    let mut last: Option<&EntityRecord> = None;
    let mut mention_embedding = None;
    let mut checks = 0;
    loop {
        let picked = run_tes(
            sample,
            &remaining,
            clues,
            backends.selector.as_ref(),
            kg,
            config,
            round,
            trace,
        )?;
        let Some(entity) = picked else {
            if let Some(prev) = last {
                trace.push(TraceEvent::Fallback {
                    round: Some(round),
                    rule: FallbackRule::IcrExhausted,
                    entity: Some(prev.id.clone()),
                });
                return Ok(Some(Selection {
                    entity: prev,
                    icr_ok: false,
                }));
            }
            return Ok(None);
        };
        if !config.enable_icr {
            return Ok(Some(Selection {
                entity,
                icr_ok: true,
            }));
        }
        let m = match &mention_embedding {
            Some(m) => m,
            None => {
                let text = build_mention_context(&sample.mention, &sample.context, clues);
                let m = backends.embedder.embed(&text).map_err(backend("embed"))?;
                mention_embedding.insert(m)
            }
        };
        let e = backends
            .embedder
            .embed(&build_entity_context(entity))
            .map_err(backend("embed"))?;
        let score = score_embeddings(m, &e)?;
        let passed = score > config.alpha;
        trace.push(TraceEvent::Icr {
            round,
            entity: entity.id.clone(),
            score,
            threshold: config.alpha,
            passed,
        });
        checks += 1;
        if passed {
            return Ok(Some(Selection {
                entity,
                icr_ok: true,
            }));
        }
        if checks >= config.icr_retry_limit {
            trace.push(TraceEvent::Fallback {
                round: Some(round),
                rule: FallbackRule::IcrRetryLimit,
                entity: Some(entity.id.clone()),
            });
            return Ok(Some(Selection {
                entity,
                icr_ok: false,
            }));
        }
        last = Some(entity);
        remaining = remaining.without([entity.id.as_str()]);
    }
}

/// Runs the state machine over a fixed candidate pool and returns its trace,
/// which always ends in a `final` event.
pub(super) fn run_pipeline(
    sample: &MentionSample,
    kg: &KgSnapshot,
    backends: &Backends,
    config: &PipelineConfig,
    pool: &CandidateSet,
) -> Result<LinkTrace, LinkError> {
    let mut trace = LinkTrace::default();
    match run_rounds(sample, kg, backends, config, pool, &mut trace) {
        Ok(()) => Ok(trace),
        Err(failure) => Err(LinkError { failure, trace }),
    }
}

fn run_rounds(
    sample: &MentionSample,
    kg: &KgSnapshot,
    backends: &Backends,
    config: &PipelineConfig,
    pool: &CandidateSet,
    trace: &mut LinkTrace,
) -> Result<(), PipelineFailure> {
    config.validate()?;
    trace.push(TraceEvent::Retrieval {
        candidates: pool.entries.clone(),
    });
    let image = sample.image.as_deref().filter(|_| config.enable_vif || config.enable_iav);
    let feedback_image = image.filter(|_| config.enable_vif);
    let max_rounds = if feedback_image.is_some() {
        config.max_rounds()
    } else {
        1
    };

    let mut clues: Vec<VisualClue> = Vec::new();
    if let (Some(img), ClueInjection::AllAtOnce) = (feedback_image, config.clue_injection) {
        for &kind in &config.clue_order {
            let clue = backends.clues.extract(img, kind).map_err(backend("i2t"))?;
            trace.push(TraceEvent::Vif {
                round: 1,
                kind,
                text: clue.text.clone(),
            });
            clues.push(clue);
        }
    }

    // (round, entity, alignment score) for every round whose pick failed the image gate
    let mut misaligned: Vec<(usize, &EntityRecord, f64)> = Vec::new();
    for round in 1..=max_rounds {
        if round >= 2 {
            let img = feedback_image.expect("extra rounds require an image");
            let kind = config.clue_order[round - 2];
            let clue = backends.clues.extract(img, kind).map_err(backend("i2t"))?;
            trace.push(TraceEvent::Vif {
                round,
                kind,
                text: clue.text.clone(),
            });
            clues.push(clue);
        }

        let Some(selection) =
            select_consistent(sample, pool, &clues, kg, backends, config, round, trace)?
        else {
            continue;
        };

        let gate_image = image.filter(|_| config.enable_iav);
        let Some(img) = gate_image else {
            trace.push(TraceEvent::Final {
                prediction: Some(selection.entity.id.clone()),
                accepted: selection.icr_ok,
            });
            return Ok(());
        };
        let score = iav_score(selection.entity, img, backends.cross_modal.as_ref())?;
        let passed = score > config.beta;
        trace.push(TraceEvent::Iav {
            round,
            entity: selection.entity.id.clone(),
            score,
            threshold: config.beta,
            passed,
        });
        if passed {
            trace.push(TraceEvent::Final {
                prediction: Some(selection.entity.id.clone()),
                accepted: selection.icr_ok,
            });
            return Ok(());
        }
        misaligned.push((round, selection.entity, score));
    }

    // later rounds win ties
    let best = misaligned
        .iter()
        .max_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)));
    match best {
        Some((_, entity, _)) => {
            trace.push(TraceEvent::Fallback {
                round: None,
                rule: FallbackRule::MaxIav,
                entity: Some(entity.id.clone()),
            });
            trace.push(TraceEvent::Final {
                prediction: Some(entity.id.clone()),
                accepted: false,
            });
        }
        None => trace.push(TraceEvent::Final {
            prediction: None,
            accepted: false,
        }),
    }
    Ok(())
}

pub(super) fn final_prediction(trace: &LinkTrace) -> (Prediction, bool) {
    let (prediction, accepted) = trace
        .final_event()
        .expect("completed trace ends with a final event");
    (Prediction::from(prediction.map(str::to_string)), accepted)
}

/// Links one mention to a KG entity or nil.
pub fn link(
    sample: &MentionSample,
    kg: &KgSnapshot,
    backends: &Backends,
    config: &PipelineConfig,
) -> Result<LinkResult, LinkError> {
    let started = Instant::now();
    config.validate().map_err(|e| LinkError {
        failure: e.into(),
        trace: LinkTrace::default(),
    })?;
    let pool = retrieve_topk(&sample.mention, kg, config.k);
    let trace = run_pipeline(sample, kg, backends, config, &pool)?;
    let (prediction, _) = final_prediction(&trace);
    Ok(LinkResult {
        topk: vec![prediction.clone()],
        prediction,
        trace,
        reselection: Vec::new(),
        wall_time: started.elapsed().as_secs_f64(),
    })
}
