//! Scripted-transcript scenarios for the linking state machine. Every backend
//! call is pinned in a strict mock, so an unexpected call fails the scenario.

#![allow(dead_code)]

use std::sync::Arc;

use i2cr_core::backends::mock::{xmodal_fingerprint, MockMode, TranscriptBuilder};
use i2cr_core::backends::{BackendError, Backends, ClueKind, Role, SelectorRequest, VisualClue};
use i2cr_core::kg::{EntityRecord, KgSnapshot};
use i2cr_core::pipeline::{
    build_entity_context, build_mention_context, build_selector_request, link, link_topk,
    run_tes, validate_trace, ClueInjection, FallbackRule, LinkResult, LinkTrace, MentionSample,
    PipelineConfig, PipelineFailure, Prediction, TraceEvent,
};
use i2cr_core::retrieval::retrieve_topk;

pub type Outcome = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

pub struct World {
    pub kg: KgSnapshot,
    pub sample: MentionSample,
    pub config: PipelineConfig,
    pub script: TranscriptBuilder,
}

pub const IMAGE: &[u8] = b"scripted-image-bytes";

fn jordan_kg() -> Vec<EntityRecord> {
    vec![
        EntityRecord::new("Q1", "Michael Jordan", "American basketball player"),
        EntityRecord::new("Q2", "Michael B. Jordan", "American actor"),
        EntityRecord::new("Q3", "Michael I. Jordan", "Professor of machine learning"),
        EntityRecord::new("Q4", "Jordan", "Country in Western Asia"),
        EntityRecord::new("Q5", "Michael Jordan (footballer)", "English footballer"),
    ]
}

impl World {
    pub fn new(records: Vec<EntityRecord>, sample: MentionSample) -> Self {
        Self {
            kg: KgSnapshot::from_records(records).expect("unique ids"),
            sample,
            config: PipelineConfig::default(),
            script: TranscriptBuilder::new(),
        }
    }

    pub fn jordan(with_image: bool) -> Self {
        let sample = MentionSample::new("Michael Jordan", "He gave a talk on Bayesian inference.");
        let sample = if with_image {
            sample.with_image(IMAGE.to_vec())
        } else {
            sample
        };
        Self::new(jordan_kg(), sample)
    }

    fn entity(&self, id: &str) -> &EntityRecord {
        self.kg.get(id).unwrap_or_else(|| panic!("scenario entity {id}"))
    }

    pub fn pool(&self) -> Vec<String> {
        retrieve_topk(&self.sample.mention, &self.kg, self.config.k)
            .ids()
            .map(str::to_string)
            .collect()
    }

    /// Selector request over the lexical pool minus `excluded`.
    pub fn request(&self, excluded: &[&str], clues: &[VisualClue]) -> SelectorRequest {
        let pool = self.pool();
        let records: Vec<&EntityRecord> = pool
            .iter()
            .filter(|id| !excluded.contains(&id.as_str()))
            .map(|id| self.entity(id))
            .collect();
        build_selector_request(&self.sample, &records, clues, &self.config)
    }

    pub fn answer(mut self, excluded: &[&str], clues: &[VisualClue], answer: &str) -> Self {
        let request = self.request(excluded, clues);
        self.script = self.script.select(&request, answer);
        self
    }

    /// Mention context embeds to the x axis.
    pub fn mention_embedding(mut self, clues: &[VisualClue]) -> Self {
        let text = build_mention_context(&self.sample.mention, &self.sample.context, clues);
        self.script = self.script.embed(&text, &[1.0, 0.0]);
        self
    }

    /// Entity context embedding whose cosine with the mention is `score`.
    pub fn icr(mut self, id: &str, score: f64) -> Self {
        let text = build_entity_context(self.entity(id));
        let vector = [score, (1.0 - score * score).sqrt()];
        self.script = self.script.embed(&text, &vector);
        self
    }

    pub fn iav(mut self, id: &str, score: f64) -> Self {
        let description = self.entity(id).description.clone();
        self.script = self.script.xmodal(&description, IMAGE, score);
        self
    }

    pub fn clue(mut self, kind: ClueKind, text: &str) -> Self {
        self.script = self.script.clue(IMAGE, kind, text);
        self
    }

    pub fn backends(&self) -> Backends {
        Backends::uniform(Arc::new(self.script.clone().into_backend(MockMode::Strict)))
    }

    pub fn link(&self) -> Result<LinkResult, String> {
        link(&self.sample, &self.kg, &self.backends(), &self.config).map_err(|e| e.to_string())
    }

    pub fn link_topk(&self, k: usize) -> Result<LinkResult, String> {
        link_topk(&self.sample, &self.kg, &self.backends(), &self.config, k)
            .map_err(|e| e.to_string())
    }

    /// Validates the main trace and any reselection traces, and checks the
    /// prediction.
    pub fn expect(&self, result: &LinkResult, want: Option<&str>) -> Outcome {
        for trace in std::iter::once(&result.trace).chain(&result.reselection) {
            check_trace(trace, &self.config)?;
        }
        let got = result.prediction.entity();
        ensure!(got == want, "prediction {got:?}, expected {want:?}");
        Ok(())
    }
}

pub fn check_trace(trace: &LinkTrace, config: &PipelineConfig) -> Outcome {
    let replayed = validate_trace(trace, config).map_err(|v| format!("invalid trace: {v}"))?;
    let (final_pred, _) = trace.final_event().ok_or("no final event")?;
    ensure!(
        replayed.as_deref() == final_pred,
        "replay {replayed:?} disagrees with final {final_pred:?}"
    );
    Ok(())
}

fn clues(list: &[(ClueKind, &str)]) -> Vec<VisualClue> {
    list.iter().map(|(k, t)| VisualClue::new(*k, *t)).collect()
}

fn count(trace: &LinkTrace, f: impl Fn(&TraceEvent) -> bool) -> usize {
    trace.count(f)
}

fn is_tes(e: &TraceEvent) -> bool {
    matches!(e, TraceEvent::Tes { .. })
}
fn is_icr(e: &TraceEvent) -> bool {
    matches!(e, TraceEvent::Icr { .. })
}
fn is_iav(e: &TraceEvent) -> bool {
    matches!(e, TraceEvent::Iav { .. })
}
fn is_vif(e: &TraceEvent) -> bool {
    matches!(e, TraceEvent::Vif { .. })
}
fn has_fallback(trace: &LinkTrace, rule: FallbackRule) -> bool {
    trace
        .events
        .iter()
        .any(|e| matches!(e, TraceEvent::Fallback { rule: r, .. } if *r == rule))
}

pub fn icr_retry_then_success() -> Outcome {
    let w = World::jordan(true)
        .answer(&[], &[], "Michael Jordan")
        .answer(&["Q1"], &[], "Michael B. Jordan")
        .answer(&["Q1", "Q2"], &[], "Michael I. Jordan")
        .mention_embedding(&[])
        .icr("Q1", 0.2)
        .icr("Q2", 0.3)
        .icr("Q3", 0.9)
        .iav("Q3", 40.0);
    let r = w.link()?;
    w.expect(&r, Some("Q3"))?;
    ensure!(count(&r.trace, is_tes) == 3, "tes events");
    ensure!(count(&r.trace, is_icr) == 3, "icr events");
    ensure!(
        count(&r.trace, |e| matches!(e, TraceEvent::Iav { passed: true, .. })) == 1,
        "one passing iav"
    );
    ensure!(count(&r.trace, is_vif) == 0, "no clues needed");
    ensure!(r.trace.final_event() == Some((Some("Q3"), true)), "accepted");
    Ok(())
}

pub fn icr_retry_limit_keeps_last() -> Outcome {
    let w = World::jordan(true)
        .answer(&[], &[], "Michael Jordan")
        .answer(&["Q1"], &[], "Michael B. Jordan")
        .answer(&["Q1", "Q2"], &[], "Michael I. Jordan")
        .mention_embedding(&[])
        .icr("Q1", 0.2)
        .icr("Q2", 0.3)
        .icr("Q3", 0.45)
        .iav("Q3", 40.0);
    let r = w.link()?;
    w.expect(&r, Some("Q3"))?;
    ensure!(count(&r.trace, is_icr) == 3, "retry limit is 3");
    ensure!(has_fallback(&r.trace, FallbackRule::IcrRetryLimit), "retry-limit fallback");
    ensure!(r.trace.final_event() == Some((Some("Q3"), false)), "not accepted");
    Ok(())
}

pub fn iav_pass_round_one() -> Outcome {
    let w = World::jordan(true)
        .answer(&[], &[], "Michael I. Jordan")
        .mention_embedding(&[])
        .icr("Q3", 0.9)
        .iav("Q3", 35.0);
    let r = w.link()?;
    w.expect(&r, Some("Q3"))?;
    ensure!(r.trace.rounds() == 1, "single round");
    ensure!(count(&r.trace, is_vif) == 0, "no clues");
    Ok(())
}

pub fn iav_fails_every_round_max_score_wins() -> Outcome {
    use ClueKind::*;
    let c2 = clues(&[(Ocr, "NBA")]);
    let c3 = clues(&[(Ocr, "NBA"), (Cap, "a man at a lectern")]);
    let c4 = clues(&[(Ocr, "NBA"), (Cap, "a man at a lectern"), (Den, "man; lectern")]);
    let c5 = clues(&[
        (Ocr, "NBA"),
        (Cap, "a man at a lectern"),
        (Den, "man; lectern"),
        (Tag, "conference"),
    ]);
    let w = World::jordan(true)
        .clue(Ocr, "NBA")
        .clue(Cap, "a man at a lectern")
        .clue(Den, "man; lectern")
        .clue(Tag, "conference")
        .answer(&[], &[], "Michael Jordan")
        .answer(&[], &c2, "Michael B. Jordan")
        .answer(&[], &c3, "Michael I. Jordan")
        .answer(&[], &c4, "Jordan")
        .answer(&[], &c5, "Michael Jordan (footballer)")
        .mention_embedding(&[])
        .mention_embedding(&c2)
        .mention_embedding(&c3)
        .mention_embedding(&c4)
        .mention_embedding(&c5);
    let w = ["Q1", "Q2", "Q3", "Q4", "Q5"]
        .into_iter()
        .zip([10.0, 12.0, 30.0, 8.0, 9.0])
        .fold(w, |w, (id, s)| w.icr(id, 0.9).iav(id, s));
    let r = w.link()?;
    w.expect(&r, Some("Q3"))?;
    ensure!(r.trace.rounds() == 5, "five rounds, got {}", r.trace.rounds());
    ensure!(count(&r.trace, is_vif) == 4, "four clues");
    ensure!(has_fallback(&r.trace, FallbackRule::MaxIav), "max-iav fallback");
    Ok(())
}

pub fn iav_at_threshold_fails() -> Outcome {
    let c2 = clues(&[(ClueKind::Ocr, "MARVEL")]);
    let w = World::jordan(true)
        .clue(ClueKind::Ocr, "MARVEL")
        .answer(&[], &[], "Michael Jordan")
        .answer(&[], &c2, "Michael B. Jordan")
        .mention_embedding(&[])
        .mention_embedding(&c2)
        .icr("Q1", 0.9)
        .icr("Q2", 0.9)
        .iav("Q1", 31.0)
        .iav("Q2", 35.0);
    let r = w.link()?;
    w.expect(&r, Some("Q2"))?;
    ensure!(
        r.trace.events.iter().any(|e| matches!(
            e,
            TraceEvent::Iav { round: 1, score, passed: false, .. } if *score == 31.0
        )),
        "score equal to beta must fail"
    );
    Ok(())
}

pub fn nil_then_ocr_recovers() -> Outcome {
    let records = vec![
        EntityRecord::new("M1", "Ghost", "2007 American supernatural horror film"),
        EntityRecord::new("M2", "Ghost (band)", "Swedish rock band; heavy metal music"),
        EntityRecord::new("M3", "Ghost (Star Wars)", "Fictional starship"),
    ];
    let sample = MentionSample::new("Ghost", "Can't wait for tonight!").with_image(IMAGE.to_vec());
    let ocr = clues(&[(ClueKind::Ocr, "MUSIC")]);
    let w = World::new(records, sample)
        .clue(ClueKind::Ocr, "MUSIC")
        .answer(&[], &[], "nil")
        .answer(&[], &ocr, "Ghost (band)")
        .mention_embedding(&ocr)
        .icr("M2", 0.8)
        .iav("M2", 33.0);
    let r = w.link()?;
    w.expect(&r, Some("M2"))?;
    ensure!(
        matches!(&r.trace.events[1], TraceEvent::Tes { round: 1, chosen: None, .. }),
        "round one is nil"
    );
    ensure!(
        r.trace.events.iter().any(|e| matches!(
            e,
            TraceEvent::Vif { round: 2, kind: ClueKind::Ocr, text } if text == "MUSIC"
        )),
        "ocr clue consumed in round two"
    );
    Ok(())
}

pub fn imageless_short_circuit() -> Outcome {
    let w = World::jordan(false)
        .answer(&[], &[], "Michael I. Jordan")
        .mention_embedding(&[])
        .icr("Q3", 0.9);
    let r = w.link()?;
    w.expect(&r, Some("Q3"))?;
    ensure!(count(&r.trace, is_iav) == 0, "no alignment gate");
    ensure!(count(&r.trace, is_vif) == 0, "no clues");
    ensure!(r.trace.final_event() == Some((Some("Q3"), true)), "accepted");
    Ok(())
}

pub fn unparseable_selector_falls_back() -> Outcome {
    let w = World::jordan(true).answer(&[], &[], "Hard to say, possibly someone famous.");
    let top = w.pool()[0].clone();
    let w = w.mention_embedding(&[]).icr(&top, 0.9).iav(&top, 40.0);
    let r = w.link()?;
    w.expect(&r, Some(&top))?;
    ensure!(has_fallback(&r.trace, FallbackRule::Unparseable), "unparseable fallback");
    ensure!(
        matches!(&r.trace.events[1], TraceEvent::Tes { attempts: 3, .. }),
        "three selector attempts"
    );
    Ok(())
}

pub fn icr_exhausted_keeps_last_pick() -> Outcome {
    let w = World::jordan(true)
        .answer(&[], &[], "Michael Jordan")
        .answer(&["Q1"], &[], "NIL")
        .mention_embedding(&[])
        .icr("Q1", 0.2)
        .iav("Q1", 40.0);
    let r = w.link()?;
    w.expect(&r, Some("Q1"))?;
    ensure!(has_fallback(&r.trace, FallbackRule::IcrExhausted), "exhausted fallback");
    ensure!(r.trace.final_event() == Some((Some("Q1"), false)), "not accepted");
    Ok(())
}

pub fn nil_every_round() -> Outcome {
    use ClueKind::*;
    let kinds = [(Ocr, ""), (Cap, "a crowd"), (Den, "crowd"), (Tag, "outdoor")];
    let mut w = World::jordan(true).answer(&[], &[], "nil");
    for n in 1..=4 {
        let seen = clues(&kinds[..n]);
        w = w.clue(kinds[n - 1].0, kinds[n - 1].1).answer(&[], &seen, "nil");
    }
    let r = w.link()?;
    w.expect(&r, None)?;
    ensure!(r.prediction == Prediction::Nil, "nil prediction");
    ensure!(r.trace.rounds() == 5, "all rounds tried");
    Ok(())
}

pub fn imageless_nil() -> Outcome {
    let w = World::jordan(false).answer(&[], &[], "nil");
    let r = w.link()?;
    w.expect(&r, None)?;
    ensure!(r.trace.rounds() == 1, "single round");
    Ok(())
}

pub fn topk_orders_gate_failures_by_score() -> Outcome {
    let records = vec![
        EntityRecord::new("A", "Alpha", "first"),
        EntityRecord::new("B", "Alpha Beta", "second"),
        EntityRecord::new("C", "Alpha Gamma", "third"),
    ];
    let w = World::new(records, MentionSample::new("Alpha", "context"))
        .answer(&[], &[], "Alpha")
        .answer(&["A"], &[], "Alpha Beta")
        .answer(&["A", "B"], &[], "Alpha Gamma")
        .mention_embedding(&[])
        .icr("A", 0.9)
        .icr("B", 0.4)
        .icr("C", 0.1);
    let r = w.link_topk(3)?;
    w.expect(&r, Some("A"))?;
    let ids: Vec<Option<&str>> = r.topk.iter().map(Prediction::entity).collect();
    ensure!(ids == [Some("A"), Some("B"), Some("C")], "topk {ids:?}");
    let single = w.link_topk(1)?;
    let plain = w.link()?;
    ensure!(single.topk == plain.topk, "K=1 matches link");
    ensure!(single.trace == plain.trace, "K=1 trace matches link");
    Ok(())
}

pub fn ablation_reduces_to_single_selection() -> Outcome {
    let mut w = World::jordan(true);
    w.config.enable_icr = false;
    w.config.enable_iav = false;
    w.config.enable_vif = false;
    let w = w.answer(&[], &[], "Michael B. Jordan");
    let r = w.link()?;
    w.expect(&r, Some("Q2"))?;
    ensure!(r.trace.events.len() == 3, "retrieval, tes, final");
    let pool = retrieve_topk(&w.sample.mention, &w.kg, w.config.k);
    let mut direct = LinkTrace::default();
    let picked = run_tes(
        &w.sample,
        &pool,
        &[],
        w.backends().selector.as_ref(),
        &w.kg,
        &w.config,
        1,
        &mut direct,
    )
    .map_err(|e| e.to_string())?;
    ensure!(picked.map(|e| e.id.as_str()) == Some("Q2"), "direct selection");
    ensure!(direct.events[..] == r.trace.events[1..2], "same tes event");
    Ok(())
}

pub fn all_clues_at_once() -> Outcome {
    use ClueKind::*;
    let all = clues(&[(Ocr, "ICML"), (Cap, "a talk"), (Den, "man"), (Tag, "lecture")]);
    let mut w = World::jordan(true);
    w.config.clue_injection = ClueInjection::AllAtOnce;
    let w = w
        .clue(Ocr, "ICML")
        .clue(Cap, "a talk")
        .clue(Den, "man")
        .clue(Tag, "lecture")
        .answer(&[], &all, "Michael I. Jordan")
        .mention_embedding(&all)
        .icr("Q3", 0.9)
        .iav("Q3", 20.0);
    let r = w.link()?;
    w.expect(&r, Some("Q3"))?;
    ensure!(r.trace.rounds() == 1, "single round");
    ensure!(
        count(&r.trace, |e| matches!(e, TraceEvent::Vif { round: 1, .. })) == 4,
        "four clues in round one"
    );
    ensure!(has_fallback(&r.trace, FallbackRule::MaxIav), "falls back to the only pick");
    Ok(())
}

pub fn clue_subset_limits_rounds() -> Outcome {
    use ClueKind::*;
    let mut w = World::jordan(true);
    w.config = w.config.clone().without_clues(&[Ocr, Cap]);
    let c2 = clues(&[(Den, "man")]);
    let c3 = clues(&[(Den, "man"), (Tag, "court")]);
    let w = w
        .clue(Den, "man")
        .clue(Tag, "court")
        .answer(&[], &[], "Michael Jordan")
        .answer(&[], &c2, "Michael Jordan")
        .answer(&[], &c3, "Michael B. Jordan")
        .mention_embedding(&[])
        .mention_embedding(&c2)
        .mention_embedding(&c3)
        .icr("Q1", 0.9)
        .icr("Q2", 0.9)
        .iav("Q1", 20.0)
        .iav("Q2", 15.0);
    let r = w.link()?;
    // Q1 was seen twice at 20; the later round wins the tie but names the same entity
    w.expect(&r, Some("Q1"))?;
    ensure!(r.trace.rounds() == 3, "1 + two enabled kinds");
    Ok(())
}

pub fn backend_error_keeps_partial_trace() -> Outcome {
    let w = World::jordan(true)
        .answer(&[], &[], "Michael Jordan")
        .mention_embedding(&[])
        .icr("Q1", 0.9);
    let description = w.kg.get("Q1").unwrap().description.clone();
    let mut w = w;
    w.script = w
        .script
        .error(Role::Xmodal, xmodal_fingerprint(&description, IMAGE), "timeout");
    let err = link(&w.sample, &w.kg, &w.backends(), &w.config)
        .err()
        .ok_or("expected failure")?;
    ensure!(
        matches!(
            err.failure,
            PipelineFailure::Backend {
                error: BackendError::Timeout,
                ..
            }
        ),
        "timeout surfaced, got {:?}",
        err.failure
    );
    ensure!(count(&err.trace, is_icr) == 1, "partial trace kept");
    ensure!(err.trace.final_event().is_none(), "no final event");
    Ok(())
}

pub type Scenario = (&'static str, fn() -> Outcome);

pub fn all() -> Vec<Scenario> {
    vec![
        ("icr_retry_then_success", icr_retry_then_success),
        ("icr_retry_limit_keeps_last", icr_retry_limit_keeps_last),
        ("iav_pass_round_one", iav_pass_round_one),
        ("iav_fails_every_round_max_score_wins", iav_fails_every_round_max_score_wins),
        ("iav_at_threshold_fails", iav_at_threshold_fails),
        ("nil_then_ocr_recovers", nil_then_ocr_recovers),
        ("imageless_short_circuit", imageless_short_circuit),
        ("unparseable_selector_falls_back", unparseable_selector_falls_back),
        ("icr_exhausted_keeps_last_pick", icr_exhausted_keeps_last_pick),
        ("nil_every_round", nil_every_round),
        ("imageless_nil", imageless_nil),
        ("topk_orders_gate_failures_by_score", topk_orders_gate_failures_by_score),
        ("ablation_reduces_to_single_selection", ablation_reduces_to_single_selection),
        ("all_clues_at_once", all_clues_at_once),
        ("clue_subset_limits_rounds", clue_subset_limits_rounds),
        ("backend_error_keeps_partial_trace", backend_error_keeps_partial_trace),
    ]
}
