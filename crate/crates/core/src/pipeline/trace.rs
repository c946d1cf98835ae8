//! Per-sample event log and its grammar validator.
//!
//! A well-formed trace is
//!
//! ```text
//! trace     := retrieval round+ [fallback(max_iav)] final
//! round     := vif* selection [iav]
//! selection := pick (icr-fail pick)* [icr] [fallback(icr_retry_limit | icr_exhausted)]
//! pick      := tes [fallback(unparseable)]
//! ```
//!
//! with at most one `vif` per round in per-round mode (exactly one from
//! round 2 on), at most `icr_retry_limit` consistency checks per round, and
//! every gate event's `passed` equal to `score > threshold`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::ClueKind;
use crate::retrieval::ScoredCandidate;

use super::{ClueInjection, PipelineConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackRule {
    /// Selector output never matched a candidate; the top lexical candidate was used.
    Unparseable,
    /// Consistency checks hit the retry limit; the last pick was kept.
    IcrRetryLimit,
    /// Candidates ran out (or the selector answered nil) after consistency
    /// failures; the last pick was kept.
    IcrExhausted,
    /// No round passed the image gate; the best-aligned pick was kept.
    MaxIav,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Retrieval {
        candidates: Vec<ScoredCandidate>,
    },
    Tes {
        round: usize,
        /// Entity id, `None` for nil.
        chosen: Option<String>,
        /// Last raw selector output; `None` when no query was made.
        raw: Option<String>,
        attempts: usize,
    },
    Icr {
        round: usize,
        entity: String,
        score: f64,
        threshold: f64,
        passed: bool,
    },
    Iav {
        round: usize,
        entity: String,
        score: f64,
        threshold: f64,
        passed: bool,
    },
    Vif {
        /// Round whose selection first sees this clue.
        round: usize,
        kind: ClueKind,
        text: String,
    },
    Fallback {
        round: Option<usize>,
        rule: FallbackRule,
        entity: Option<String>,
    },
    Final {
        prediction: Option<String>,
        /// True when the prediction passed every enabled gate.
        accepted: bool,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LinkTrace {
    pub events: Vec<TraceEvent>,
}

impl LinkTrace {
    pub fn push(&mut self, event: TraceEvent) {
        self.events.push(event);
    }

    pub fn final_event(&self) -> Option<(Option<&str>, bool)> {
        match self.events.last() {
            Some(TraceEvent::Final {
                prediction,
                accepted,
            }) => Some((prediction.as_deref(), *accepted)),
            _ => None,
        }
    }

    pub fn rounds(&self) -> usize {
        self.events
            .iter()
            .filter_map(|e| match e {
                TraceEvent::Tes { round, .. } => Some(*round),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    pub fn count(&self, pred: impl Fn(&TraceEvent) -> bool) -> usize {
        self.events.iter().filter(|e| pred(e)).count()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("trace event {index}: {message}")]
pub struct TraceViolation {
    pub index: usize,
    pub message: String,
}

struct Cursor<'a> {
    events: &'a [TraceEvent],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<&'a TraceEvent> {
        self.events.get(self.pos)
    }

    fn next(&mut self) -> Option<&'a TraceEvent> {
        let e = self.events.get(self.pos);
        self.pos += 1;
        e
    }

    fn fail<T>(&self, message: impl Into<String>) -> Result<T, TraceViolation> {
        Err(TraceViolation {
            index: self.pos.min(self.events.len()),
            message: message.into(),
        })
    }
}

fn gate_consistent(score: f64, threshold: f64, passed: bool) -> bool {
    score.is_finite() && threshold.is_finite() && passed == (score > threshold)
}

struct RoundOutcome {
    selected: Option<String>,
    icr_ok: bool,
    iav: Option<(f64, bool)>,
}

/// Checks the trace against the grammar and replays it, returning the
/// prediction it implies. Fails if the final event disagrees with the replay.
pub fn validate_trace(
    trace: &LinkTrace,
    config: &PipelineConfig,
) -> Result<Option<String>, TraceViolation> {
    let mut cur = Cursor {
        events: &trace.events,
        pos: 0,
    };
    let pool: BTreeSet<&str> = match cur.next() {
        Some(TraceEvent::Retrieval { candidates }) => {
            candidates.iter().map(|c| c.id.as_str()).collect()
        }
        _ => return cur.fail("trace must start with a retrieval event"),
    };

    let mut outcomes: Vec<(usize, RoundOutcome)> = Vec::new();
    let mut round = 0;
    while matches!(cur.peek(), Some(TraceEvent::Vif { .. } | TraceEvent::Tes { .. })) {
        round += 1;
        if round > config.max_rounds() {
            return cur.fail(format!("round {round} exceeds limit {}", config.max_rounds()));
        }
        let outcome = validate_round(&mut cur, round, &pool, config)?;
        outcomes.push((round, outcome));
    }
    if round == 0 {
        return cur.fail("trace has no selection round");
    }
    for (r, o) in &outcomes[..outcomes.len() - 1] {
        let continued = o.selected.is_none() || matches!(o.iav, Some((_, false)));
        if !continued {
            return Err(TraceViolation {
                index: 0,
                message: format!("round {r} settled but another round followed"),
            });
        }
    }

    let (_, last) = outcomes.last().expect("at least one round");
    let (expected, accepted, needs_max_iav) = match (&last.selected, last.iav) {
        (Some(id), None) | (Some(id), Some((_, true))) => (Some(id.clone()), last.icr_ok, false),
        _ => {
            let best = outcomes
                .iter()
                .filter_map(|(r, o)| match (&o.selected, o.iav) {
                    (Some(id), Some((score, false))) => Some((score, *r, id)),
                    _ => None,
                })
                .max_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            match best {
                Some((_, _, id)) => (Some(id.clone()), false, true),
                None => (None, false, false),
            }
        }
    };

    if needs_max_iav {
        match cur.next() {
            Some(TraceEvent::Fallback {
                rule: FallbackRule::MaxIav,
                entity,
                ..
            }) if *entity == expected => {}
            _ => return cur.fail("expected max_iav fallback naming the best-aligned pick"),
        }
    }
    match cur.next() {
        Some(TraceEvent::Final {
            prediction,
            accepted: acc,
        }) => {
            if *prediction != expected {
                return cur.fail(format!(
                    "final prediction {prediction:?} but replay gives {expected:?}"
                ));
            }
            if *acc != accepted {
                return cur.fail("final accepted flag disagrees with gate outcomes");
            }
        }
        _ => return cur.fail("expected final event"),
    }
    if cur.peek().is_some() {
        return cur.fail("events after final");
    }
    Ok(expected)
}

fn validate_round(
    cur: &mut Cursor<'_>,
    round: usize,
    pool: &BTreeSet<&str>,
    config: &PipelineConfig,
) -> Result<RoundOutcome, TraceViolation> {
    let mut vifs = 0;
    while let Some(TraceEvent::Vif { round: r, .. }) = cur.peek() {
        if *r != round {
            return cur.fail(format!("vif for round {r} inside round {round}"));
        }
        vifs += 1;
        cur.next();
    }
    let vif_ok = match config.clue_injection {
        ClueInjection::PerRound => (round == 1 && vifs == 0) || (round > 1 && vifs == 1),
        ClueInjection::AllAtOnce => round == 1 && vifs <= config.clue_order.len(),
    };
    if !vif_ok {
        return cur.fail(format!("round {round} has {vifs} vif events"));
    }

    let mut rejected: BTreeSet<String> = BTreeSet::new();
    let mut icr_checks = 0;
    let mut selected: Option<String> = None;
    let mut icr_ok = true;
    loop {
        let chosen = match cur.next() {
            Some(TraceEvent::Tes {
                round: r, chosen, ..
            }) if *r == round => chosen.clone(),
            _ => return cur.fail(format!("expected tes event for round {round}")),
        };
        if let Some(id) = &chosen {
            if !pool.contains(id.as_str()) {
                return cur.fail(format!("tes chose `{id}` outside the candidate pool"));
            }
            if rejected.contains(id) {
                return cur.fail(format!("tes re-chose rejected `{id}`"));
            }
        }
        if let Some(TraceEvent::Fallback {
            rule: FallbackRule::Unparseable,
            entity,
            round: r,
        }) = cur.peek()
        {
            if *r != Some(round) || entity.is_none() || *entity != chosen {
                return cur.fail("unparseable fallback must name the chosen entity");
            }
            cur.next();
        }
        let Some(id) = chosen else {
            if selected.is_some() {
                match cur.next() {
                    Some(TraceEvent::Fallback {
                        rule: FallbackRule::IcrExhausted,
                        entity,
                        ..
                    }) if *entity == selected => {}
                    _ => return cur.fail("expected icr_exhausted fallback after nil"),
                }
            }
            break;
        };
        selected = Some(id.clone());
        match cur.peek() {
            Some(TraceEvent::Icr {
                round: r,
                entity,
                score,
                threshold,
                passed,
            }) => {
                if !config.enable_icr {
                    return cur.fail("icr event while icr is disabled");
                }
                if *r != round || *entity != id {
                    return cur.fail("icr event does not follow its tes");
                }
                if !gate_consistent(*score, *threshold, *passed) {
                    return cur.fail("icr pass flag inconsistent with operands");
                }
                cur.next();
                icr_checks += 1;
                if *passed {
                    icr_ok = true;
                    break;
                }
                icr_ok = false;
                rejected.insert(id.clone());
                if icr_checks == config.icr_retry_limit {
                    match cur.next() {
                        Some(TraceEvent::Fallback {
                            rule: FallbackRule::IcrRetryLimit,
                            entity,
                            ..
                        }) if entity.as_deref() == Some(id.as_str()) => {}
                        _ => return cur.fail("expected icr_retry_limit fallback"),
                    }
                    break;
                }
            }
            _ => {
                if config.enable_icr {
                    return cur.fail("missing icr event");
                }
                break;
            }
        }
    }

    let mut iav = None;
    if let Some(TraceEvent::Iav {
        round: r,
        entity,
        score,
        threshold,
        passed,
    }) = cur.peek()
    {
        if !config.enable_iav || selected.is_none() {
            return cur.fail("unexpected iav event");
        }
        if *r != round || Some(entity) != selected.as_ref() {
            return cur.fail("iav event does not match the round's pick");
        }
        if !gate_consistent(*score, *threshold, *passed) {
            return cur.fail("iav pass flag inconsistent with operands");
        }
        iav = Some((*score, *passed));
        cur.next();
    }
    Ok(RoundOutcome {
        selected,
        icr_ok,
        iav,
    })
}
