//! Lexical Top-k candidate retrieval.
//!
//! Scores are fuzzy string similarities on a 0..=100 integer scale built on
//! normalized Levenshtein distance. Inputs are case-folded and whitespace is
//! collapsed; punctuation is kept.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::kg::{EntityRecord, KgSnapshot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct LexicalScore(u8);

impl LexicalScore {
    pub const MAX: LexicalScore = LexicalScore(100);
    pub const MIN: LexicalScore = LexicalScore(0);

    pub fn new(value: u8) -> Option<Self> {
        (value <= 100).then_some(Self(value))
    }

    pub fn value(self) -> u8 {
        self.0
    }
}

impl TryFrom<u8> for LexicalScore {
    type Error = String;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        Self::new(value).ok_or_else(|| format!("lexical score {value} exceeds 100"))
    }
}

impl From<LexicalScore> for u8 {
    fn from(score: LexicalScore) -> u8 {
        score.0
    }
}

impl fmt::Display for LexicalScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Case-folds, trims, and collapses whitespace runs to a single space.
pub fn normalize(text: &str) -> String {
    text.to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Edit distance over Unicode scalar values, two-row formulation.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein_chars(&a, &b)
}

fn levenshtein_chars(a: &[char], b: &[char]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    if !short.is_empty() && short.len() <= 64 {
        return levenshtein_bitparallel(short, long);
    }
    levenshtein_rows(a, b)
}

/// Myers' bit-vector algorithm; `pattern` holds 1..=64 characters.
fn levenshtein_bitparallel(pattern: &[char], text: &[char]) -> usize {
    let mut peq: Vec<(char, u64)> = Vec::with_capacity(pattern.len());
    for (i, c) in pattern.iter().enumerate() {
        match peq.iter_mut().find(|(k, _)| k == c) {
            Some((_, mask)) => *mask |= 1 << i,
            None => peq.push((*c, 1 << i)),
        }
    }
    let last = 1u64 << (pattern.len() - 1);
    let mut pv = u64::MAX;
    let mut mv = 0u64;
    let mut score = pattern.len();
    for c in text {
        let eq = peq.iter().find(|(k, _)| k == c).map_or(0, |(_, m)| *m);
        let xv = eq | mv;
        let xh = ((eq & pv).wrapping_add(pv) ^ pv) | eq;
        let mut ph = mv | !(xh | pv);
        let mut mh = pv & xh;
        if ph & last != 0 {
            score += 1;
        } else if mh & last != 0 {
            score -= 1;
        }
        ph = (ph << 1) | 1;
        mh <<= 1;
        pv = mh | !(xv | ph);
        mv = ph & xv;
    }
    score
}

fn levenshtein_rows(a: &[char], b: &[char]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        curr[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let substitution = prev[j] + usize::from(ca != cb);
            curr[j + 1] = substitution.min(prev[j + 1] + 1).min(curr[j] + 1);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// Similarity of two already-normalized strings, rounded half up.
fn ratio_chars(a: &[char], b: &[char]) -> LexicalScore {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return LexicalScore::MAX;
    }
    if a == b {
        return LexicalScore::MAX;
    }
    let same = longest - levenshtein_chars(a, b);
    // round(100 * same / longest) in integer arithmetic
    let value = (200 * same + longest) / (2 * longest);
    LexicalScore(value as u8)
}

fn ratio_normalized(a: &str, b: &str) -> LexicalScore {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    ratio_chars(&a, &b)
}

pub fn base_ratio(a: &str, b: &str) -> LexicalScore {
    ratio_normalized(&normalize(a), &normalize(b))
}

fn sorted_tokens(normalized: &str) -> String {
    let mut tokens: Vec<&str> = normalized.split(' ').filter(|t| !t.is_empty()).collect();
    tokens.sort_unstable();
    tokens.join(" ")
}

pub fn token_sort_ratio(a: &str, b: &str) -> LexicalScore {
    ratio_normalized(&sorted_tokens(&normalize(a)), &sorted_tokens(&normalize(b)))
}

fn join_nonempty(parts: &[&str]) -> String {
    parts
        .iter()
        .filter(|p| !p.is_empty())
        .copied()
        .collect::<Vec<_>>()
        .join(" ")
}

fn set_ratio(set_a: &BTreeSet<String>, set_b: &BTreeSet<String>) -> LexicalScore {
    let join = |it: &mut dyn Iterator<Item = &String>| {
        it.map(String::as_str).collect::<Vec<_>>().join(" ")
    };
    let common = join(&mut set_a.intersection(set_b));
    let only_a = join(&mut set_a.difference(set_b));
    let only_b = join(&mut set_b.difference(set_a));
    let with_a = join_nonempty(&[&common, &only_a]);
    let with_b = join_nonempty(&[&common, &only_b]);
    ratio_normalized(&common, &with_a)
        .max(ratio_normalized(&common, &with_b))
        .max(ratio_normalized(&with_a, &with_b))
}

pub fn token_set_ratio(a: &str, b: &str) -> LexicalScore {
    set_ratio(&Prepared::new(a).tokens, &Prepared::new(b).tokens)
}

/// Normalized views of one string, computed once per scan.
#[derive(Debug, Clone)]
struct Prepared {
    chars: Vec<char>,
    sorted: Vec<char>,
    tokens: BTreeSet<String>,
}

impl Prepared {
    fn new(text: &str) -> Self {
        let normalized = normalize(text);
        Self {
            chars: normalized.chars().collect(),
            sorted: sorted_tokens(&normalized).chars().collect(),
            tokens: normalized
                .split(' ')
                .filter(|t| !t.is_empty())
                .map(str::to_string)
                .collect(),
        }
    }

    fn composite(&self, other: &Prepared) -> LexicalScore {
        let base = ratio_chars(&self.chars, &other.chars);
        if base == LexicalScore::MAX {
            return base;
        }
        let sorted = ratio_chars(&self.sorted, &other.sorted);
        if sorted == LexicalScore::MAX {
            return sorted;
        }
        base.max(sorted).max(set_ratio(&self.tokens, &other.tokens))
    }
}

/// Name first, then aliases.
fn score_surfaces(mention: &Prepared, surfaces: &[Prepared]) -> LexicalScore {
    let mut best = LexicalScore::MIN;
    for surface in surfaces {
        best = best.max(mention.composite(surface));
        if best == LexicalScore::MAX {
            break;
        }
    }
    best
}

fn surfaces(entity: &EntityRecord) -> Vec<Prepared> {
    std::iter::once(&entity.name)
        .chain(&entity.aliases)
        .map(|s| Prepared::new(s))
        .collect()
}

/// Best fuzzy score of the mention against the entity name or any alias.
pub fn lexical_score(mention: &str, entity: &EntityRecord) -> LexicalScore {
    score_surfaces(&Prepared::new(mention), &surfaces(entity))
}

/// Prepared surfaces for every entity of a snapshot, in id order.
#[derive(Debug, Clone)]
pub struct LexicalIndex {
    entries: Vec<(String, Vec<Prepared>)>,
}

impl LexicalIndex {
    pub(crate) fn build<'a>(entities: impl Iterator<Item = &'a EntityRecord>) -> Self {
        Self {
            entries: entities.map(|e| (e.id.clone(), surfaces(e))).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub id: String,
    pub score: LexicalScore,
}

/// Top-k entities for one query, best first; ties go to the smaller id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub query: String,
    pub k: usize,
    pub entries: Vec<ScoredCandidate>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|c| c.id.as_str())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.iter().any(|c| c.id == id)
    }

    /// Same ordering with the given ids removed.
    pub fn without<'a, I>(&self, excluded: I) -> CandidateSet
    where
        I: IntoIterator<Item = &'a str>,
    {
        let excluded: BTreeSet<&str> = excluded.into_iter().collect();
        CandidateSet {
            query: self.query.clone(),
            k: self.k,
            entries: self
                .entries
                .iter()
                .filter(|c| !excluded.contains(c.id.as_str()))
                .cloned()
                .collect(),
        }
    }
}

fn rank_order(a: &ScoredCandidate, b: &ScoredCandidate) -> Ordering {
    b.score.cmp(&a.score).then_with(|| a.id.cmp(&b.id))
}

/// Scans every entity name and alias and keeps the `k` best matches.
///
/// # Panics
///
/// Panics if `k` is zero.
pub fn retrieve_topk(mention: &str, kg: &KgSnapshot, k: usize) -> CandidateSet {
    assert!(k >= 1, "k must be positive");
    let query = Prepared::new(mention);
    let mut scored: Vec<ScoredCandidate> = kg
        .lexical_index()
        .entries
        .par_iter()
        .map(|(id, surfaces)| ScoredCandidate {
            id: id.clone(),
            score: score_surfaces(&query, surfaces),
        })
        .collect();
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, rank_order);
        scored.truncate(k);
    }
    scored.sort_unstable_by(rank_order);
    CandidateSet {
        query: mention.to_string(),
        k,
        entries: scored,
    }
}
