//! Reference scoring used only by tests: full-matrix Levenshtein and exact
//! rational rounding, written without reference to the library code.

#![allow(dead_code)]

use std::collections::BTreeSet;

use i2cr_core::kg::{EntityRecord, KgSnapshot};
use i2cr_core::retrieval::retrieve_topk;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn levenshtein_matrix(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut m = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in m.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        m[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let cost = if a[i - 1] == b[j - 1] { 0 } else { 1 };
            m[i][j] = (m[i - 1][j] + 1)
                .min(m[i][j - 1] + 1)
                .min(m[i - 1][j - 1] + cost);
        }
    }
    m[a.len()][b.len()]
}

fn norm(s: &str) -> String {
    let lower = s.to_lowercase();
    let tokens: Vec<&str> = lower.split_whitespace().collect();
    tokens.join(" ")
}

fn ratio(a: &str, b: &str) -> u8 {
    let la = a.chars().count();
    let lb = b.chars().count();
    let longest = la.max(lb);
    if longest == 0 {
        return 100;
    }
    let num = 100 * (longest - levenshtein_matrix(a, b));
    // half-up rounding of num / longest
    let q = num / longest;
    let r = num % longest;
    (if 2 * r >= longest { q + 1 } else { q }) as u8
}

pub fn base(a: &str, b: &str) -> u8 {
    ratio(&norm(a), &norm(b))
}

pub fn sort(a: &str, b: &str) -> u8 {
    let s = |x: &str| {
        let n = norm(x);
        let mut t: Vec<String> = n.split(' ').filter(|t| !t.is_empty()).map(String::from).collect();
        t.sort();
        t.join(" ")
    };
    ratio(&s(a), &s(b))
}

pub fn set(a: &str, b: &str) -> u8 {
    let na = norm(a);
    let nb = norm(b);
    let sa: BTreeSet<&str> = na.split(' ').filter(|t| !t.is_empty()).collect();
    let sb: BTreeSet<&str> = nb.split(' ').filter(|t| !t.is_empty()).collect();
    let i: Vec<&str> = sa.intersection(&sb).copied().collect();
    let da: Vec<&str> = sa.difference(&sb).copied().collect();
    let db: Vec<&str> = sb.difference(&sa).copied().collect();
    let glue = |x: &[&str], y: &[&str]| {
        let mut all: Vec<&str> = x.to_vec();
        all.extend_from_slice(y);
        all.join(" ")
    };
    let istr = i.join(" ");
    let x = glue(&i, &da);
    let y = glue(&i, &db);
    ratio(&istr, &x).max(ratio(&istr, &y)).max(ratio(&x, &y))
}

/// Maximum over every scorer and every surface form.
pub fn entity_score(mention: &str, e: &EntityRecord) -> u8 {
    std::iter::once(&e.name)
        .chain(e.aliases.iter())
        .flat_map(|s| [base(mention, s), sort(mention, s), set(mention, s)])
        .max()
        .unwrap()
}

/// Scores everything, sorts everything, keeps the first k.
pub fn full_scan(mention: &str, kg: &KgSnapshot, k: usize) -> Vec<(String, u8)> {
    let mut all: Vec<(String, u8)> = kg
        .iter()
        .map(|e| (e.id.clone(), entity_score(mention, e)))
        .collect();
    all.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

const TOKENS: [&str; 12] = [
    "paris", "hilton", "france", "lyon", "new", "york", "city", "st.", "jean", "Jean", "o'neil", "ÉTÉ",
];

/// Short phrase over a small overlapping vocabulary, sometimes with a typo
/// or doubled space.
pub fn random_phrase(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(1..=3);
    let mut parts: Vec<String> = (0..n)
        .map(|_| TOKENS[rng.gen_range(0..TOKENS.len())].to_string())
        .collect();
    if rng.gen_bool(0.2) {
        let chars: Vec<char> = parts[0].chars().collect();
        if chars.len() > 2 {
            parts[0] = chars.iter().enumerate().filter(|(i, _)| *i != 1).map(|(_, c)| c).collect();
        }
    }
    let sep = if rng.gen_bool(0.1) { "  " } else { " " };
    parts.join(sep)
}

pub fn random_kg(rng: &mut ChaCha8Rng, n: usize) -> KgSnapshot {
    let records = (0..n).map(|i| {
        let aliases: Vec<String> = (0..rng.gen_range(0..3)).map(|_| random_phrase(rng)).collect();
        EntityRecord::new(format!("Q{:05}", rng.gen_range(0..100_000) * 1000 + i), random_phrase(rng), "")
            .with_aliases(aliases)
    });
    KgSnapshot::from_records(records.collect::<Vec<_>>()).unwrap()
}

/// `trials` random instances (every twentieth with 1000 entities, the rest
/// up to 300) compared exactly against `full_scan` at k = 10.
pub fn check_full_scan(trials: usize, seed: u64) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut largest = 0;
    for trial in 0..trials {
        let n = if trial % 20 == 0 { 1000 } else { rng.gen_range(0..=300) };
        let kg = random_kg(&mut rng, n);
        largest = largest.max(kg.len());
        let mention = random_phrase(&mut rng);
        let got: Vec<(String, u8)> = retrieve_topk(&mention, &kg, 10)
            .entries
            .iter()
            .map(|c| (c.id.clone(), c.score.value()))
            .collect();
        let want = full_scan(&mention, &kg, 10);
        if got != want {
            return Err(format!("trial {trial}, mention {mention:?}: {got:?} vs {want:?}"));
        }
    }
    Ok(format!("{trials} instances identical, largest KG {largest}"))
}
