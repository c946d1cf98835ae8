//! Deterministic synthetic corpora and rule-based stand-in models.
//!
//! The steering corpus pairs every mention with two entities whose names both
//! contain the mention: a decoy whose name equals it (and so ranks first
//! lexically) and the gold entity, whose name adds a unique qualifier word.
//! The rule-based selector picks a candidate only when one of its extra name
//! words appears in the context or in a visual clue; otherwise it answers
//! with the top candidate. A sample is either resolvable from its text or
//! needs exactly one clue kind, whose extractor is the only one that reveals
//! the qualifier.

use std::collections::HashSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::backends::{
    BackendError, Backends, ClueExtractor, ClueKind, CrossModalScorer, DescriptionSummarizer,
    EmbeddingVector, EntitySelector, SelectorRequest, TextEmbedder, VisualClue,
};
use crate::kg::{EntityRecord, KgSnapshot};
use crate::pipeline::MentionSample;
use crate::retrieval::normalize;

const SYLLABLES: [&str; 24] = [
    "ka", "lo", "mi", "ra", "ve", "to", "su", "ne", "di", "po", "gar", "len", "zor", "bel", "tam",
    "quin", "fe", "ho", "ju", "wex", "ny", "cor", "sa", "ti",
];

pub const ALIGNED_SCORE: f64 = 40.0;
pub const MISALIGNED_SCORE: f64 = 10.0;

fn word(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    let mut w: String = (0..syllables)
        .map(|_| SYLLABLES[rng.gen_range(0..SYLLABLES.len())])
        .collect();
    if let Some(first) = w.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    w
}

fn unique_word(rng: &mut ChaCha8Rng, syllables: usize, used: &mut HashSet<String>) -> String {
    loop {
        let w = word(rng, syllables);
        if used.insert(w.to_lowercase()) {
            return w;
        }
    }
}

/// Image payload understood by [`RuleBasedModels`].
pub fn synthetic_image(qualifier: &str, needs: Option<ClueKind>) -> Vec<u8> {
    let needs = needs.map_or("none", ClueKind::as_str);
    format!("synthetic-image|{qualifier}|{needs}").into_bytes()
}

fn parse_image(image: &[u8]) -> Result<(String, Option<ClueKind>), BackendError> {
    let text = std::str::from_utf8(image).map_err(|_| BackendError::ImageDecode)?;
    let mut parts = text.split('|');
    match (parts.next(), parts.next(), parts.next(), parts.next()) {
        (Some("synthetic-image"), Some(q), Some(needs), None) => {
            let needs = match needs {
                "none" => None,
                other => Some(other.parse().map_err(|_| BackendError::ImageDecode)?),
            };
            Ok((q.to_string(), needs))
        }
        _ => Err(BackendError::ImageDecode),
    }
}

#[derive(Debug, Clone)]
pub struct SteeringFixture {
    pub kg: KgSnapshot,
    pub samples: Vec<MentionSample>,
    /// Clue kind each sample depends on; `None` when text suffices.
    pub needs: Vec<Option<ClueKind>>,
}

impl SteeringFixture {
    pub fn backends(&self) -> Backends {
        Backends::uniform(Arc::new(RuleBasedModels))
    }

    pub fn text_resolvable(&self) -> usize {
        self.needs.iter().filter(|n| n.is_none()).count()
    }
}

/// `n` samples: 60% text-resolvable and 10% per clue kind (rounded down,
/// remainder to text), shuffled by `seed`.
pub fn steering_fixture(n: usize, seed: u64) -> SteeringFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_kind = n / 10;
    let mut needs: Vec<Option<ClueKind>> = ClueKind::ALL
        .iter()
        .flat_map(|&k| std::iter::repeat_n(Some(k), per_kind))
        .collect();
    needs.resize(n, None);
    needs.shuffle(&mut rng);

    let mut used = HashSet::new();
    let mut records = Vec::with_capacity(2 * n);
    let mut samples = Vec::with_capacity(n);
    for (i, need) in needs.iter().enumerate() {
        let mention = format!(
            "{} {}",
            unique_word(&mut rng, 2, &mut used),
            unique_word(&mut rng, 3, &mut used)
        );
        let qualifier = unique_word(&mut rng, 3, &mut used);
        let decoy = EntityRecord::new(
            format!("E{i:04}a"),
            mention.clone(),
            format!("A namesake of {mention} with no known public role."),
        );
        let gold = EntityRecord::new(
            format!("E{i:04}b"),
            format!("{mention} {qualifier}"),
            format!("{mention}, widely known by the epithet {qualifier}."),
        );
        let context = match need {
            None => format!("{mention} appeared with {qualifier} at the event."),
            Some(_) => format!("A short post about {mention}."),
        };
        samples.push(
            MentionSample::new(mention.clone(), context)
                .with_image(synthetic_image(&qualifier, *need))
                .with_gold(gold.id.clone()),
        );
        records.push(decoy);
        records.push(gold);
    }
    SteeringFixture {
        kg: KgSnapshot::from_records(records).expect("generated ids are unique"),
        samples,
        needs,
    }
}

/// Corpus for instruction export: some golds retrievable, some outside the
/// Top-`k` lexical list, and every tenth sample out of the KG.
pub fn export_fixture(n: usize, k: usize, seed: u64) -> (KgSnapshot, Vec<MentionSample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used = HashSet::new();
    let mut records = Vec::new();
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let mention = format!(
            "{} {}",
            unique_word(&mut rng, 2, &mut used),
            unique_word(&mut rng, 3, &mut used)
        );
        let context = format!("Text mentioning {mention}.");
        match i % 10 {
            0 => samples.push(MentionSample::new(mention, context).out_of_kg()),
            1 | 2 => {
                // gold known only by an unrelated name, crowded out by k lookalikes
                for j in 0..k {
                    records.push(EntityRecord::new(
                        format!("X{i:04}{j:02}"),
                        format!("{mention} {}", unique_word(&mut rng, 2, &mut used)),
                        String::new(),
                    ));
                }
                let gold = EntityRecord::new(
                    format!("X{i:04}gold"),
                    unique_word(&mut rng, 4, &mut used),
                    format!("Also called {mention}."),
                );
                samples.push(MentionSample::new(mention, context).with_gold(gold.id.clone()));
                records.push(gold);
            }
            _ => {
                let gold = EntityRecord::new(
                    format!("X{i:04}gold"),
                    mention.clone(),
                    format!("Entity {i}."),
                );
                samples.push(MentionSample::new(mention, context).with_gold(gold.id.clone()));
                records.push(gold);
            }
        }
    }
    (
        KgSnapshot::from_records(records).expect("generated ids are unique"),
        samples,
    )
}

/// Rule-based implementations of every model role for synthetic corpora.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleBasedModels;

fn words(text: &str) -> HashSet<String> {
    normalize(text)
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

impl EntitySelector for RuleBasedModels {
    fn generate(&self, request: &SelectorRequest) -> Result<String, BackendError> {
        let mention = words(&request.mention);
        let mut evidence = words(&request.context);
        for clue in &request.clues {
            evidence.extend(words(&clue.text));
        }
        let supported = request.candidates.iter().find(|c| {
            words(&c.name)
                .difference(&mention)
                .any(|w| evidence.contains(w))
        });
        Ok(supported
            .or(request.candidates.first())
            .map_or_else(|| "nil".to_string(), |c| c.name.clone()))
    }
}

impl TextEmbedder for RuleBasedModels {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        let hash = Sha256::digest(text.as_bytes());
        let mut values = vec![1.0];
        values.extend(hash.iter().take(7).map(|b| f64::from(*b) / 255.0 * 0.2));
        EmbeddingVector::new(values)
    }
}

impl CrossModalScorer for RuleBasedModels {
    fn score(&self, text: &str, image: &[u8]) -> Result<f64, BackendError> {
        let (qualifier, _) = parse_image(image)?;
        Ok(if words(text).contains(&qualifier.to_lowercase()) {
            ALIGNED_SCORE
        } else {
            MISALIGNED_SCORE
        })
    }
}

impl ClueExtractor for RuleBasedModels {
    fn extract(&self, image: &[u8], kind: ClueKind) -> Result<VisualClue, BackendError> {
        let (qualifier, needs) = parse_image(image)?;
        let text = if needs == Some(kind) {
            match kind {
                ClueKind::Ocr => qualifier.to_uppercase(),
                ClueKind::Cap => format!("a photo of {qualifier} on a stage"),
                ClueKind::Den => format!("{qualifier} standing near a banner"),
                ClueKind::Tag => format!("person; {qualifier}"),
            }
        } else {
            match kind {
                ClueKind::Ocr => String::new(),
                ClueKind::Cap => "a photo of a person".to_string(),
                ClueKind::Den => "a person standing outdoors".to_string(),
                ClueKind::Tag => "person; outdoor".to_string(),
            }
        };
        Ok(VisualClue { kind, text })
    }
}

impl DescriptionSummarizer for RuleBasedModels {
    fn summarize(&self, text: &str, max_chars: usize) -> Result<String, BackendError> {
        Ok(text.chars().take(max_chars).collect())
    }
}
