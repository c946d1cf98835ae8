use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::ClueKind;
use crate::digest;

pub const DEFAULT_INSTRUCTION: &str = "You are an entity linking assistant. The input is a \
dictionary with a mention, the text it appears in, optional visual clues extracted from the \
accompanying image, and a list of candidate entities with their descriptions. Answer with the \
exact name of the candidate entity that the mention refers to. If none of the candidates is \
the referred entity, answer nil.";

/// How visual clues reach the selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClueInjection {
    /// One new clue per round, only after the image gate fails.
    #[default]
    PerRound,
    /// Every enabled clue is extracted up front and the pipeline runs a single round.
    AllAtOnce,
}

impl FromStr for ClueInjection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "per_round" => Ok(ClueInjection::PerRound),
            "all_at_once" => Ok(ClueInjection::AllAtOnce),
            other => Err(format!("unknown clue injection mode `{other}`")),
        }
    }
}

/// Threshold presets for the three benchmark settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetPreset {
    WikiMel,
    WikiDiverse,
    RichMel,
}

impl DatasetPreset {
    pub fn alpha(self) -> f64 {
        match self {
            DatasetPreset::WikiMel => 0.5,
            DatasetPreset::WikiDiverse => 0.8,
            DatasetPreset::RichMel => 0.75,
        }
    }

    pub fn beta(self) -> f64 {
        31.0
    }
}

impl FromStr for DatasetPreset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "wikimel" => Ok(DatasetPreset::WikiMel),
            "wikidiverse" => Ok(DatasetPreset::WikiDiverse),
            "richmel" | "richpediamel" => Ok(DatasetPreset::RichMel),
            other => Err(format!("unknown preset `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("icr_retry_limit must be at least 1")]
    ZeroRetryLimit,
    #[error("selector_max_attempts must be at least 1")]
    ZeroSelectorAttempts,
    #[error("{0} must be finite")]
    NonFinite(&'static str),
    #[error("temperature {0} outside [0, 2]")]
    Temperature(f64),
    #[error("clue_order must be a permutation of enabled_clue_kinds")]
    ClueOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Lexical candidates retrieved per mention.
    pub k: usize,
    /// Text consistency threshold; a score must exceed it.
    pub alpha: f64,
    /// Image alignment threshold on the 100 × cosine scale.
    pub beta: f64,
    /// Consistency checks allowed per round before the last pick is kept.
    pub icr_retry_limit: usize,
    pub clue_order: Vec<ClueKind>,
    pub enabled_clue_kinds: Vec<ClueKind>,
    pub enable_icr: bool,
    pub enable_iav: bool,
    pub enable_vif: bool,
    pub clue_injection: ClueInjection,
    pub temperature: f64,
    /// Selector queries per TES call before an unparseable answer falls back
    /// to the top lexical candidate.
    pub selector_max_attempts: usize,
    pub instruction: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k: 10,
            alpha: DatasetPreset::WikiMel.alpha(),
            beta: DatasetPreset::WikiMel.beta(),
            icr_retry_limit: 3,
            clue_order: ClueKind::ALL.to_vec(),
            enabled_clue_kinds: ClueKind::ALL.to_vec(),
            enable_icr: true,
            enable_iav: true,
            enable_vif: true,
            clue_injection: ClueInjection::PerRound,
            temperature: 0.9,
            selector_max_attempts: 3,
            instruction: DEFAULT_INSTRUCTION.to_string(),
        }
    }
}

impl PipelineConfig {
    pub fn with_preset(preset: DatasetPreset) -> Self {
        Self {
            alpha: preset.alpha(),
            beta: preset.beta(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.k == 0 {
            return Err(ConfigError::ZeroK);
        }
        if self.icr_retry_limit == 0 {
            return Err(ConfigError::ZeroRetryLimit);
        }
        if self.selector_max_attempts == 0 {
            return Err(ConfigError::ZeroSelectorAttempts);
        }
        if !self.alpha.is_finite() {
            return Err(ConfigError::NonFinite("alpha"));
        }
        if !self.beta.is_finite() {
            return Err(ConfigError::NonFinite("beta"));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ConfigError::Temperature(self.temperature));
        }
        let mut order = self.clue_order.clone();
        let mut enabled = self.enabled_clue_kinds.clone();
        order.sort();
        enabled.sort();
        let unique = order.windows(2).all(|w| w[0] != w[1]);
        if order != enabled || !unique {
            return Err(ConfigError::ClueOrder);
        }
        Ok(())
    }

    /// Upper bound on selection rounds for a sample with an image.
    pub fn max_rounds(&self) -> usize {
        match self.clue_injection {
            ClueInjection::PerRound if self.enable_vif => 1 + self.clue_order.len(),
            _ => 1,
        }
    }

    /// Drops clue kinds from both the order and the enabled set.
    pub fn without_clues(mut self, kinds: &[ClueKind]) -> Self {
        self.clue_order.retain(|k| !kinds.contains(k));
        self.enabled_clue_kinds.retain(|k| !kinds.contains(k));
        self
    }

    pub fn with_clue_order(mut self, order: Vec<ClueKind>) -> Self {
        self.enabled_clue_kinds = order.clone();
        self.clue_order = order;
        self
    }

    pub fn fingerprint(&self) -> String {
        digest::fingerprint(self)
    }
}

/// `ocr,cap,den,tag` style list.
pub fn parse_clue_list(text: &str) -> Result<Vec<ClueKind>, String> {
    text.split([',', '-'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect()
}

pub struct ClueList<'a>(pub &'a [ClueKind]);

impl fmt::Display for ClueList<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, kind) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            f.write_str(kind.as_str())?;
        }
        Ok(())
    }
}
