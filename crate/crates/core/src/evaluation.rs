//! Batch evaluation: Top-K accuracy, response time, ablations, and clue-order
//! sweeps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{Backends, ClueKind};
use crate::kg::KgSnapshot;
use crate::pipeline::{
    link_topk, ClueInjection, ClueList, MentionSample, PipelineConfig, Prediction,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error("sample {0} has no gold label")]
    MissingGold(usize),
    #[error("{failed} of {total} samples failed, above the cap of {cap}")]
    FailureRate { failed: usize, total: usize, cap: f64 },
    #[error("dataset line {line}: {message}")]
    Dataset { line: usize, message: String },
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid ablation `{0}`")]
    Ablation(String),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// One line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub mention: String,
    #[serde(default)]
    pub context: String,
    /// Image path, relative to the dataset file.
    #[serde(default)]
    pub image: Option<String>,
    #[serde(default)]
    pub gold_id: Option<String>,
    #[serde(default)]
    pub out_of_kg: Option<bool>,
}

impl DatasetRecord {
    pub fn into_sample(self, base_dir: &Path) -> Result<MentionSample, std::io::Error> {
        let image = match &self.image {
            Some(path) => Some(std::fs::read(base_dir.join(path))?.into()),
            None => None,
        };
        Ok(MentionSample {
            mention: self.mention,
            context: self.context,
            image,
            gold_id: self.gold_id,
            out_of_kg: self.out_of_kg.unwrap_or(false),
        })
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<MentionSample>, EvalError> {
    let path = path.as_ref();
    let io_err = |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io_err)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut samples = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let dataset_err = |message: String| EvalError::Dataset {
            line: idx + 1,
            message,
        };
        let record: DatasetRecord =
            serde_json::from_str(&line).map_err(|e| dataset_err(e.to_string()))?;
        if record.mention.is_empty() {
            return Err(dataset_err("mention must be non-empty".into()));
        }
        let sample = record
            .into_sample(base)
            .map_err(|e| dataset_err(format!("image: {e}")))?;
        samples.push(sample);
    }
    Ok(samples)
}

/// How samples whose gold answer is nil are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NilScoring {
    /// Correct iff the prediction list is exactly `[nil]`.
    #[default]
    Strict,
    /// Nil-gold samples are left out of accuracy.
    IgnoreNil,
}

impl FromStr for NilScoring {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "strict" => Ok(NilScoring::Strict),
            "ignore_nil" | "ignore" => Ok(NilScoring::IgnoreNil),
            other => Err(format!("unknown nil scoring `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub ks: Vec<usize>,
    pub workers: usize,
    /// Fraction of failed samples above which the run errors out.
    pub failure_rate_cap: f64,
    pub nil_scoring: NilScoring,
    /// When false, wall times are reported as zero so reports are reproducible.
    pub record_timing: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            ks: vec![1, 3, 5],
            workers: std::thread::available_parallelism().map_or(4, |n| n.get()),
            failure_rate_cap: 0.5,
            nil_scoring: NilScoring::Strict,
            record_timing: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub index: usize,
    pub mention: String,
    pub gold: Prediction,
    pub predictions: Vec<Prediction>,
    pub correct_at: BTreeMap<usize, bool>,
    pub rounds: usize,
    pub wall_time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EvalRecord {
    pub fn hit_at(&self, k: usize) -> bool {
        hit_at(&self.gold, &self.predictions, k)
    }
}

fn hit_at(gold: &Prediction, predictions: &[Prediction], k: usize) -> bool {
    match gold {
        Prediction::Nil => predictions == [Prediction::Nil],
        Prediction::Entity(_) => predictions.iter().take(k).any(|p| p == gold),
    }
}

/// Fraction of records whose gold is among the first `k` predictions.
pub fn topk_accuracy(records: &[EvalRecord], k: usize, nil: NilScoring) -> Result<f64, EvalError> {
    let scored: Vec<&EvalRecord> = records
        .iter()
        .filter(|r| nil == NilScoring::Strict || !r.gold.is_nil())
        .collect();
    if scored.is_empty() {
        return Err(EvalError::EmptyEvalSet);
    }
    let hits = scored.iter().filter(|r| r.hit_at(k)).count();
    Ok(hits as f64 / scored.len() as f64)
}

pub fn avg_response_time(records: &[EvalRecord]) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyEvalSet);
    }
    Ok(records.iter().map(|r| r.wall_time).sum::<f64>() / records.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub config_fingerprint: String,
    pub kg_digest: String,
    pub sample_count: usize,
    pub accuracy: BTreeMap<usize, f64>,
    pub avg_time_seconds: f64,
    pub failures: usize,
    pub records: Vec<EvalRecord>,
}

impl EvalReport {
    pub fn accuracy_at(&self, k: usize) -> Option<f64> {
        self.accuracy.get(&k).copied()
    }

    /// Accuracy never drops as K grows.
    pub fn is_monotone(&self) -> bool {
        self.accuracy
            .values()
            .zip(self.accuracy.values().skip(1))
            .all(|(a, b)| a <= b)
    }
}

fn worker_pool(workers: usize) -> Result<rayon::ThreadPool, EvalError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| EvalError::Pool(e.to_string()))
}

/// Links every sample and scores the results. Per-sample failures count as
/// misses and are tagged with their error.
pub fn run_eval(
    samples: &[MentionSample],
    kg: &KgSnapshot,
    backends: &Backends,
    config: &PipelineConfig,
    options: &EvalOptions,
    label: &str,
) -> Result<EvalReport, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::EmptyEvalSet);
    }
    let golds = samples
        .iter()
        .enumerate()
        .map(|(i, s)| s.gold().ok_or(EvalError::MissingGold(i)))
        .collect::<Result<Vec<_>, _>>()?;
    let max_k = options.ks.iter().copied().max().unwrap_or(1);

    let records: Vec<EvalRecord> = worker_pool(options.workers)?.install(|| {
        samples
            .par_iter()
            .zip(golds.par_iter())
            .enumerate()
            .map(|(index, (sample, gold))| {
                let started = Instant::now();
                let outcome = link_topk(sample, kg, backends, config, max_k);
                let elapsed = started.elapsed().as_secs_f64();
                let (predictions, rounds, error) = match outcome {
                    Ok(result) => (result.topk, result.trace.rounds(), None),
                    Err(err) => {
                        tracing::warn!(index, error = %err, "sample failed");
                        (Vec::new(), err.trace.rounds(), Some(err.to_string()))
                    }
                };
                let correct_at = options
                    .ks
                    .iter()
                    .map(|&k| (k, error.is_none() && hit_at(gold, &predictions, k)))
                    .collect();
                EvalRecord {
                    index,
                    mention: sample.mention.clone(),
                    gold: gold.clone(),
                    predictions,
                    correct_at,
                    rounds,
                    wall_time: if options.record_timing { elapsed } else { 0.0 },
                    error,
                }
            })
            .collect()
    });

    let failures = records.iter().filter(|r| r.error.is_some()).count();
    if failures as f64 > options.failure_rate_cap * records.len() as f64 {
        return Err(EvalError::FailureRate {
            failed: failures,
            total: records.len(),
            cap: options.failure_rate_cap,
        });
    }
    let mut accuracy = BTreeMap::new();
    for &k in &options.ks {
        accuracy.insert(k, topk_accuracy(&records, k, options.nil_scoring)?);
    }
    Ok(EvalReport {
        label: label.to_string(),
        config_fingerprint: config.fingerprint(),
        kg_digest: kg.source_digest().to_string(),
        sample_count: records.len(),
        accuracy,
        avg_time_seconds: avg_response_time(&records)?,
        failures,
        records,
    })
}

/// Configuration change for one ablation row.
///
/// Labels: `full`, `w/o <letters>` over b (consistency gate), c (image
/// gate), d (visual feedback), `w/o <kinds>` for clue subsets such as
/// `w/o ocr,cap`, and `all-at-once` for injecting every clue in round 1.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationDelta {
    pub without_icr: bool,
    pub without_iav: bool,
    pub without_vif: bool,
    pub without_clues: Vec<ClueKind>,
    pub all_at_once: bool,
}

impl AblationDelta {
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        let modules: String = [
            (self.without_icr, 'b'),
            (self.without_iav, 'c'),
            (self.without_vif, 'd'),
        ]
        .iter()
        .filter(|(off, _)| *off)
        .map(|(_, c)| *c)
        .collect();
        if !modules.is_empty() {
            parts.push(format!("w/o {modules}"));
        }
        if !self.without_clues.is_empty() {
            parts.push(format!("w/o {}", ClueList(&self.without_clues)));
        }
        if self.all_at_once {
            parts.push("all-at-once".to_string());
        }
        if parts.is_empty() {
            "full".to_string()
        } else {
            parts.join(" + ")
        }
    }

    pub fn apply(&self, base: &PipelineConfig) -> PipelineConfig {
        let mut config = base.clone().without_clues(&self.without_clues);
        config.enable_icr &= !self.without_icr;
        config.enable_iav &= !self.without_iav;
        config.enable_vif &= !self.without_vif;
        if self.all_at_once {
            config.clue_injection = ClueInjection::AllAtOnce;
        }
        config
    }
}

impl FromStr for AblationDelta {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut delta = AblationDelta::default();
        for part in s.split('+').map(str::trim) {
            if part.eq_ignore_ascii_case("full") {
                continue;
            }
            if part.eq_ignore_ascii_case("all-at-once") || part.eq_ignore_ascii_case("all_at_once") {
                delta.all_at_once = true;
                continue;
            }
            let rest = part
                .strip_prefix("w/o")
                .map(str::trim)
                .filter(|r| !r.is_empty())
                .ok_or_else(|| EvalError::Ablation(s.to_string()))?;
            if rest.chars().all(|c| matches!(c, 'b' | 'c' | 'd')) {
                delta.without_icr |= rest.contains('b');
                delta.without_iav |= rest.contains('c');
                delta.without_vif |= rest.contains('d');
            } else {
                for kind in rest.split(',') {
                    let kind: ClueKind = kind
                        .parse()
                        .map_err(|_| EvalError::Ablation(s.to_string()))?;
                    if !delta.without_clues.contains(&kind) {
                        delta.without_clues.push(kind);
                    }
                }
            }
        }
        delta.without_clues.sort();
        Ok(delta)
    }
}

/// Parses `;`-separated ablation labels.
pub fn parse_ablations(spec: &str) -> Result<Vec<AblationDelta>, EvalError> {
    spec.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect()
}

/// One report per delta, same samples in the same order.
pub fn run_ablation(
    samples: &[MentionSample],
    kg: &KgSnapshot,
    backends: &Backends,
    base: &PipelineConfig,
    deltas: &[AblationDelta],
    options: &EvalOptions,
) -> Result<Vec<(AblationDelta, EvalReport)>, EvalError> {
    deltas
        .iter()
        .map(|delta| {
            let config = delta.apply(base);
            run_eval(samples, kg, backends, &config, options, &delta.label())
                .map(|report| (delta.clone(), report))
        })
        .collect()
}

/// Top-1 accuracy when the pipeline may use at most `r` rounds, for
/// `r = 1..=1 + |clue_order|`.
pub fn round_accuracy_curve(
    samples: &[MentionSample],
    kg: &KgSnapshot,
    backends: &Backends,
    config: &PipelineConfig,
    options: &EvalOptions,
) -> Result<Vec<(usize, f64)>, EvalError> {
    let options = EvalOptions {
        ks: vec![1],
        ..options.clone()
    };
    (0..=config.clue_order.len())
        .map(|used| {
            let capped = config
                .clone()
                .with_clue_order(config.clue_order[..used].to_vec());
            let report = run_eval(samples, kg, backends, &capped, &options, "")?;
            Ok((used + 1, report.accuracy[&1]))
        })
        .collect()
}

pub fn permutations(kinds: &[ClueKind]) -> Vec<Vec<ClueKind>> {
    if kinds.len() <= 1 {
        return vec![kinds.to_vec()];
    }
    let mut out = Vec::new();
    for (i, &first) in kinds.iter().enumerate() {
        let mut rest = kinds.to_vec();
        rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, first);
            out.push(tail);
        }
    }
    out
}

/// Evaluates every ordering of the configured clue kinds.
pub fn clue_order_sweep(
    samples: &[MentionSample],
    kg: &KgSnapshot,
    backends: &Backends,
    config: &PipelineConfig,
    options: &EvalOptions,
) -> Result<Vec<EvalReport>, EvalError> {
    permutations(&config.clue_order)
        .into_iter()
        .map(|order| {
            let label = order.iter().map(|k| k.as_str()).collect::<Vec<_>>().join("-");
            let ordered = config.clone().with_clue_order(order);
            run_eval(samples, kg, backends, &ordered, options, &label)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatSummary {
    pub runs: usize,
    pub mean: BTreeMap<usize, f64>,
    /// Population standard deviation across runs.
    pub stddev: BTreeMap<usize, f64>,
}

/// Mean and spread of accuracy over repeated runs.
pub fn summarize_repeats(reports: &[EvalReport]) -> Result<RepeatSummary, EvalError> {
    let first = reports.first().ok_or(EvalError::EmptyEvalSet)?;
    let n = reports.len() as f64;
    let mut mean = BTreeMap::new();
    let mut stddev = BTreeMap::new();
    for &k in first.accuracy.keys() {
        let values: Vec<f64> = reports.iter().filter_map(|r| r.accuracy_at(k)).collect();
        let m = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
        mean.insert(k, m);
        stddev.insert(k, var.sqrt());
    }
    Ok(RepeatSummary {
        runs: reports.len(),
        mean,
        stddev,
    })
}

/// Plain-text table: one row per report, Top-K columns in percent, then
/// average time.
pub fn render_table(reports: &[EvalReport]) -> String {
    let ks: Vec<usize> = reports
        .first()
        .map(|r| r.accuracy.keys().copied().collect())
        .unwrap_or_default();
    let width = reports
        .iter()
        .map(|r| r.label.chars().count())
        .chain(["Setting".len()])
        .max()
        .unwrap_or(7);
    let mut out = String::new();
    let _ = write!(out, "{:<width$}", "Setting");
    for k in &ks {
        let _ = write!(out, "  {:>7}", format!("Top-{k}"));
    }
    let _ = writeln!(out, "  {:>11}", "Avg-Time(s)");
    for report in reports {
        let _ = write!(out, "{:<width$}", report.label);
        for k in &ks {
            let _ = write!(out, "  {:>7.1}", 100.0 * report.accuracy[k]);
        }
        let _ = writeln!(out, "  {:>11.4}", report.avg_time_seconds);
    }
    out.push_str(
        "\nAvg-Time covers the full linking call including backend latency; \
         with mock backends it is near zero and not comparable to live runs.\n",
    );
    out
}
