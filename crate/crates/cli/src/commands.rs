use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use i2cr_core::evaluation::{
    clue_order_sweep, load_dataset, parse_ablations, render_table, round_accuracy_curve,
    run_ablation, summarize_repeats, AblationDelta, EvalReport, RepeatSummary,
};
use i2cr_core::instruction::{export_instructions, ExportSummary};
use i2cr_core::kg::KgSnapshot;
use i2cr_core::pipeline::{
    link, link_topk, LinkError, LinkTrace, MentionSample, PipelineConfig, Prediction,
};
use i2cr_core::Backends;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::manifest::RunManifest;

/// Body shared by `i2cr link` and `POST /link`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkPayload {
    pub prediction: Prediction,
    pub topk: Vec<Prediction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<LinkTrace>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reselection: Vec<LinkTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<f64>,
}

pub fn link_payload(
    sample: &MentionSample,
    kg: &KgSnapshot,
    backends: &Backends,
    config: &PipelineConfig,
    top_k: usize,
    explain: bool,
) -> Result<LinkPayload, LinkError> {
    let result = if top_k <= 1 {
        link(sample, kg, backends, config)?
    } else {
        link_topk(sample, kg, backends, config, top_k)?
    };
    Ok(LinkPayload {
        prediction: result.prediction,
        topk: result.topk,
        trace: explain.then_some(result.trace),
        reselection: if explain { result.reselection } else { Vec::new() },
        wall_time: explain.then_some(result.wall_time),
    })
}

#[derive(Debug, Serialize)]
struct LinkOutput<'a> {
    #[serde(flatten)]
    payload: &'a LinkPayload,
    manifest: &'a RunManifest,
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_link(
    sample: &MentionSample,
    kg: &KgSnapshot,
    backends: &Backends,
    config: &PipelineConfig,
    top_k: usize,
    explain: bool,
    manifest: &RunManifest,
    out: &mut dyn Write,
) -> Result<LinkPayload, CliError> {
    let payload = link_payload(sample, kg, backends, config, top_k, explain).map_err(|e| {
        match e.failure.backend() {
            Some(_) => CliError::Backend(e.to_string()),
            None => CliError::Run(e.to_string()),
        }
    })?;
    let output = LinkOutput {
        payload: &payload,
        manifest,
    };
    serde_json::to_writer_pretty(&mut *out, &output).map_err(std::io::Error::from)?;
    writeln!(out)?;
    Ok(payload)
}

pub struct EvalArgs {
    pub dataset: PathBuf,
    pub ks: Vec<usize>,
    pub ablate: Option<String>,
    pub out_dir: PathBuf,
    pub round_curve: bool,
    pub clue_orders: bool,
    pub repeat: usize,
}

/// Report without per-sample records, which go to `predictions.jsonl`.
#[derive(Debug, Serialize)]
struct ReportSummary<'a> {
    label: &'a str,
    config_fingerprint: &'a str,
    kg_digest: &'a str,
    sample_count: usize,
    accuracy: &'a std::collections::BTreeMap<usize, f64>,
    avg_time_seconds: f64,
    failures: usize,
}

impl<'a> From<&'a EvalReport> for ReportSummary<'a> {
    fn from(r: &'a EvalReport) -> Self {
        Self {
            label: &r.label,
            config_fingerprint: &r.config_fingerprint,
            kg_digest: &r.kg_digest,
            sample_count: r.sample_count,
            accuracy: &r.accuracy,
            avg_time_seconds: r.avg_time_seconds,
            failures: r.failures,
        }
    }
}

#[derive(Debug, Serialize)]
struct ReportFile<'a> {
    manifest_fingerprint: String,
    reports: Vec<ReportSummary<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    repeats: Option<&'a RepeatSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    round_curve: Option<&'a [(usize, f64)]>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    clue_orders: Vec<ReportSummary<'a>>,
}

#[derive(Debug, Serialize)]
struct PredictionLine<'a> {
    label: &'a str,
    #[serde(flatten)]
    record: &'a i2cr_core::evaluation::EvalRecord,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value).map_err(std::io::Error::from)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

pub fn cmd_eval(
    args: &EvalArgs,
    kg: &KgSnapshot,
    backends: &Backends,
    config: &PipelineConfig,
    options: &i2cr_core::evaluation::EvalOptions,
    manifest: &RunManifest,
) -> Result<Vec<EvalReport>, CliError> {
    let samples =
        load_dataset(&args.dataset).map_err(|e| CliError::Input(format!("{}: {e}", args.dataset.display())))?;
    let deltas = match &args.ablate {
        Some(spec) => parse_ablations(spec).map_err(|e| CliError::Config(e.to_string()))?,
        None => vec![AblationDelta::default()],
    };
    let run = |_| run_ablation(&samples, kg, backends, config, &deltas, options);
    let mut runs: Vec<Vec<(AblationDelta, EvalReport)>> = (0..args.repeat.max(1))
        .map(run)
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Run(e.to_string()))?;
    let repeats = if runs.len() > 1 {
        let firsts: Vec<EvalReport> = runs.iter().map(|r| r[0].1.clone()).collect();
        Some(summarize_repeats(&firsts).map_err(|e| CliError::Run(e.to_string()))?)
    } else {
        None
    };
    let reports: Vec<EvalReport> = runs.swap_remove(0).into_iter().map(|(_, r)| r).collect();

    let curve = if args.round_curve {
        Some(
            round_accuracy_curve(&samples, kg, backends, config, options)
                .map_err(|e| CliError::Run(e.to_string()))?,
        )
    } else {
        None
    };
    let orders = if args.clue_orders {
        clue_order_sweep(&samples, kg, backends, config, options)
            .map_err(|e| CliError::Run(e.to_string()))?
    } else {
        Vec::new()
    };

    std::fs::create_dir_all(&args.out_dir)?;
    write_json(&args.out_dir.join("manifest.json"), manifest)?;
    write_json(
        &args.out_dir.join("report.json"),
        &ReportFile {
            manifest_fingerprint: manifest.fingerprint(),
            reports: reports.iter().map(ReportSummary::from).collect(),
            repeats: repeats.as_ref(),
            round_curve: curve.as_deref(),
            clue_orders: orders.iter().map(ReportSummary::from).collect(),
        },
    )?;

    let mut table = render_table(&reports);
    if let Some(curve) = &curve {
        table.push_str("\nRound  Top-1\n");
        for (round, acc) in curve {
            table.push_str(&format!("{round:>5}  {:>5.1}\n", 100.0 * acc));
        }
    }
    if !orders.is_empty() {
        table.push('\n');
        table.push_str(&render_table(&orders));
    }
    table.push_str(&format!("\nmanifest {}\n", manifest.fingerprint()));
    std::fs::write(args.out_dir.join("report.txt"), &table)?;

    let mut preds = BufWriter::new(File::create(args.out_dir.join("predictions.jsonl"))?);
    for report in &reports {
        for record in &report.records {
            serde_json::to_writer(
                &mut preds,
                &PredictionLine {
                    label: &report.label,
                    record,
                },
            )
            .map_err(std::io::Error::from)?;
            writeln!(preds)?;
        }
    }
    preds.flush()?;
    Ok(reports)
}

pub fn cmd_export(
    dataset: &Path,
    kg: &KgSnapshot,
    k: usize,
    config: &PipelineConfig,
    out: &Path,
    manifest: &RunManifest,
) -> Result<ExportSummary, CliError> {
    let samples =
        load_dataset(dataset).map_err(|e| CliError::Input(format!("{}: {e}", dataset.display())))?;
    let file = BufWriter::new(File::create(out)?);
    let summary = export_instructions(&samples, kg, k, &config.instruction, file)
        .map_err(|e| CliError::Input(e.to_string()))?;
    let mut manifest_path = out.as_os_str().to_owned();
    manifest_path.push(".manifest.json");
    write_json(Path::new(&manifest_path), manifest)?;
    Ok(summary)
}
