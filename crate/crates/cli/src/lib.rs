//! Command-line and HTTP front end for the linker.

pub mod commands;
pub mod error;
pub mod manifest;
pub mod runtime;
pub mod service;
pub mod settings;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use i2cr_core::evaluation::DatasetRecord;
use i2cr_core::pipeline::MentionSample;

use crate::commands::EvalArgs;
use crate::error::CliError;
use crate::manifest::RunManifest;
use crate::settings::{Settings, SettingsLoader};

#[derive(Debug, Parser)]
#[command(name = "i2cr", version, about = "Multimodal entity linking with reflection gates")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Flat TOML settings file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Setting override, `key=value`; repeatable, applied last.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Replay model calls from a JSONL transcript.
    #[arg(long, global = true)]
    pub mock_transcript: Option<PathBuf>,
    /// `strict` or `lenient` transcript lookups.
    #[arg(long, global = true)]
    pub mock_mode: Option<String>,
    /// Base URL of the model service.
    #[arg(long, global = true)]
    pub backend_url: Option<String>,
    /// Threshold preset: wikimel, wikidiverse, richmel.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Omit timestamps and wall times so outputs are reproducible.
    #[arg(long, global = true, alias = "no-timing")]
    pub deterministic: bool,
    /// Log progress to stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Link one mention and print the result as JSON.
    Link(LinkArgs),
    /// Evaluate a labeled dataset and write reports.
    Eval(EvalCmd),
    /// Write selector instruction-tuning records as JSONL.
    ExportInstructions(ExportArgs),
    /// Serve `POST /link` over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct LinkArgs {
    #[arg(long)]
    pub kg: PathBuf,
    #[arg(long, required_unless_present = "sample", conflicts_with = "sample")]
    pub mention: Option<String>,
    #[arg(long, default_value = "")]
    pub context: String,
    /// Image file for the mention.
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// JSON file with `mention`, `context`, and optional `image` path.
    #[arg(long)]
    pub sample: Option<PathBuf>,
    /// Length of the ranked list.
    #[arg(long = "K", default_value_t = 1)]
    pub top_k: usize,
    /// Include the full event trace.
    #[arg(long)]
    pub explain: bool,
}

#[derive(Debug, Args)]
pub struct EvalCmd {
    #[arg(long)]
    pub kg: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Comma-separated K values.
    #[arg(long = "K", default_value = "1,3,5")]
    pub ks: String,
    /// `;`-separated ablation rows, e.g. "full; w/o bcd; w/o ocr,cap".
    #[arg(long)]
    pub ablate: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also report Top-1 accuracy as rounds are added.
    #[arg(long)]
    pub round_curve: bool,
    /// Also evaluate every ordering of the enabled clue kinds.
    #[arg(long)]
    pub clue_orders: bool,
    /// Repeat the evaluation and report mean and standard deviation.
    #[arg(long, default_value_t = 1)]
    pub repeat: usize,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub kg: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Candidates per record; defaults to the configured `k`.
    #[arg(long = "K")]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub kg: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub listen: String,
}

pub fn load_settings<I>(global: &GlobalArgs, env: I) -> Result<Settings, CliError>
where
    I: IntoIterator<Item = (String, String)>,
{
    if let Some(path) = &global.config {
        if !path.is_file() {
            return Err(CliError::Config(format!(
                "config file {} does not exist",
                path.display()
            )));
        }
    }
    let mut loader = SettingsLoader::new().file(global.config.as_deref()).env(env);
    for (key, value) in [
        ("preset", &global.preset),
        ("backend_url", &global.backend_url),
        ("mock_mode", &global.mock_mode),
    ] {
        if let Some(v) = value {
            loader = loader.set(key, v.clone());
        }
    }
    if let Some(t) = &global.mock_transcript {
        loader = loader.set("mock_transcript", t.display().to_string());
    }
    for pair in &global.overrides {
        loader = loader.set_pair(pair)?;
    }
    Ok(loader.load()?)
}

fn parse_ks(text: &str) -> Result<Vec<usize>, CliError> {
    let ks = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().ok().filter(|k| *k > 0))
        .collect::<Option<Vec<_>>>()
        .filter(|ks| !ks.is_empty())
        .ok_or_else(|| CliError::Config(format!("--K expects positive integers, got `{text}`")))?;
    Ok(ks)
}

fn sample_from_args(args: &LinkArgs) -> Result<MentionSample, CliError> {
    if let Some(path) = &args.sample {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let record: DatasetRecord = serde_json::from_str(&text)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        return record
            .into_sample(base)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())));
    }
    let mention = args.mention.clone().unwrap_or_default();
    let mut sample = MentionSample::new(mention, args.context.clone());
    if let Some(image) = &args.image {
        let bytes = std::fs::read(image)
            .map_err(|e| CliError::Input(format!("{}: {e}", image.display())))?;
        sample = sample.with_image(bytes);
    }
    Ok(sample)
}

/// Runs one command; `args` is recorded in the run manifest.
pub fn run<I>(cli: Cli, args: Vec<String>, env: I, stdout: &mut dyn Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = (String, String)>,
{
    let settings = load_settings(&cli.global, env)?;
    let stamped = !cli.global.deterministic;
    let config = &settings.pipeline;
    match cli.command {
        Command::Link(link) => {
            if link.top_k == 0 {
                return Err(CliError::Config("--K must be positive".into()));
            }
            let kg = runtime::open_kg(&link.kg)?;
            let (backends, described) = runtime::open_backends(&settings)?;
            let sample = sample_from_args(&link)?;
            let manifest = RunManifest::new(args, config, kg.source_digest(), described, stamped);
            commands::cmd_link(&sample, &kg, &backends, config, link.top_k, link.explain, &manifest, stdout)?;
        }
        Command::Eval(eval) => {
            let ks = parse_ks(&eval.ks)?;
            let kg = runtime::open_kg(&eval.kg)?;
            let (backends, described) = runtime::open_backends(&settings)?;
            let manifest = RunManifest::new(args, config, kg.source_digest(), described, stamped);
            let options = settings.eval_options(ks, stamped);
            let eval_args = EvalArgs {
                dataset: eval.dataset,
                ks: options.ks.clone(),
                ablate: eval.ablate,
                out_dir: eval.out.clone(),
                round_curve: eval.round_curve,
                clue_orders: eval.clue_orders,
                repeat: eval.repeat,
            };
            let reports = commands::cmd_eval(&eval_args, &kg, &backends, config, &options, &manifest)?;
            write!(stdout, "{}", i2cr_core::evaluation::render_table(&reports))?;
            writeln!(stdout, "wrote {}", eval.out.display())?;
        }
        Command::ExportInstructions(export) => {
            let kg = runtime::open_kg(&export.kg)?;
            let k = export.k.unwrap_or(config.k);
            if k == 0 {
                return Err(CliError::Config("--K must be positive".into()));
            }
            let manifest = RunManifest::new(args, config, kg.source_digest(), "none".into(), stamped);
            let summary = commands::cmd_export(&export.dataset, &kg, k, config, &export.out, &manifest)?;
            serde_json::to_writer_pretty(&mut *stdout, &summary).map_err(std::io::Error::from)?;
            writeln!(stdout)?;
        }
        Command::Serve(serve) => {
            let kg = runtime::open_kg(&serve.kg)?;
            // blocking HTTP clients must exist before the async runtime
            let (backends, described) = runtime::open_backends(&settings)?;
            tracing::info!(backend = %described, "backends ready");
            let state = Arc::new(service::AppState::new(
                kg,
                backends,
                config.clone(),
                settings.service_max_in_flight,
            ));
            let rt = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(&serve.listen)
                    .await
                    .map_err(|e| CliError::Config(format!("cannot listen on {}: {e}", serve.listen)))?;
                writeln!(stdout, "listening on {}", listener.local_addr()?)?;
                stdout.flush()?;
                service::serve(listener, state, service::shutdown_signal()).await?;
                Ok::<_, CliError>(())
            })?;
        }
    }
    Ok(())
}
