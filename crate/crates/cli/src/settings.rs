//! Layered configuration: defaults, then a dataset preset, then a flat TOML
//! file, then `I2CR_*` environment variables, then command-line overrides.

use std::path::{Path, PathBuf};
use std::time::Duration;

use i2cr_core::backends::http::HttpBackendConfig;
use i2cr_core::backends::mock::MockMode;
use i2cr_core::evaluation::{EvalOptions, NilScoring};
use i2cr_core::pipeline::{parse_clue_list, ClueList, DatasetPreset, PipelineConfig};
use serde::Serialize;
use thiserror::Error;

pub const ENV_PREFIX: &str = "I2CR_";

#[derive(Debug, Error)]
pub enum SettingsError {
    #[error("config file {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config file {path}: {message}")]
    Syntax { path: PathBuf, message: String },
    #[error("{origin}: unknown setting `{key}`")]
    UnknownKey { origin: String, key: String },
    #[error("{origin}: invalid value `{value}` for `{key}`: {message}")]
    InvalidValue {
        origin: String,
        key: String,
        value: String,
        message: String,
    },
    #[error("override `{0}` is not of the form key=value")]
    MalformedOverride(String),
    #[error("invalid pipeline configuration: {0}")]
    Pipeline(String),
}

/// Where model calls go.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSettings {
    Mock { transcript: PathBuf, mode: MockMode },
    Http(HttpSettings),
    Unset,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HttpSettings {
    pub url: String,
    pub timeout_ms: u64,
    pub max_attempts: u32,
    pub backoff_ms: u64,
    pub max_in_flight: usize,
    pub embedding_dimension: Option<usize>,
}

impl HttpSettings {
    pub fn to_config(&self) -> HttpBackendConfig {
        HttpBackendConfig {
            base_url: self.url.clone(),
            timeout: Duration::from_millis(self.timeout_ms),
            max_attempts: self.max_attempts,
            backoff_base: Duration::from_millis(self.backoff_ms),
            max_in_flight: self.max_in_flight,
            embedding_dimension: self.embedding_dimension,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub preset: Option<DatasetPreset>,
    pub pipeline: PipelineConfig,
    pub backend: BackendSettings,
    pub workers: usize,
    pub failure_rate_cap: f64,
    pub nil_scoring: NilScoring,
    /// Concurrent link requests the service runs at once.
    pub service_max_in_flight: usize,
}

/// Raw backend keys, resolved once all layers are in.
#[derive(Debug, Clone, Default)]
struct BackendKeys {
    url: Option<String>,
    transcript: Option<PathBuf>,
    mode: MockMode,
    timeout_ms: u64,
    max_attempts: u32,
    backoff_ms: u64,
    max_in_flight: usize,
    embedding_dimension: Option<usize>,
}

/// A key/value pair and where it came from, for diagnostics.
#[derive(Debug, Clone)]
struct Entry {
    origin: String,
    key: String,
    value: String,
}

#[derive(Debug, Clone, Default)]
pub struct SettingsLoader {
    file: Option<PathBuf>,
    env: Vec<(String, String)>,
    overrides: Vec<(String, String)>,
}

impl SettingsLoader {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn file(mut self, path: Option<&Path>) -> Self {
        self.file = path.map(Path::to_path_buf);
        self
    }

    /// Environment snapshot; only `I2CR_*` variables are used.
    pub fn env<I: IntoIterator<Item = (String, String)>>(mut self, vars: I) -> Self {
        self.env = vars
            .into_iter()
            .filter_map(|(k, v)| {
                k.strip_prefix(ENV_PREFIX)
                    .map(|key| (key.to_ascii_lowercase(), v))
            })
            .collect();
        self
    }

    /// Command-line values; applied last, in order.
    pub fn set(mut self, key: &str, value: impl Into<String>) -> Self {
        self.overrides.push((key.to_string(), value.into()));
        self
    }

    pub fn set_pair(self, pair: &str) -> Result<Self, SettingsError> {
        match pair.split_once('=') {
            Some((k, v)) if !k.trim().is_empty() => Ok(self.set(k.trim(), v.trim())),
            _ => Err(SettingsError::MalformedOverride(pair.to_string())),
        }
    }

    pub fn load(&self) -> Result<Settings, SettingsError> {
        let mut entries = Vec::new();
        if let Some(path) = &self.file {
            entries.extend(read_file(path)?);
        }
        entries.extend(self.env.iter().map(|(k, v)| Entry {
            origin: format!("environment {ENV_PREFIX}{}", k.to_ascii_uppercase()),
            key: k.clone(),
            value: v.clone(),
        }));
        entries.extend(self.overrides.iter().map(|(k, v)| Entry {
            origin: "command line".into(),
            key: k.clone(),
            value: v.clone(),
        }));
        resolve(&entries)
    }
}

fn read_file(path: &Path) -> Result<Vec<Entry>, SettingsError> {
    let text = std::fs::read_to_string(path).map_err(|source| SettingsError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| SettingsError::Syntax {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let origin = path.display().to_string();
    table
        .into_iter()
        .map(|(key, value)| {
            let value = match value {
                toml::Value::String(s) => s,
                toml::Value::Integer(i) => i.to_string(),
                toml::Value::Float(f) => f.to_string(),
                toml::Value::Boolean(b) => b.to_string(),
                toml::Value::Array(items) => items
                    .into_iter()
                    .map(|v| match v {
                        toml::Value::String(s) => Ok(s),
                        other => Err(other.to_string()),
                    })
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|bad| SettingsError::InvalidValue {
                        origin: origin.clone(),
                        key: key.clone(),
                        value: bad,
                        message: "lists may only hold strings".into(),
                    })?
                    .join(","),
                toml::Value::Table(_) | toml::Value::Datetime(_) => {
                    return Err(SettingsError::Syntax {
                        path: path.to_path_buf(),
                        message: format!("`{key}` must be a plain value; the file is flat"),
                    })
                }
            };
            Ok(Entry {
                origin: origin.clone(),
                key,
                value,
            })
        })
        .collect()
}

fn parse<T: std::str::FromStr>(entry: &Entry) -> Result<T, SettingsError>
where
    T::Err: std::fmt::Display,
{
    entry
        .value
        .trim()
        .parse()
        .map_err(|e: T::Err| invalid(entry, e.to_string()))
}

fn invalid(entry: &Entry, message: impl Into<String>) -> SettingsError {
    SettingsError::InvalidValue {
        origin: entry.origin.clone(),
        key: entry.key.clone(),
        value: entry.value.clone(),
        message: message.into(),
    }
}

fn parse_bool(entry: &Entry) -> Result<bool, SettingsError> {
    match entry.value.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(invalid(entry, "expected a boolean")),
    }
}

fn resolve(entries: &[Entry]) -> Result<Settings, SettingsError> {
    // the preset sits below every explicit value, whichever layer names it
    let mut preset = None;
    for entry in entries.iter().filter(|e| e.key == "preset") {
        preset = match entry.value.trim() {
            "" | "none" => None,
            _ => Some(parse::<DatasetPreset>(entry)?),
        };
    }
    let mut pipeline = preset.map_or_else(PipelineConfig::default, PipelineConfig::with_preset);
    let mut backend = BackendKeys {
        timeout_ms: 60_000,
        max_attempts: 3,
        backoff_ms: 200,
        max_in_flight: 8,
        ..BackendKeys::default()
    };
    let eval_defaults = EvalOptions::default();
    let mut workers = eval_defaults.workers;
    let mut failure_rate_cap = eval_defaults.failure_rate_cap;
    let mut nil_scoring = eval_defaults.nil_scoring;
    let mut service_max_in_flight = 32;

    for entry in entries {
        let p = &mut pipeline;
        match entry.key.as_str() {
            "preset" => {}
            "k" => p.k = parse(entry)?,
            "alpha" => p.alpha = parse(entry)?,
            "beta" => p.beta = parse(entry)?,
            "icr_retry_limit" => p.icr_retry_limit = parse(entry)?,
            "clue_order" => {
                p.clue_order = parse_clue_list(&entry.value).map_err(|e| invalid(entry, e))?
            }
            "enabled_clue_kinds" => {
                p.enabled_clue_kinds =
                    parse_clue_list(&entry.value).map_err(|e| invalid(entry, e))?
            }
            "enable_icr" => p.enable_icr = parse_bool(entry)?,
            "enable_iav" => p.enable_iav = parse_bool(entry)?,
            "enable_vif" => p.enable_vif = parse_bool(entry)?,
            "clue_injection" => p.clue_injection = parse(entry)?,
            "temperature" => p.temperature = parse(entry)?,
            "selector_max_attempts" => p.selector_max_attempts = parse(entry)?,
            "instruction" => p.instruction = entry.value.clone(),
            "backend_url" => backend.url = Some(entry.value.trim().to_string()).filter(|s| !s.is_empty()),
            "mock_transcript" => {
                backend.transcript = Some(PathBuf::from(entry.value.trim())).filter(|p| !p.as_os_str().is_empty())
            }
            "mock_mode" => backend.mode = parse(entry)?,
            "backend_timeout_ms" => backend.timeout_ms = parse(entry)?,
            "backend_max_attempts" => backend.max_attempts = parse(entry)?,
            "backend_backoff_ms" => backend.backoff_ms = parse(entry)?,
            "backend_max_in_flight" => backend.max_in_flight = parse(entry)?,
            "embedding_dimension" => backend.embedding_dimension = Some(parse(entry)?),
            "workers" => workers = parse(entry)?,
            "failure_rate_cap" => failure_rate_cap = parse(entry)?,
            "nil_scoring" => nil_scoring = parse(entry)?,
            "service_max_in_flight" => service_max_in_flight = parse(entry)?,
            _ => {
                return Err(SettingsError::UnknownKey {
                    origin: entry.origin.clone(),
                    key: entry.key.clone(),
                })
            }
        }
    }
    // a clue order given alone also defines the enabled set
    let order_set = entries.iter().any(|e| e.key == "clue_order");
    let enabled_set = entries.iter().any(|e| e.key == "enabled_clue_kinds");
    if order_set && !enabled_set {
        pipeline.enabled_clue_kinds = pipeline.clue_order.clone();
    } else if enabled_set && !order_set {
        let enabled = pipeline.enabled_clue_kinds.clone();
        pipeline.clue_order.retain(|k| enabled.contains(k));
    }
    pipeline
        .validate()
        .map_err(|e| SettingsError::Pipeline(e.to_string()))?;
    if workers == 0 || service_max_in_flight == 0 || backend.max_in_flight == 0 {
        return Err(SettingsError::Pipeline(
            "workers and in-flight limits must be positive".into(),
        ));
    }

    let backend = match (backend.transcript, backend.url) {
        (Some(transcript), _) => BackendSettings::Mock {
            transcript,
            mode: backend.mode,
        },
        (None, Some(url)) => BackendSettings::Http(HttpSettings {
            url,
            timeout_ms: backend.timeout_ms,
            max_attempts: backend.max_attempts,
            backoff_ms: backend.backoff_ms,
            max_in_flight: backend.max_in_flight,
            embedding_dimension: backend.embedding_dimension,
        }),
        (None, None) => BackendSettings::Unset,
    };
    Ok(Settings {
        preset,
        pipeline,
        backend,
        workers,
        failure_rate_cap,
        nil_scoring,
        service_max_in_flight,
    })
}

impl Settings {
    pub fn eval_options(&self, ks: Vec<usize>, record_timing: bool) -> EvalOptions {
        EvalOptions {
            ks,
            workers: self.workers,
            failure_rate_cap: self.failure_rate_cap,
            nil_scoring: self.nil_scoring,
            record_timing,
        }
    }

    /// Flat `key = value` rendering that loads back to the same settings.
    pub fn to_toml(&self) -> String {
        let p = &self.pipeline;
        let mut lines = vec![
            format!("k = {}", p.k),
            format!("alpha = {:?}", p.alpha),
            format!("beta = {:?}", p.beta),
            format!("icr_retry_limit = {}", p.icr_retry_limit),
            format!("clue_order = {:?}", ClueList(&p.clue_order).to_string()),
            format!("enabled_clue_kinds = {:?}", ClueList(&p.enabled_clue_kinds).to_string()),
            format!("enable_icr = {}", p.enable_icr),
            format!("enable_iav = {}", p.enable_iav),
            format!("enable_vif = {}", p.enable_vif),
            format!(
                "clue_injection = {:?}",
                serde_json::to_value(p.clue_injection).unwrap().as_str().unwrap_or_default()
            ),
            format!("temperature = {:?}", p.temperature),
            format!("selector_max_attempts = {}", p.selector_max_attempts),
            format!("instruction = {}", toml::Value::String(p.instruction.clone())),
            format!("workers = {}", self.workers),
            format!("failure_rate_cap = {:?}", self.failure_rate_cap),
            format!(
                "nil_scoring = {:?}",
                serde_json::to_value(self.nil_scoring).unwrap().as_str().unwrap_or_default()
            ),
            format!("service_max_in_flight = {}", self.service_max_in_flight),
        ];
        match &self.backend {
            BackendSettings::Mock { transcript, mode } => {
                lines.push(format!("mock_transcript = {:?}", transcript.display().to_string()));
                lines.push(format!(
                    "mock_mode = {:?}",
                    serde_json::to_value(mode).unwrap().as_str().unwrap_or_default()
                ));
            }
            BackendSettings::Http(h) => {
                lines.push(format!("backend_url = {:?}", h.url));
                lines.push(format!("backend_timeout_ms = {}", h.timeout_ms));
                lines.push(format!("backend_max_attempts = {}", h.max_attempts));
                lines.push(format!("backend_backoff_ms = {}", h.backoff_ms));
                lines.push(format!("backend_max_in_flight = {}", h.max_in_flight));
                if let Some(d) = h.embedding_dimension {
                    lines.push(format!("embedding_dimension = {d}"));
                }
            }
            BackendSettings::Unset => {}
        }
        lines.join("\n") + "\n"
    }
}
