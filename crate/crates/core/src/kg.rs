//! Knowledge-graph snapshot: loading, lookup, and description summarization.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::{Arc, OnceLock};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, DescriptionSummarizer};
use crate::digest;
use crate::retrieval::LexicalIndex;

/// One entity of the knowledge graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub aliases: Vec<String>,
}

impl EntityRecord {
    pub fn new(id: impl Into<String>, name: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            name: name.into(),
            description: description.into(),
            aliases: Vec::new(),
        }
    }

    pub fn with_aliases<I, S>(mut self, aliases: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.aliases = aliases.into_iter().map(Into::into).collect();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KgFormat {
    Jsonl,
    Tsv,
}

impl KgFormat {
    /// Guesses the format from a file extension; anything but `.tsv` is JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("tsv") => KgFormat::Tsv,
            _ => KgFormat::Jsonl,
        }
    }
}

impl FromStr for KgFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(KgFormat::Jsonl),
            "tsv" => Ok(KgFormat::Tsv),
            other => Err(format!("unknown KG format `{other}` (expected jsonl or tsv)")),
        }
    }
}

impl fmt::Display for KgFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KgFormat::Jsonl => "jsonl",
            KgFormat::Tsv => "tsv",
        })
    }
}

#[derive(Debug, Error)]
pub enum KgError {
    #[error("failed to read knowledge graph: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate entity id `{0}`")]
    DuplicateId(String),
    #[error("summarizer failed on entity `{entity_id}` after {completed} summaries: {source}")]
    Backend {
        entity_id: String,
        completed: usize,
        #[source]
        source: BackendError,
    },
    #[error("summary for entity `{entity_id}` has {len} chars, limit is {max_chars}")]
    SummaryTooLong {
        entity_id: String,
        len: usize,
        max_chars: usize,
    },
}

/// Immutable, id-indexed set of entities.
///
/// Iteration is in ascending id order. The digest is the SHA-256 of the
/// canonical JSONL serialization, so a snapshot and its serialized form
/// always share a digest regardless of the source format.
#[derive(Debug, Clone)]
pub struct KgSnapshot {
    entities: BTreeMap<String, EntityRecord>,
    source_digest: String,
    lexical: OnceLock<Arc<LexicalIndex>>,
}

impl PartialEq for KgSnapshot {
    fn eq(&self, other: &Self) -> bool {
        self.source_digest == other.source_digest && self.entities == other.entities
    }
}

impl Eq for KgSnapshot {}

impl KgSnapshot {
    pub fn from_records<I>(records: I) -> Result<Self, KgError>
    where
        I: IntoIterator<Item = EntityRecord>,
    {
        let mut entities = BTreeMap::new();
        for (idx, record) in records.into_iter().enumerate() {
            validate_record(&record).map_err(|message| KgError::Parse {
                line: idx + 1,
                message,
            })?;
            if entities.contains_key(&record.id) {
                return Err(KgError::DuplicateId(record.id));
            }
            entities.insert(record.id.clone(), record);
        }
        Ok(Self::from_map(entities))
    }

    fn from_map(entities: BTreeMap<String, EntityRecord>) -> Self {
        let mut snapshot = Self {
            entities,
            source_digest: String::new(),
            lexical: OnceLock::new(),
        };
        snapshot.source_digest = digest::sha256_hex(snapshot.to_jsonl().as_bytes());
        snapshot
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&EntityRecord> {
        self.entities.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &EntityRecord> {
        self.entities.values()
    }

    /// Normalized names and aliases, built on first retrieval.
    pub(crate) fn lexical_index(&self) -> &LexicalIndex {
        self.lexical
            .get_or_init(|| Arc::new(LexicalIndex::build(self.entities.values())))
    }

    pub fn source_digest(&self) -> &str {
        &self.source_digest
    }

    /// Canonical JSONL: one record per line, ascending id, trailing newline.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for record in self.entities.values() {
            out.push_str(&serde_json::to_string(record).expect("entity serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        writer.write_all(self.to_jsonl().as_bytes())
    }
}

fn validate_record(record: &EntityRecord) -> Result<(), String> {
    if record.id.is_empty() {
        return Err("entity id must be non-empty".into());
    }
    if record.name.is_empty() {
        return Err(format!("entity `{}` has an empty name", record.id));
    }
    Ok(())
}

pub fn load_kg(path: impl AsRef<Path>, format: KgFormat) -> Result<KgSnapshot, KgError> {
    let file = std::fs::File::open(path.as_ref())?;
    read_kg(file, format)
}

/// Parses a snapshot from any reader. Blank lines are skipped.
pub fn read_kg<R: Read>(reader: R, format: KgFormat) -> Result<KgSnapshot, KgError> {
    let mut entities = BTreeMap::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| match e.kind() {
            std::io::ErrorKind::InvalidData => KgError::Parse {
                line: line_no,
                message: "invalid UTF-8".into(),
            },
            _ => KgError::Io(e),
        })?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            continue;
        }
        let record = match format {
            KgFormat::Jsonl => parse_jsonl_line(line),
            KgFormat::Tsv => parse_tsv_line(line),
        }
        .and_then(|r| validate_record(&r).map(|_| r))
        .map_err(|message| KgError::Parse {
            line: line_no,
            message,
        })?;
        if entities.contains_key(&record.id) {
            return Err(KgError::DuplicateId(record.id));
        }
        entities.insert(record.id.clone(), record);
    }
    Ok(KgSnapshot::from_map(entities))
}

fn parse_jsonl_line(line: &str) -> Result<EntityRecord, String> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Line {
        id: String,
        name: String,
        description: String,
        #[serde(default)]
        aliases: Vec<String>,
    }
    let parsed: Line = serde_json::from_str(line).map_err(|e| e.to_string())?;
    Ok(EntityRecord {
        id: parsed.id,
        name: parsed.name,
        description: parsed.description,
        aliases: parsed.aliases,
    })
}

fn parse_tsv_line(line: &str) -> Result<EntityRecord, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    match fields.as_slice() {
        [id, name, description] => Ok(EntityRecord::new(*id, *name, *description)),
        _ => Err(format!("expected 3 tab-separated fields, found {}", fields.len())),
    }
}

/// Replaces every description longer than `max_chars` characters with the
/// summarizer's output, producing a new snapshot.
///
/// Summaries that still exceed `max_chars` are rejected rather than cut.
pub fn summarize_descriptions(
    kg: &KgSnapshot,
    summarizer: &dyn DescriptionSummarizer,
    max_chars: usize,
) -> Result<KgSnapshot, KgError> {
    let mut entities = kg.entities.clone();
    let mut completed = 0;
    for record in entities.values_mut() {
        if record.description.chars().count() <= max_chars {
            continue;
        }
        let summary = summarizer
            .summarize(&record.description, max_chars)
            .map_err(|source| KgError::Backend {
                entity_id: record.id.clone(),
                completed,
                source,
            })?;
        let len = summary.chars().count();
        if len > max_chars {
            return Err(KgError::SummaryTooLong {
                entity_id: record.id.clone(),
                len,
                max_chars,
            });
        }
        record.description = summary;
        completed += 1;
    }
    tracing::debug!(completed, "summarized descriptions");
    Ok(KgSnapshot::from_map(entities))
}
