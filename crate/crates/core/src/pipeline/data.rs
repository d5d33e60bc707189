//! Dataset ingestion: one JSON object per line.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{FAKE, REAL};
use crate::kg::{EntityId, KnowledgeGraph, Vocab};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    pub fn class(self) -> usize {
        match self {
            Label::Real => REAL,
            Label::Fake => FAKE,
        }
    }

    pub fn from_class(class: usize) -> Self {
        if class == FAKE {
            Label::Fake
        } else {
            Label::Real
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Real => "real",
            Label::Fake => "fake",
        }
    }
}

/// One line of the dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub text: String,
    pub entities: Vec<String>,
    pub image_features: String,
    pub label: Label,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub text: String,
    pub tokens: Vec<u32>,
    /// Mentioned entities in the order listed, duplicates removed.
    pub entities: Vec<EntityId>,
    /// Feature file as written in the dataset (relative to it, or absolute).
    pub image_features: String,
    pub label: Label,
}

impl Sample {
    pub fn record(&self, g: &KnowledgeGraph) -> SampleRecord {
        SampleRecord {
            id: self.id.clone(),
            text: self.text.clone(),
            entities: self.entities.iter().map(|&e| g.entity(e).label.clone()).collect(),
            image_features: self.image_features.clone(),
            label: self.label,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DroppedSample {
    pub id: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub dropped: Vec<DroppedSample>,
    /// Directory relative feature paths are resolved against.
    pub base_dir: PathBuf,
}

impl Dataset {
    pub fn image_path(&self, sample: &Sample) -> PathBuf {
        self.base_dir.join(&sample.image_features)
    }
}

/// Resolves one record against the graph. `Ok(Err(reason))` means the
/// sample is dropped.
pub fn resolve_sample(record: SampleRecord, g: &KnowledgeGraph, vocab: &Vocab) -> std::result::Result<Sample, String> {
    let missing: Vec<&str> = record
        .entities
        .iter()
        .filter(|l| g.entity_by_label(l).is_none())
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        return Err(format!("entities not in the knowledge graph: {}", missing.join(", ")));
    }
    let mut entities: Vec<EntityId> = Vec::with_capacity(record.entities.len());
    for label in &record.entities {
        let e = g.entity_by_label(label).expect("checked above");
        if !entities.contains(&e) {
            entities.push(e);
        }
    }
    if entities.is_empty() {
        return Err("no entities".into());
    }
    let tokens = vocab.tokenize(&record.text);
    if tokens.is_empty() {
        return Err("empty text".into());
    }
    Ok(Sample {
        id: record.id,
        text: record.text,
        tokens,
        entities,
        image_features: record.image_features,
        label: record.label,
    })
}

pub fn parse_dataset(text: &str, origin: &Path, g: &KnowledgeGraph, vocab: &Vocab) -> Result<Dataset> {
    let mut out = Dataset {
        base_dir: origin.parent().map(Path::to_path_buf).unwrap_or_default(),
        ..Dataset::default()
    };
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: SampleRecord =
            serde_json::from_str(line).map_err(|e| Error::parse(origin, i + 1, e.to_string()))?;
        let id = record.id.clone();
        match resolve_sample(record, g, vocab) {
            Ok(s) => out.samples.push(s),
            Err(reason) => {
                log::warn!("dropping sample `{id}` (line {}): {reason}", i + 1);
                out.dropped.push(DroppedSample { id, reason });
            }
        }
    }
    Ok(out)
}

pub fn load_dataset(path: &Path, g: &KnowledgeGraph, vocab: &Vocab) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, path, g, vocab)
}

pub fn dataset_to_jsonl(records: &[SampleRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn write_dataset(path: &Path, records: &[SampleRecord]) -> Result<()> {
    fs::write(path, dataset_to_jsonl(records)).map_err(|e| Error::io(path, e))
}

/// Reads one sample id per line.
pub fn load_id_list(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

/// Samples whose id is in `ids`, in `ids` order. Unknown ids are errors.
pub fn select_ids<'a>(samples: &'a [Sample], ids: &[String]) -> Result<Vec<&'a Sample>> {
    ids.iter()
        .map(|id| {
            samples
                .iter()
                .find(|s| &s.id == id)
                .ok_or_else(|| Error::InvalidInput(format!("sample `{id}` not in the dataset")))
        })
        .collect()
}
