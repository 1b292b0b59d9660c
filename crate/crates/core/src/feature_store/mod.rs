//! Precomputed [CLS] feature matrices, their NDJSON manifests, and the join
//! that turns the two into labelled records.

mod npy;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use npy::{parse_npy, write_npy, write_npy_f32};

/// Width of the [CLS] token emitted by a CLIP ViT-L/14 visual branch.
pub const CLS_DIM: usize = 1024;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("malformed NPY header: {0}")]
    MalformedHeader(String),
    #[error("unsupported dtype {0:?} (only little-endian f4/f8 are accepted)")]
    UnsupportedDtype(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },
    #[error("line {line}: duplicate image_id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("image {id:?} references row {row} but the matrix has {rows} rows")]
    RowOutOfRange { id: String, row: usize, rows: usize },
    #[error("line {line}: unknown label {label:?}")]
    UnknownLabel { line: usize, label: String },
    #[error("line {line}: unknown split {split:?}")]
    UnknownSplit { line: usize, split: String },
    #[error("line {line}: invalid manifest record: {source}")]
    InvalidRecord {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

/// Row-major matrix of finite feature activations.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    dim: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, dim: usize, values: Vec<f64>) -> Result<Self, StoreError> {
        if rows.checked_mul(dim) != Some(values.len()) {
            return Err(StoreError::ShapeMismatch(format!(
                "{rows} x {dim} matrix cannot hold {} values",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(StoreError::NonFiniteValue {
                row: i / dim,
                col: i % dim,
            });
        }
        Ok(Self { rows, dim, values })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, StoreError> {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(StoreError::ShapeMismatch(format!(
                    "row {i} has {} values, expected {dim}",
                    r.len()
                )));
            }
            values.extend_from_slice(r);
        }
        Self::new(rows.len(), dim, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    /// 1.0 for Fake (the positive class), 0.0 for Real.
    pub fn target(self) -> f64 {
        match self {
            Label::Real => 0.0,
            Label::Fake => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Real => "real",
            Label::Fake => "fake",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s.to_ascii_lowercase().as_str() {
            "real" => Ok(Label::Real),
            "fake" => Ok(Label::Fake),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (expected train|val|test)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub image_id: String,
    pub row: usize,
    pub label: Label,
    pub split: Split,
    /// Reference artifact explanation for the image, when one exists.
    pub explanation: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    entries: Vec<ManifestEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    image_id: String,
    row: usize,
    label: String,
    split: String,
    #[serde(default)]
    explanation: Option<String>,
}

#[derive(Serialize)]
struct RawEntryOut<'a> {
    image_id: &'a str,
    row: usize,
    label: Label,
    split: Split,
    #[serde(skip_serializing_if = "Option::is_none")]
    explanation: Option<&'a str>,
}

impl DatasetManifest {
    /// Builds a manifest, enforcing unique image ids.
    pub fn from_entries(entries: Vec<ManifestEntry>) -> Result<Self, StoreError> {
        let mut seen = HashSet::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if !seen.insert(e.image_id.as_str()) {
                return Err(StoreError::DuplicateId {
                    line: i + 1,
                    id: e.image_id.clone(),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, image_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.image_id == image_id)
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }

    /// Serializes back to NDJSON, one record per line.
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let raw = RawEntryOut {
                image_id: &e.image_id,
                row: e.row,
                label: e.label,
                split: e.split,
                explanation: e.explanation.as_deref(),
            };
            out.push_str(&serde_json::to_string(&raw).expect("manifest entry serializes"));
            out.push('\n');
        }
        out
    }
}

/// Parses an NDJSON manifest. Blank lines are skipped.
pub fn load_manifest(text: &[u8]) -> Result<DatasetManifest, StoreError> {
    let text = String::from_utf8_lossy(text);
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawEntry = serde_json::from_str(line).map_err(|source| {
            StoreError::InvalidRecord {
                line: line_no,
                source,
            }
        })?;
        let label = raw.label.parse().map_err(|_| StoreError::UnknownLabel {
            line: line_no,
            label: raw.label.clone(),
        })?;
        let split = raw.split.parse().map_err(|_| StoreError::UnknownSplit {
            line: line_no,
            split: raw.split.clone(),
        })?;
        if !seen.insert(raw.image_id.clone()) {
            return Err(StoreError::DuplicateId {
                line: line_no,
                id: raw.image_id,
            });
        }
        entries.push(ManifestEntry {
            image_id: raw.image_id,
            row: raw.row,
            label,
            split,
            explanation: raw.explanation,
        });
    }
    Ok(DatasetManifest { entries })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub image_id: String,
    pub features: Vec<f64>,
    pub label: Label,
    pub split: Split,
}

/// One record per manifest entry, in manifest order.
pub fn join(
    matrix: &FeatureMatrix,
    manifest: &DatasetManifest,
) -> Result<Vec<FeatureRecord>, StoreError> {
    if let Some(bad) = manifest.entries.iter().find(|e| e.row >= matrix.rows) {
        return Err(StoreError::RowOutOfRange {
            id: bad.image_id.clone(),
            row: bad.row,
            rows: matrix.rows,
        });
    }
    Ok(manifest
        .entries
        .iter()
        .map(|e| FeatureRecord {
            image_id: e.image_id.clone(),
            features: matrix.row(e.row).to_vec(),
            label: e.label,
            split: e.split,
        })
        .collect())
}
