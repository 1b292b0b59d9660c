//! On-disk head: a directory of `<f8` NPY arrays plus `head.json`.
//!
//! ```text
//! w1.npy  (dim, hidden)
//! b1.npy  (1, hidden)
//! w2.npy  (hidden, 1)
//! b2.npy  (1, 1)
//! head.json
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::HeadParams;
use crate::feature_store::{parse_npy, write_npy, FeatureMatrix, StoreError};

#[derive(Debug, Error)]
pub enum HeadIoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Array {
        path: String,
        #[source]
        source: StoreError,
    },
    #[error("head.json: {0}")]
    Sidecar(#[from] serde_json::Error),
    #[error("{file} has shape ({rows}, {cols}), expected ({want_rows}, {want_cols})")]
    Shape {
        file: &'static str,
        rows: usize,
        cols: usize,
        want_rows: usize,
        want_cols: usize,
    },
    #[error("head parameters contain non-finite values")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSidecar {
    pub dim: usize,
    pub hidden: usize,
    pub dropout_p: f64,
    pub leaky_slope: f64,
    pub seed: u64,
    pub val_accuracy: f64,
    #[serde(default)]
    pub l2_normalize: bool,
}

pub fn save_head(
    dir: &Path,
    params: &HeadParams,
    seed: u64,
    val_accuracy: f64,
) -> Result<(), HeadIoError> {
    fs::create_dir_all(dir).map_err(|source| HeadIoError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let arrays: [(&str, usize, usize, Vec<f64>); 4] = [
        ("w1.npy", params.dim, params.hidden, params.w1.clone()),
        ("b1.npy", 1, params.hidden, params.b1.clone()),
        ("w2.npy", params.hidden, 1, params.w2.clone()),
        ("b2.npy", 1, 1, vec![params.b2]),
    ];
    for (name, rows, cols, values) in arrays {
        let path = dir.join(name);
        let m = FeatureMatrix::new(rows, cols, values).map_err(|source| HeadIoError::Array {
            path: path.display().to_string(),
            source,
        })?;
        write(&path, &write_npy(&m))?;
    }
    let sidecar = HeadSidecar {
        dim: params.dim,
        hidden: params.hidden,
        dropout_p: params.dropout_p,
        leaky_slope: params.leaky_slope,
        seed,
        val_accuracy,
        l2_normalize: params.l2_normalize,
    };
    let mut json = serde_json::to_string_pretty(&sidecar)?;
    json.push('\n');
    write(&dir.join("head.json"), json.as_bytes())
}

pub fn load_head(dir: &Path) -> Result<(HeadParams, HeadSidecar), HeadIoError> {
    let sidecar: HeadSidecar = serde_json::from_slice(&read(&dir.join("head.json"))?)?;
    let (d, h) = (sidecar.dim, sidecar.hidden);
    let w1 = load_array(dir, "w1.npy", d, h)?;
    let b1 = load_array(dir, "b1.npy", 1, h)?;
    let w2 = load_array(dir, "w2.npy", h, 1)?;
    let b2 = load_array(dir, "b2.npy", 1, 1)?;
    let params = HeadParams {
        dim: d,
        hidden: h,
        leaky_slope: sidecar.leaky_slope,
        dropout_p: sidecar.dropout_p,
        l2_normalize: sidecar.l2_normalize,
        w1,
        b1,
        w2,
        b2: b2[0],
    };
    if !params.is_finite() {
        return Err(HeadIoError::NonFinite);
    }
    Ok((params, sidecar))
}

fn load_array(
    dir: &Path,
    file: &'static str,
    want_rows: usize,
    want_cols: usize,
) -> Result<Vec<f64>, HeadIoError> {
    let path = dir.join(file);
    let m = parse_npy(&read(&path)?).map_err(|source| HeadIoError::Array {
        path: path.display().to_string(),
        source,
    })?;
    if (m.rows(), m.dim()) != (want_rows, want_cols) {
        return Err(HeadIoError::Shape {
            file,
            rows: m.rows(),
            cols: m.dim(),
            want_rows,
            want_cols,
        });
    }
    Ok(m.values().to_vec())
}

fn read(path: &Path) -> Result<Vec<u8>, HeadIoError> {
    fs::read(path).map_err(|source| HeadIoError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), HeadIoError> {
    fs::write(path, bytes).map_err(|source| HeadIoError::Io {
        path: path.display().to_string(),
        source,
    })
}
