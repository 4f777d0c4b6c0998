//! Two-file checkpoints: `<name>.json` metadata and `<name>.bin` weights
//! (`LSMW`, format version byte, little-endian f32 weights in declaration order).

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{forward, ModelSpec};
use super::tape::Tensor;
use super::train::{EpochRecord, TrainConfig};
use super::NnError;
use crate::reduce::Standardizer;
use crate::util::sha256_hex;

pub const MAGIC: &[u8; 4] = b"LSMW";
pub const FORMAT_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    /// Per-band input standardization fit on training samples.
    pub standardizer: Option<Standardizer>,
    /// Content hash of the PCA model applied before standardization, if any.
    pub pca_ref: Option<String>,
    pub train_config: TrainConfig,
    pub weights: Vec<f64>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u8,
    spec: ModelSpec,
    standardizer: Option<Standardizer>,
    pca_ref: Option<String>,
    train_config: TrainConfig,
    history: Vec<EpochRecord>,
    best_epoch: usize,
    weight_count: usize,
    weights_sha256: String,
}

fn paths(base: &Path) -> (PathBuf, PathBuf) {
    (base.with_extension("json"), base.with_extension("bin"))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> NnError + '_ {
    move |source| NnError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn encode_weights(weights: &[f64]) -> Vec<u8> {
    let mut bin = Vec::with_capacity(5 + 4 * weights.len());
    bin.extend_from_slice(MAGIC);
    bin.push(FORMAT_VERSION);
    for &w in weights {
        bin.extend_from_slice(&(w as f32).to_le_bytes());
    }
    bin
}

pub fn decode_weights(bin: &[u8], expected: usize) -> Result<Vec<f64>, NnError> {
    if bin.len() < 5 || &bin[..4] != MAGIC {
        return Err(NnError::Corrupt("bad magic bytes".into()));
    }
    if bin[4] != FORMAT_VERSION {
        return Err(NnError::Corrupt(format!("unsupported format version {}", bin[4])));
    }
    let body = &bin[5..];
    if body.len() % 4 != 0 || body.len() / 4 != expected {
        return Err(NnError::WeightCount {
            expected,
            actual: body.len() / 4,
        });
    }
    Ok(body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

impl Checkpoint {
    /// Writes `<base>.json` and `<base>.bin`; any extension on `base` is replaced.
    pub fn save(&self, base: impl AsRef<Path>) -> Result<(), NnError> {
        if self.weights.len() != self.spec.param_count() {
            return Err(NnError::WeightCount {
                expected: self.spec.param_count(),
                actual: self.weights.len(),
            });
        }
        let (json_path, bin_path) = paths(base.as_ref());
        let bin = encode_weights(&self.weights);
        let header = Header {
            format: "lsm-checkpoint".into(),
            version: FORMAT_VERSION,
            spec: self.spec.clone(),
            standardizer: self.standardizer.clone(),
            pca_ref: self.pca_ref.clone(),
            train_config: self.train_config.clone(),
            history: self.history.clone(),
            best_epoch: self.best_epoch,
            weight_count: self.weights.len(),
            weights_sha256: sha256_hex(&bin),
        };
        let json = serde_json::to_string_pretty(&header).expect("checkpoint header serializes");
        fs::write(&json_path, json).map_err(io_err(&json_path))?;
        fs::write(&bin_path, bin).map_err(io_err(&bin_path))?;
        Ok(())
    }

    pub fn load(base: impl AsRef<Path>) -> Result<Self, NnError> {
        let (json_path, bin_path) = paths(base.as_ref());
        let text = fs::read_to_string(&json_path).map_err(io_err(&json_path))?;
        let header: Header =
            serde_json::from_str(&text).map_err(|e| NnError::Corrupt(format!("{}: {e}", json_path.display())))?;
        let bin = fs::read(&bin_path).map_err(io_err(&bin_path))?;
        header.spec.validate()?;
        if header.weight_count != header.spec.param_count() {
            return Err(NnError::WeightCount {
                expected: header.spec.param_count(),
                actual: header.weight_count,
            });
        }
        let weights = decode_weights(&bin, header.weight_count)?;
        if sha256_hex(&bin) != header.weights_sha256 {
            return Err(NnError::Corrupt("weight file hash mismatch".into()));
        }
        Ok(Self {
            spec: header.spec,
            standardizer: header.standardizer,
            pca_ref: header.pca_ref,
            train_config: header.train_config,
            weights,
            history: header.history,
            best_epoch: header.best_epoch,
        })
    }

    pub fn predict(&self, input: &Tensor) -> Result<f64, NnError> {
        forward(&self.spec, &self.weights, input)
    }

    /// Probabilities for a batch; each entry is computed exactly as a single forward call.
    pub fn predict_batch(&self, inputs: &[Tensor]) -> Result<Vec<f64>, NnError> {
        predict_batch(&self.spec, &self.weights, inputs)
    }
}

pub fn predict_batch(spec: &ModelSpec, weights: &[f64], inputs: &[Tensor]) -> Result<Vec<f64>, NnError> {
    inputs
        .par_iter()
        .map(|x| forward(spec, weights, x))
        .collect()
}
