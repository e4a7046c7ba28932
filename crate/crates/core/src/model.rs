//! Trained models and their on-disk form.
//!
//! A model is a JSON document next to a feature-bank text file. The JSON
//! records the bank's file name and SHA-256 so that a model is never paired
//! with a different bank.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureBank, SparseVec};
use crate::optim::TrainConfig;
use crate::types::{Label, LabelAlphabet, TokenSequence};
use crate::vcrf;
use crate::weights::WeightVector;

pub const MODEL_FORMAT: &str = "vstruct-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Vcrf,
    #[serde(rename = "structboost")]
    StructBoost,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vcrf" => Ok(Self::Vcrf),
            "structboost" => Ok(Self::StructBoost),
            other => Err(Error::domain(format!("unknown model kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Vcrf => "vcrf",
            Self::StructBoost => "structboost",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub kind: ModelKind,
    pub config: TrainConfig,
    pub alphabet: LabelAlphabet,
    pub bank: FeatureBank,
    pub penalties: Vec<f64>,
    pub weights: WeightVector,
}

impl Model {
    pub fn markov_order(&self) -> usize {
        self.config.markov_order
    }

    pub fn predict(&self, x: &TokenSequence) -> Result<Vec<Label>> {
        vcrf::predict(&self.weights, x, &self.bank, self.alphabet.len(), self.markov_order())
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    kind: ModelKind,
    config: TrainConfig,
    alphabet: LabelAlphabet,
    bank_file: String,
    bank_sha256: String,
    dimension: usize,
    penalties: Vec<f64>,
    weights: SparseVec,
}

/// Where the bank of the model at `path` lives: same stem, `.bank` extension.
pub fn bank_path(path: &Path) -> PathBuf {
    path.with_extension("bank")
}

/// The JSON document that [`save_model`] writes.
pub fn model_json(model: &Model, bank_file: &str) -> Result<String> {
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        kind: model.kind,
        config: model.config.clone(),
        alphabet: model.alphabet.clone(),
        bank_file: bank_file.into(),
        bank_sha256: model.bank.content_hash(),
        dimension: model.weights.len(),
        penalties: model.penalties.clone(),
        weights: model.weights.to_sparse(),
    };
    let mut text = serde_json::to_string_pretty(&file)?;
    text.push('\n');
    Ok(text)
}

pub fn save_model(path: &Path, model: &Model) -> Result<()> {
    let bank = bank_path(path);
    let bank_file =
        bank.file_name().and_then(|n| n.to_str()).ok_or_else(|| Error::domain(format!("bad model path {}", path.display())))?.to_string();
    model.bank.write_to(&bank)?;
    std::fs::write(path, model_json(model, &bank_file)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<Model> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: not a model file: {e}", path.display())))?;
    if value.get("format").and_then(|v| v.as_str()) != Some(MODEL_FORMAT) {
        return Err(Error::Format(format!("{} is not a model file", path.display())));
    }
    match value.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(MODEL_VERSION) => {}
        other => return Err(Error::Format(format!("unsupported model version {other:?}, expected {MODEL_VERSION}"))),
    }
    let file: ModelFile = serde_json::from_value(value).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let bank_location = path.parent().unwrap_or(Path::new(".")).join(&file.bank_file);
    let bank = FeatureBank::read_from(&bank_location)?;
    if bank.content_hash() != file.bank_sha256 {
        return Err(Error::Format(format!("feature bank {} does not match the model's hash", bank_location.display())));
    }
    if bank.dimension() != file.dimension || file.penalties.len() != bank.num_families() {
        return Err(Error::Format("model dimension does not match its feature bank".into()));
    }
    let weights = WeightVector::from_sparse(file.dimension, &file.weights)?;
    Ok(Model { kind: file.kind, config: file.config, alphabet: file.alphabet, bank, penalties: file.penalties, weights })
}
