//! Self-describing JSON checkpoints.
//!
//! ```json
//! {
//!   "format": "transfer-attack-checkpoint/1",
//!   "architecture": { "kind": "toy-ctc", "frame_len": 128, ... },
//!   "name": "toy-ctc-1",
//!   "lineage": null,
//!   "params": { "w_in": { "shape": [32, 16], "data": [ ... ] }, ... }
//! }
//! ```
//!
//! Parameters are stored row-major as JSON numbers, which round-trip `f64`
//! exactly.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use super::train::Architecture;
use super::{DifferentiableModel, ToyClassifier, ToyCtcModel, Trainable};
use crate::error::{Error, Result};

pub const FORMAT: &str = "transfer-attack-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamArray {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub architecture: Architecture,
    pub name: String,
    pub lineage: Option<String>,
    pub params: BTreeMap<String, ParamArray>,
}

fn collect<M: Trainable>(model: &M) -> BTreeMap<String, ParamArray> {
    model
        .param_names()
        .into_iter()
        .zip(model.params())
        .map(|(name, p)| (name.to_owned(), ParamArray { shape: p.shape().to_vec(), data: p.iter().copied().collect() }))
        .collect()
}

impl Checkpoint {
    pub fn from_ctc(model: &ToyCtcModel) -> Self {
        Self {
            format: FORMAT.into(),
            architecture: Architecture::ToyCtc(model.config().clone()),
            name: model.name().into(),
            lineage: model.lineage().map(str::to_owned),
            params: collect(model),
        }
    }

    pub fn from_classifier(model: &ToyClassifier) -> Self {
        Self {
            format: FORMAT.into(),
            architecture: Architecture::ToyClassifier(model.config().clone()),
            name: model.name().into(),
            lineage: model.lineage().map(str::to_owned),
            params: collect(model),
        }
    }

    fn arrays(&self, names: &[&str]) -> Result<Vec<ArrayD<f64>>> {
        names
            .iter()
            .map(|name| {
                let p = self
                    .params
                    .get(*name)
                    .ok_or_else(|| Error::InvalidInput(format!("checkpoint lacks parameter `{name}`")))?;
                ArrayD::from_shape_vec(IxDyn(&p.shape), p.data.clone())
                    .map_err(|e| Error::InvalidInput(format!("parameter `{name}`: {e}")))
            })
            .collect()
    }

    pub fn into_ctc(self) -> Result<ToyCtcModel> {
        let Architecture::ToyCtc(config) = &self.architecture else {
            return Err(Error::InvalidInput("checkpoint is not a toy CTC model".into()));
        };
        let names = ToyCtcModel::new("", config.clone(), 0).param_names();
        let arrays = self.arrays(&names)?;
        ToyCtcModel::from_parts(self.name, self.lineage, config.clone(), arrays)
    }

    pub fn into_classifier(self) -> Result<ToyClassifier> {
        let Architecture::ToyClassifier(config) = &self.architecture else {
            return Err(Error::InvalidInput("checkpoint is not a toy classifier".into()));
        };
        let names = ToyClassifier::new("", config.clone(), 0).param_names();
        let arrays = self.arrays(&names)?;
        ToyClassifier::from_parts(self.name, self.lineage, config.clone(), arrays)
    }

    pub fn into_model(self) -> Result<Box<dyn DifferentiableModel>> {
        Ok(match self.architecture {
            Architecture::ToyCtc(_) => Box::new(self.into_ctc()?),
            Architecture::ToyClassifier(_) => Box::new(self.into_classifier()?),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let checkpoint: Checkpoint = serde_json::from_str(&text)?;
        if checkpoint.format != FORMAT {
            return Err(Error::InvalidInput(format!(
                "{}: unsupported checkpoint format `{}`",
                path.display(),
                checkpoint.format
            )));
        }
        Ok(checkpoint)
    }
}
