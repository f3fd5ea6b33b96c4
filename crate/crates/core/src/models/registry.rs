//! Name → constructor registry for model adapters.
//!
//! External ASR backends plug in by registering a factory that turns a JSON
//! configuration record into a [`DifferentiableModel`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::checkpoint::Checkpoint;
use super::train::{train_model, TrainConfig};
use super::{DifferentiableModel, ToyClassifier, ToyClassifierConfig, ToyCtcConfig, ToyCtcModel};
use crate::error::{Error, Result};
use crate::synth::{ImageTask, SpeechTask};

/// Environment variable naming the directory relative checkpoint paths
/// resolve against.
pub const MODEL_DIR_ENV: &str = "TRANSFER_ATTACK_MODEL_DIR";

pub type ModelFactory = Box<dyn Fn(&serde_json::Value) -> Result<Box<dyn DifferentiableModel>> + Send + Sync>;

#[derive(Default)]
pub struct ModelRegistry {
    factories: BTreeMap<String, ModelFactory>,
}

impl std::fmt::Debug for ModelRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelRegistry").field("adapters", &self.names()).finish()
    }
}

impl ModelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry preloaded with the `toy-ctc` and `toy-classifier` adapters.
    pub fn with_toy_adapters() -> Self {
        let mut registry = Self::new();
        registry.register_adapter("toy-ctc", Box::new(build_toy_ctc)).expect("fresh registry");
        registry.register_adapter("toy-classifier", Box::new(build_toy_classifier)).expect("fresh registry");
        registry
    }

    pub fn register_adapter(&mut self, name: impl Into<String>, factory: ModelFactory) -> Result<()> {
        let name = name.into();
        if self.factories.contains_key(&name) {
            return Err(Error::DuplicateModel(name));
        }
        self.factories.insert(name, factory);
        Ok(())
    }

    pub fn load_model(&self, name: &str, config: &serde_json::Value) -> Result<Box<dyn DifferentiableModel>> {
        let factory = self
            .factories
            .get(name)
            .ok_or_else(|| Error::UnknownModel { name: name.to_owned(), known: self.names() })?;
        factory(config).map_err(|e| e.in_model(name))
    }

    pub fn names(&self) -> Vec<String> {
        self.factories.keys().cloned().collect()
    }
}

/// Loads from the default toy registry.
pub fn load_model(name: &str, config: &serde_json::Value) -> Result<Box<dyn DifferentiableModel>> {
    ModelRegistry::with_toy_adapters().load_model(name, config)
}

pub fn resolve_model_path(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os(MODEL_DIR_ENV) {
        Some(dir) => Path::new(&dir).join(path),
        None => path.to_path_buf(),
    }
}

/// Configuration record understood by the toy adapters. Either
/// `checkpoint` is given, or a model is initialized from `seed` and (unless
/// `train = false`) fit on the standard synthetic task.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ToyAdapterConfig<A> {
    name: Option<String>,
    lineage: Option<String>,
    checkpoint: Option<PathBuf>,
    #[serde(default)]
    seed: u64,
    #[serde(default = "yes")]
    train: bool,
    #[serde(default = "Option::default")]
    architecture: Option<A>,
    #[serde(default)]
    training: Option<TrainConfig>,
}

fn yes() -> bool {
    true
}

fn parse<A: for<'de> Deserialize<'de>>(config: &serde_json::Value) -> Result<ToyAdapterConfig<A>> {
    let config = if config.is_null() { serde_json::Value::Object(Default::default()) } else { config.clone() };
    serde_json::from_value(config).map_err(|e| Error::Config(e.to_string()))
}

/// Trains through a checkpoint cache under `$TRANSFER_ATTACK_MODEL_DIR/cache`
/// keyed by a hash of everything that determines the trained weights. Without
/// the variable every call trains.
fn cached<M>(
    key: &serde_json::Value,
    load: impl FnOnce(Checkpoint) -> Result<M>,
    save: impl FnOnce(&M) -> Checkpoint,
    train: impl FnOnce() -> Result<M>,
) -> Result<M> {
    let Some(dir) = std::env::var_os(MODEL_DIR_ENV) else {
        return train();
    };
    let digest = hex::encode(Sha256::digest(key.to_string().as_bytes()));
    let path = Path::new(&dir).join("cache").join(format!("{}.json", &digest[..16]));
    if path.exists() {
        log::debug!("loading cached model {}", path.display());
        return load(Checkpoint::load(&path)?);
    }
    let model = train()?;
    let parent = path.parent().expect("cache file has a parent");
    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let partial = path.with_extension(format!("tmp{}", std::process::id()));
    save(&model).save(&partial)?;
    std::fs::rename(&partial, &path).map_err(|e| Error::io(&path, e))?;
    Ok(model)
}

fn build_toy_ctc(config: &serde_json::Value) -> Result<Box<dyn DifferentiableModel>> {
    let cfg: ToyAdapterConfig<ToyCtcConfig> = parse(config)?;
    let mut model = match &cfg.checkpoint {
        Some(path) => Checkpoint::load(&resolve_model_path(path))?.into_ctc()?,
        None => {
            let task = SpeechTask::standard();
            let arch = cfg.architecture.clone().unwrap_or_else(|| task.model.clone());
            let mut model = ToyCtcModel::new(format!("toy-ctc-{}", cfg.seed), arch.clone(), cfg.seed);
            if cfg.train {
                let training = cfg.training.clone().unwrap_or_else(|| task.training.clone());
                let key = serde_json::json!({"adapter": "toy-ctc", "seed": cfg.seed, "architecture": arch, "training": training, "task": task});
                model = cached(
                    &key,
                    |c| c.into_ctc(),
                    Checkpoint::from_ctc,
                    || {
                        train_model(&mut model, &task.training_set(), &training, cfg.seed)?;
                        Ok(model)
                    },
                )?;
            }
            model
        }
    };
    if let Some(name) = cfg.name {
        model = model.with_name(name);
    }
    if cfg.lineage.is_some() {
        model = model.with_lineage(cfg.lineage);
    }
    Ok(Box::new(model))
}

fn build_toy_classifier(config: &serde_json::Value) -> Result<Box<dyn DifferentiableModel>> {
    let cfg: ToyAdapterConfig<ToyClassifierConfig> = parse(config)?;
    let mut model = match &cfg.checkpoint {
        Some(path) => Checkpoint::load(&resolve_model_path(path))?.into_classifier()?,
        None => {
            let task = ImageTask::standard();
            let arch = cfg.architecture.clone().unwrap_or_else(|| task.model.clone());
            let mut model = ToyClassifier::new(format!("toy-classifier-{}", cfg.seed), arch.clone(), cfg.seed);
            if cfg.train {
                let training = cfg.training.clone().unwrap_or_else(|| task.training.clone());
                let key = serde_json::json!({"adapter": "toy-classifier", "seed": cfg.seed, "architecture": arch, "training": training, "task": task});
                model = cached(
                    &key,
                    |c| c.into_classifier(),
                    Checkpoint::from_classifier,
                    || {
                        train_model(&mut model, &task.training_set(), &training, cfg.seed)?;
                        Ok(model)
                    },
                )?;
            }
            model
        }
    };
    if let Some(name) = cfg.name {
        model = model.with_name(name);
    }
    if cfg.lineage.is_some() {
        model = model.with_lineage(cfg.lineage);
    }
    Ok(Box::new(model))
}
