use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::prefix::PrefixConfig;
use super::sweep::SweepConfig;
use crate::attack::{AttackConfig, Norm};
use crate::error::{Error, Result};
use crate::models::{DifferentiableModel, ModelRegistry};
use crate::targets::TargetCorpus;

/// A named model built by a registry adapter from `config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    #[serde(default = "toy_ctc")]
    pub adapter: String,
    #[serde(default)]
    pub config: toml::Table,
}

fn toy_ctc() -> String {
    "toy-ctc".into()
}

impl ModelSpec {
    pub fn new(name: &str, adapter: &str, seed: u64) -> Self {
        let mut config = toml::Table::new();
        config.insert("seed".into(), toml::Value::Integer(seed as i64));
        Self { name: name.into(), adapter: adapter.into(), config }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Number of synthetic utterances to attack.
    pub samples: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub seed: u64,
    /// Target sentences, one per line; the built-in list when unset.
    pub corpus: Option<PathBuf>,
    /// Existing dataset directory read by `evaluate`, `export` and `import`.
    pub dataset: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { samples: 20, min_words: 5, max_words: 12, seed: 99, corpus: None, dataset: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub proxy: String,
    pub private: String,
    pub ks: Vec<usize>,
    pub n_inputs: usize,
    pub repeats: usize,
    /// Size of the image pool inputs are drawn from.
    pub images: usize,
    pub steps_per_k: usize,
    pub attack: AttackConfig,
}

impl Default for SweepSection {
    fn default() -> Self {
        let base = SweepConfig::default();
        Self {
            proxy: "cls-1".into(),
            private: "cls-2".into(),
            ks: (1..=10).collect(),
            n_inputs: 256,
            repeats: 3,
            images: 1000,
            steps_per_k: base.steps_per_k,
            attack: base.attack,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrefixSection {
    pub models: Vec<String>,
    pub word: String,
    /// Utterances generated before dropping those already starting with
    /// `word`.
    pub samples: usize,
    pub min_words: usize,
    pub max_words: usize,
    /// Per-utterance SNR budget in dB; 0 disables it in favour of
    /// `attack.l2_radius`.
    pub target_snr: f64,
    pub attack: AttackConfig,
}

impl Default for PrefixSection {
    fn default() -> Self {
        let base = PrefixConfig::default();
        Self {
            models: vec!["ctc-1".into(), "ctc-2".into(), "ctc-3".into()],
            word: base.word,
            samples: 100,
            min_words: 2,
            max_words: 8,
            target_snr: base.target_snr.unwrap_or(0.0),
            attack: base.attack,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; replaces the seed of every attack section.
    pub seed: u64,
    /// Worker threads; 0 uses one per core.
    pub workers: usize,
    pub models: Vec<ModelSpec>,
    pub proxies: Vec<String>,
    /// Early-stopping model; an empty string disables it.
    pub validation: Option<String>,
    /// Models that transcribe examples in `evaluate` and `matrix`.
    pub evaluate: Vec<String>,
    pub attack: AttackConfig,
    pub data: DataConfig,
    pub sweep: SweepSection,
    pub prefix: PrefixSection,
    pub formats: Vec<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 0,
            models: vec![
                ModelSpec::new("ctc-1", "toy-ctc", 1),
                ModelSpec::new("ctc-2", "toy-ctc", 2),
                ModelSpec::new("ctc-3", "toy-ctc", 3),
                ModelSpec::new("cls-1", "toy-classifier", 1),
                ModelSpec::new("cls-2", "toy-classifier", 2),
            ],
            proxies: vec!["ctc-1".into()],
            validation: Some("ctc-2".into()),
            evaluate: vec!["ctc-1".into(), "ctc-2".into(), "ctc-3".into()],
            attack: AttackConfig::default(),
            data: DataConfig::default(),
            sweep: SweepSection::default(),
            prefix: PrefixSection::default(),
            formats: vec!["csv".into(), "md".into(), "png".into()],
        }
    }
}

/// Sets `dotted.key` in `table` to `raw`, read as a TOML value when it
/// parses as one and as a string otherwise.
pub fn apply_override(table: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_owned()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key `{key}`")));
    }
    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        let entry = node.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry.as_table_mut().ok_or_else(|| Error::Config(format!("`{part}` in `{key}` is not a table")))?;
    }
    node.insert(parts[parts.len() - 1].to_owned(), value);
    Ok(())
}

fn merge(base: &mut toml::Table, layer: toml::Table) {
    for (key, value) in layer {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(l)) => merge(b, l),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

impl ExperimentConfig {
    /// Layers the file at `path` (if any), then `key=value` overrides and an
    /// optional seed over the defaults, and validates the result. Tables
    /// merge key by key; arrays and scalars replace. Unknown keys are
    /// rejected.
    pub fn resolve(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(&Self::default().to_toml()?).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(p) = path {
            let text =
                std::fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            let file =
                toml::from_str::<toml::Table>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            merge(&mut table, file);
        }
        for item in overrides {
            let (key, value) =
                item.split_once('=').ok_or_else(|| Error::Config(format!("override `{item}` is not key=value")))?;
            apply_override(&mut table, key.trim(), value.trim())?;
        }
        if let Some(seed) = seed {
            table.insert("seed".into(), toml::Value::Integer(seed as i64));
        }
        let mut config: ExperimentConfig =
            table.try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_owned()))?;
        if config.validation.as_deref() == Some("") {
            config.validation = None;
        }
        config.attack.seed = config.seed;
        config.sweep.attack.seed = config.seed;
        config.prefix.attack.seed = config.seed;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, m) in self.models.iter().enumerate() {
            if self.models[..i].iter().any(|o| o.name == m.name) {
                return Err(Error::Config(format!("model `{}` is defined twice", m.name)));
            }
        }
        let referenced = self
            .proxies
            .iter()
            .chain(&self.validation)
            .chain(&self.evaluate)
            .chain([&self.sweep.proxy, &self.sweep.private])
            .chain(&self.prefix.models);
        for name in referenced {
            self.spec(name)?;
        }
        self.attack.validate()?;
        self.sweep.attack.validate()?;
        self.prefix.attack.validate()?;
        if self.attack.norm != Norm::Linf {
            return Err(Error::Config("attack.norm must be linf".into()));
        }
        if self.prefix.attack.norm != Norm::L2 {
            return Err(Error::Config("prefix.attack.norm must be l2".into()));
        }
        if self.data.min_words == 0 || self.data.min_words > self.data.max_words {
            return Err(Error::Config("data.min_words must be in 1..=data.max_words".into()));
        }
        for f in &self.formats {
            super::report::ReportFormat::parse(f)?;
        }
        Ok(())
    }

    pub fn spec(&self, name: &str) -> Result<&ModelSpec> {
        self.models
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| Error::Config(format!("model `{name}` is not defined under [[models]]")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Builds the named models; the spec name always wins over any name in
    /// the adapter config.
    pub fn load_models(&self, registry: &ModelRegistry, names: &[String]) -> Result<Vec<Box<dyn DifferentiableModel>>> {
        names
            .iter()
            .map(|name| {
                let spec = self.spec(name)?;
                let mut config = serde_json::to_value(&spec.config)?;
                config["name"] = serde_json::Value::String(spec.name.clone());
                log::info!("loading model `{}` ({})", spec.name, spec.adapter);
                registry.load_model(&spec.adapter, &config)
            })
            .collect()
    }

    pub fn corpus(&self) -> Result<TargetCorpus> {
        match &self.data.corpus {
            Some(path) => TargetCorpus::from_file(path),
            None => Ok(TargetCorpus::librispeech_candidates()),
        }
    }

    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig { attack: self.sweep.attack.clone(), steps_per_k: self.sweep.steps_per_k, seed: self.seed }
    }

    pub fn prefix_config(&self) -> PrefixConfig {
        PrefixConfig {
            word: self.prefix.word.clone(),
            attack: self.prefix.attack.clone(),
            target_snr: (self.prefix.target_snr > 0.0).then_some(self.prefix.target_snr),
        }
    }
}
