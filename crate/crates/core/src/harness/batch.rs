use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::worker_pool;
use crate::attack::{cw_attack, AttackConfig};
use crate::audio::AudioSample;
use crate::error::{Error, Result};
use crate::models::DifferentiableModel;
use crate::targets::{assign_length_matched_targets, AttackTarget, TargetCorpus};

/// One generated example: the clean utterance, the perturbation and where
/// it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialExample {
    pub id: String,
    pub clean: AudioSample,
    pub delta: Vec<f64>,
    pub target: AttackTarget,
    pub proxies: Vec<String>,
    pub validation: Option<String>,
    /// SNR of `delta` against the clean waveform at generation time.
    pub achieved_snr: f64,
    pub best_iteration: usize,
    pub config_fingerprint: String,
}

impl AdversarialExample {
    pub fn adversarial(&self) -> Vec<f64> {
        self.clean.waveform.iter().zip(&self.delta).map(|(x, d)| x + d).collect()
    }

    /// Name of the proxy ensemble, e.g. `a+b`.
    pub fn proxy_label(&self) -> String {
        self.proxies.join("+")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub id: String,
    pub proxy: Vec<(usize, f64)>,
    pub validation: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFailure {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchOutcome {
    pub examples: Vec<AdversarialExample>,
    pub traces: Vec<LossTrace>,
    pub failures: Vec<SampleFailure>,
}

/// Hex SHA-256 of the canonical JSON form of everything that shapes an
/// attack run.
pub fn config_fingerprint(config: &AttackConfig, proxies: &[String], validation: Option<&str>) -> String {
    let record = serde_json::json!({
        "attack": config,
        "proxies": proxies,
        "validation": validation,
    });
    hex::encode(Sha256::digest(record.to_string().as_bytes()))
}

/// Attacks every sample against the proxy ensemble with a length-matched
/// target from `corpus`. Sample `i` runs with seed `config.seed + i`, so
/// results do not depend on `workers`. A failing sample is reported in
/// [`BatchOutcome::failures`] and the batch carries on.
pub fn run_attack_batch(
    samples: &[AudioSample],
    proxies: &[Box<dyn DifferentiableModel>],
    validation: Option<&dyn DifferentiableModel>,
    corpus: &TargetCorpus,
    config: &AttackConfig,
    workers: usize,
) -> Result<BatchOutcome> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("no samples to attack".into()));
    }
    if proxies.is_empty() {
        return Err(Error::Config("at least one proxy is required".into()));
    }
    config.validate()?;
    let names: Vec<String> = proxies.iter().map(|p| p.name().to_owned()).collect();
    for (i, name) in names.iter().enumerate() {
        if names[..i].contains(name) {
            return Err(Error::Config(format!("proxy `{name}` is listed twice")));
        }
    }
    if let Some(v) = validation {
        if names.iter().any(|n| n == v.name()) {
            return Err(Error::Config(format!("validation model `{}` is also a proxy", v.name())));
        }
    }
    let validation_name = validation.map(|v| v.name().to_owned());
    let fingerprint = config_fingerprint(config, &names, validation_name.as_deref());
    let targets = assign_length_matched_targets(samples, corpus);

    let results: Vec<Result<(AdversarialExample, LossTrace)>> = worker_pool(workers)?.install(|| {
        samples
            .par_iter()
            .zip(&targets)
            .enumerate()
            .map(|(i, (sample, target))| {
                let mut ensemble: Vec<Box<dyn DifferentiableModel>> = proxies.iter().map(|p| p.boxed_clone()).collect();
                let mut validator = validation.map(|v| v.boxed_clone());
                let run_config = AttackConfig { seed: config.seed.wrapping_add(i as u64), ..config.clone() };
                let result = cw_attack(
                    &mut ensemble,
                    validator.as_mut().map(|v| &mut **v as &mut dyn DifferentiableModel),
                    sample,
                    target,
                    &run_config,
                )?;
                let trace = LossTrace {
                    id: sample.id.clone(),
                    proxy: result.proxy_loss_trace,
                    validation: result.validation_loss_trace,
                };
                let example = AdversarialExample {
                    id: sample.id.clone(),
                    clean: sample.clone(),
                    delta: result.delta.delta,
                    target: target.clone(),
                    proxies: names.clone(),
                    validation: validation_name.clone(),
                    achieved_snr: result.achieved_snr,
                    best_iteration: result.best_iteration,
                    config_fingerprint: fingerprint.clone(),
                };
                Ok((example, trace))
            })
            .collect()
    });

    let mut outcome = BatchOutcome::default();
    for (sample, result) in samples.iter().zip(results) {
        match result {
            Ok((example, trace)) => {
                outcome.examples.push(example);
                outcome.traces.push(trace);
            }
            Err(e) => {
                log::warn!("attack on `{}` failed: {e}", sample.id);
                outcome.failures.push(SampleFailure { id: sample.id.clone(), error: e.to_string() });
            }
        }
    }
    Ok(outcome)
}
