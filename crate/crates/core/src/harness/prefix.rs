use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::worker_pool;
use crate::attack::{pgd_attack, AttackConfig, Norm};
use crate::audio::AudioSample;
use crate::error::{Error, Result};
use crate::metrics::l2_radius_for_target_snr;
use crate::models::DifferentiableModel;
use crate::targets::{filter_prefix_eligible, make_prefix_target, prefix_success};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrefixConfig {
    pub word: String,
    pub attack: AttackConfig,
    /// Per-utterance L2 budget at this SNR; when unset `attack.l2_radius`
    /// applies to every utterance.
    pub target_snr: Option<f64>,
}

impl Default for PrefixConfig {
    fn default() -> Self {
        Self {
            word: "BUT".into(),
            attack: AttackConfig { norm: Norm::L2, learning_rate: 0.03, iterations: 500, ..AttackConfig::default() },
            target_snr: Some(30.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffDiagonalStats {
    pub mean: f64,
    /// Sample standard deviation (divides by n - 1); 0 for a single cell.
    pub sd: f64,
}

/// Mean and sample standard deviation of the cells with row != column.
/// `None` when there are none.
pub fn off_diagonal_stats(matrix: &[Vec<f64>]) -> Option<OffDiagonalStats> {
    let cells: Vec<f64> = matrix
        .iter()
        .enumerate()
        .flat_map(|(i, row)| row.iter().enumerate().filter(move |(j, _)| *j != i).map(|(_, v)| *v))
        .collect();
    if cells.is_empty() {
        return None;
    }
    let n = cells.len() as f64;
    let mean = cells.iter().sum::<f64>() / n;
    let sd =
        if cells.len() > 1 { (cells.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    Some(OffDiagonalStats { mean, sd })
}

/// Prefix success of every proxy's examples (rows) on every model
/// (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixMatrix {
    pub word: String,
    pub models: Vec<String>,
    pub samples: usize,
    pub success: Vec<Vec<f64>>,
    /// How often each model already puts the word first on clean audio.
    pub clean_rate: Vec<f64>,
    pub off_diagonal: Option<OffDiagonalStats>,
}

/// Each pool member serves once as the proxy for an L2 attack prepending
/// `config.word` to every eligible sample; all members then transcribe.
pub fn run_prefix_experiment(
    pool: &[Box<dyn DifferentiableModel>],
    samples: &[AudioSample],
    config: &PrefixConfig,
    workers: usize,
) -> Result<PrefixMatrix> {
    if pool.is_empty() {
        return Err(Error::InvalidInput("model pool is empty".into()));
    }
    if config.attack.norm != Norm::L2 {
        return Err(Error::Config("the prefix experiment uses the L2 norm".into()));
    }
    config.attack.validate()?;
    let eligible = filter_prefix_eligible(samples, &config.word);
    if eligible.is_empty() {
        return Err(Error::InvalidInput(format!("no sample is eligible for prefix `{}`", config.word)));
    }
    let targets =
        eligible.iter().map(|s| make_prefix_target(&s.transcript, &config.word)).collect::<Result<Vec<_>>>()?;
    let n = eligible.len() as f64;
    let threads = worker_pool(workers)?;

    let clean_rate = threads.install(|| {
        pool.par_iter()
            .map(|m| {
                let mut m = m.boxed_clone();
                let mut hits = 0usize;
                for s in &eligible {
                    hits += usize::from(prefix_success(&m.predict(&s.waveform)?.as_text(), &config.word));
                }
                Ok(hits as f64 / n)
            })
            .collect::<Result<Vec<f64>>>()
    })?;

    let jobs: Vec<(usize, usize)> = (0..pool.len()).flat_map(|p| (0..eligible.len()).map(move |s| (p, s))).collect();
    let hits = threads.install(|| {
        jobs.par_iter()
            .map(|&(p, s)| {
                let sample = eligible[s];
                let radius = match config.target_snr {
                    Some(snr) => l2_radius_for_target_snr(&sample.waveform, snr)?,
                    None => config.attack.l2_radius,
                };
                let attack = AttackConfig {
                    l2_radius: radius,
                    seed: config.attack.seed.wrapping_add((p * eligible.len() + s) as u64),
                    ..config.attack.clone()
                };
                let mut proxy = pool[p].boxed_clone();
                let objective = proxy.objective_for(&targets[s]).map_err(|e| e.in_model(proxy.name()))?;
                let result = pgd_attack(proxy.as_mut(), &sample.waveform, objective.as_ref(), &attack)?;
                let adv = result.delta.apply(&sample.waveform);
                pool.iter()
                    .map(|m| {
                        let heard = m.boxed_clone().predict(&adv)?.as_text();
                        Ok(prefix_success(&heard, &config.word))
                    })
                    .collect::<Result<Vec<bool>>>()
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut counts = vec![vec![0usize; pool.len()]; pool.len()];
    for (&(p, _), row) in jobs.iter().zip(&hits) {
        for (m, &hit) in row.iter().enumerate() {
            counts[p][m] += usize::from(hit);
        }
    }
    let success: Vec<Vec<f64>> = counts.iter().map(|row| row.iter().map(|&c| c as f64 / n).collect()).collect();
    Ok(PrefixMatrix {
        word: config.word.clone(),
        models: pool.iter().map(|m| m.name().to_owned()).collect(),
        samples: eligible.len(),
        off_diagonal: off_diagonal_stats(&success),
        success,
        clean_rate,
    })
}
