use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::worker_pool;
use crate::attack::{pgd_attack, AttackConfig, Norm};
use crate::error::{Error, Result};
use crate::metrics::topk_match_accuracy;
use crate::models::{DifferentiableModel, ModelOutput};
use crate::targets::{sample_topk_target, AttackTarget};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// `iterations` is ignored; each k runs `k * steps_per_k` steps.
    pub attack: AttackConfig,
    pub steps_per_k: usize,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            attack: AttackConfig {
                norm: Norm::L2,
                l2_radius: 0.5,
                learning_rate: 0.1,
                stochastic_proxy: false,
                ..AttackConfig::default()
            },
            steps_per_k: 1000,
            seed: 0,
        }
    }
}

/// Top-k success against the proxy and the private model, per k, averaged
/// over inputs and repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionCurve {
    pub ks: Vec<usize>,
    pub white_box: Vec<f64>,
    pub transfer: Vec<f64>,
    pub repeats: usize,
    pub n_inputs: usize,
    pub num_classes: usize,
}

fn scores(model: &mut dyn DifferentiableModel, input: &[f64]) -> Result<Vec<f64>> {
    match model.forward(input).map_err(|e| e.in_model(model.name()))? {
        ModelOutput::Logits(l) => Ok(l),
        ModelOutput::Frames(_) => Err(Error::InvalidInput(format!("model `{}` is not a classifier", model.name()))),
    }
}

struct Job {
    k: usize,
    image: usize,
    target: AttackTarget,
    seed: u64,
}

/// For each k and repeat, draws `n_inputs` distinct images and a fresh
/// top-k target per image, attacks the proxy with the KL objective and
/// scores the result on both models.
#[allow(clippy::too_many_arguments)]
pub fn run_precision_sweep(
    proxy: &dyn DifferentiableModel,
    private: &dyn DifferentiableModel,
    images: &[Vec<f64>],
    ks: &[usize],
    n_inputs: usize,
    repeats: usize,
    config: &SweepConfig,
    workers: usize,
) -> Result<PrecisionCurve> {
    if images.is_empty() || n_inputs == 0 || n_inputs > images.len() {
        return Err(Error::InvalidInput(format!("cannot draw {n_inputs} inputs from {} images", images.len())));
    }
    if repeats == 0 {
        return Err(Error::Config("repeats must be at least 1".into()));
    }
    if config.steps_per_k == 0 {
        return Err(Error::Config("steps_per_k must be at least 1".into()));
    }
    config.attack.validate()?;
    let num_classes = scores(proxy.boxed_clone().as_mut(), &images[0])?.len();
    if ks.is_empty() {
        return Err(Error::Config("no k values given".into()));
    }
    for (i, &k) in ks.iter().enumerate() {
        if k == 0 || k > num_classes {
            return Err(Error::Config(format!("k = {k} outside 1..={num_classes}")));
        }
        if i > 0 && ks[i - 1] >= k {
            return Err(Error::Config("k values must be strictly increasing".into()));
        }
    }

    let mut jobs = Vec::new();
    for &k in ks {
        for repeat in 0..repeats {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream((k * repeats + repeat) as u64);
            for image in sample(&mut rng, images.len(), n_inputs) {
                let target = sample_topk_target(num_classes, k, &mut rng)?;
                let seed = config.attack.seed.wrapping_add(jobs.len() as u64);
                jobs.push(Job { k, image, target, seed });
            }
        }
    }

    let results: Vec<Result<(f64, f64)>> = worker_pool(workers)?.install(|| {
        jobs.par_iter()
            .map(|job| {
                let mut attacked = proxy.boxed_clone();
                let objective = attacked.objective_for(&job.target)?;
                let attack =
                    AttackConfig { iterations: job.k * config.steps_per_k, seed: job.seed, ..config.attack.clone() };
                let input = &images[job.image];
                let result = pgd_attack(attacked.as_mut(), input, objective.as_ref(), &attack)?;
                let adv = result.delta.apply(input);
                let (target, _) = job.target.distribution().expect("top-k targets are distributions");
                let white = topk_match_accuracy(&scores(attacked.as_mut(), &adv)?, target, job.k)?;
                let transfer = topk_match_accuracy(&scores(private.boxed_clone().as_mut(), &adv)?, target, job.k)?;
                Ok((white, transfer))
            })
            .collect()
    });

    let per_k = repeats * n_inputs;
    let mut white_box = vec![0.0; ks.len()];
    let mut transfer = vec![0.0; ks.len()];
    for (i, r) in results.into_iter().enumerate() {
        let (w, t) = r?;
        white_box[i / per_k] += w / per_k as f64;
        transfer[i / per_k] += t / per_k as f64;
    }
    Ok(PrecisionCurve { ks: ks.to_vec(), white_box, transfer, repeats, n_inputs, num_classes })
}
