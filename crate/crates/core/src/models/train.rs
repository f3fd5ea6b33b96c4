//! Minibatch Adam training for the toy models, and seeded model pools.

use ndarray::ArrayD;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DifferentiableModel, Mode, ToyClassifier, ToyClassifierConfig, ToyCtcConfig, ToyCtcModel, Trainable};
use crate::error::{Error, Result};
use crate::targets::AttackTarget;

/// An `(input, target)` training pair.
pub type Example = (Vec<f64>, AttackTarget);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    /// Decoupled (AdamW) weight decay.
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 30, batch_size: 16, learning_rate: 3e-3, grad_clip: 5.0, weight_decay: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Architecture {
    ToyCtc(ToyCtcConfig),
    ToyClassifier(ToyClassifierConfig),
}

struct Adam {
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
    step: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new<M: Trainable>(model: &M) -> Self {
        let zeros: Vec<ArrayD<f64>> = model.params().iter().map(|p| ArrayD::zeros(p.raw_dim())).collect();
        Self { m: zeros.clone(), v: zeros, step: 0 }
    }

    fn update<M: Trainable>(&mut self, model: &mut M, grads: &[ArrayD<f64>], lr: f64, decay: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        for (((mut p, g), m), v) in model.params_mut().into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            m.zip_mut_with(g, |m, &g| *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g);
            v.zip_mut_with(g, |v, &g| *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g);
            ndarray::Zip::from(&mut p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                *p -= lr * ((m / c1) / ((v / c2).sqrt() + Self::EPS) + decay * *p);
            });
        }
    }
}

/// Trains `model` in stochastic mode and returns the mean loss per epoch.
/// The shuffle order and dropout masks derive from `seed`.
pub fn train_model<M: Trainable>(model: &mut M, data: &[Example], config: &TrainConfig, seed: u64) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    model.set_mode(Mode::Stochastic);
    model.reseed(seed.wrapping_add(1));
    let mut adam = Adam::new(model);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size.max(1)) {
            let mut sum: Option<Vec<ArrayD<f64>>> = None;
            for &i in batch {
                let (input, target) = &data[i];
                let (loss, grads) = model.param_gradient(input, target)?;
                if !loss.is_finite() {
                    model.set_mode(Mode::Deterministic);
                    return Err(Error::Divergence { seed, epoch });
                }
                epoch_loss += loss;
                match &mut sum {
                    None => sum = Some(grads),
                    Some(acc) => acc.iter_mut().zip(&grads).for_each(|(a, g)| *a += g),
                }
            }
            let mut grads = sum.expect("batch is non-empty");
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| *g *= scale);
            if config.grad_clip > 0.0 {
                let norm = grads.iter().map(|g| g.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
                if norm > config.grad_clip {
                    let shrink = config.grad_clip / norm;
                    grads.iter_mut().for_each(|g| *g *= shrink);
                }
            }
            adam.update(model, &grads, config.learning_rate, config.weight_decay);
        }
        let mean = epoch_loss / data.len() as f64;
        log::debug!("{}: epoch {epoch} loss {mean:.4}", model.name());
        history.push(mean);
    }
    model.set_mode(Mode::Deterministic);
    Ok(history)
}

/// One model per seed, identical except for initialization, shuffle order
/// and dropout draws. Seeds train in parallel; results are seed-ordered.
pub fn train_pool<M, F>(build: F, data: &[Example], seeds: &[u64], config: &TrainConfig) -> Result<Vec<M>>
where
    M: Trainable,
    F: Fn(u64) -> M + Sync,
{
    seeds
        .par_iter()
        .map(|&seed| {
            let mut model = build(seed);
            train_model(&mut model, data, config, seed)?;
            Ok(model)
        })
        .collect()
}

pub fn train_toy_pool(
    architecture: &Architecture,
    data: &[Example],
    seeds: &[u64],
    config: &TrainConfig,
) -> Result<Vec<Box<dyn DifferentiableModel>>> {
    let boxed = match architecture {
        Architecture::ToyCtc(c) => {
            train_pool(|s| ToyCtcModel::new(format!("toy-ctc-{s}"), c.clone(), s), data, seeds, config)?
                .into_iter()
                .map(|m| Box::new(m) as Box<dyn DifferentiableModel>)
                .collect()
        }
        Architecture::ToyClassifier(c) => {
            train_pool(|s| ToyClassifier::new(format!("toy-classifier-{s}"), c.clone(), s), data, seeds, config)?
                .into_iter()
                .map(|m| Box::new(m) as Box<dyn DifferentiableModel>)
                .collect()
        }
    };
    Ok(boxed)
}
