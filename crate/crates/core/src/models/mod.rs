//! The differentiable-model contract consumed by the attack engine, toy
//! reference models with exact gradients, and the adapter registry.

pub mod alphabet;
pub mod checkpoint;
pub mod ctc;
pub mod objective;
pub mod registry;
pub mod toy_classifier;
pub mod toy_ctc;
pub mod train;

use ndarray::{Array2, ArrayD, ArrayViewD, ArrayViewMutD};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::targets::AttackTarget;

pub use alphabet::{Alphabet, BLANK};
pub use objective::{CtcObjective, KlObjective, Objective};
pub use registry::{load_model, ModelRegistry};
pub use toy_classifier::{ToyClassifier, ToyClassifierConfig};
pub use toy_ctc::{ToyCtcConfig, ToyCtcModel};
pub use train::{train_toy_pool, Architecture, TrainConfig};

/// Whether stochastic regularization (dropout) is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Stochastic,
    Deterministic,
}

/// Raw model scores.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelOutput {
    /// Per-frame log probabilities, `[frames, vocab]`.
    Frames(Array2<f64>),
    /// Unnormalized class scores.
    Logits(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Prediction {
    Transcript(String),
    Class(usize),
}

impl Prediction {
    /// Text used by transcript metrics; a class renders as its index.
    pub fn as_text(&self) -> String {
        match self {
            Prediction::Transcript(t) => t.clone(),
            Prediction::Class(c) => c.to_string(),
        }
    }
}

/// A model whose loss can be differentiated with respect to its input.
///
/// In deterministic mode `forward` is a pure function of the input. In
/// stochastic mode each call draws fresh dropout masks from the model's own
/// generator, which [`DifferentiableModel::reseed`] resets.
pub trait DifferentiableModel: Send + Sync {
    fn name(&self) -> &str;

    /// Shared-pretraining tag; models with equal lineage are not counted as
    /// transfer targets of one another.
    fn lineage(&self) -> Option<&str> {
        None
    }

    fn mode(&self) -> Mode;

    fn set_mode(&mut self, mode: Mode);

    fn reseed(&mut self, seed: u64);

    fn forward(&mut self, input: &[f64]) -> Result<ModelOutput>;

    /// Value of `objective` at `forward(input)` and its gradient with respect
    /// to `input`, sharing one set of dropout masks.
    fn objective_gradient(&mut self, input: &[f64], objective: &dyn Objective) -> Result<(f64, Vec<f64>)>;

    /// The training loss this model uses for `target`.
    fn objective_for(&self, target: &AttackTarget) -> Result<Box<dyn Objective>>;

    /// Inference-time prediction; always runs without dropout.
    fn predict(&mut self, input: &[f64]) -> Result<Prediction>;

    fn boxed_clone(&self) -> Box<dyn DifferentiableModel>;

    /// Serializable weights, for models that have them.
    fn checkpoint(&self) -> Option<checkpoint::Checkpoint> {
        None
    }

    fn loss(&mut self, input: &[f64], target: &AttackTarget) -> Result<f64> {
        let objective = self.objective_for(target)?;
        let output = self.forward(input)?;
        Ok(objective.evaluate(&output)?.0)
    }

    fn input_gradient(&mut self, input: &[f64], target: &AttackTarget) -> Result<(f64, Vec<f64>)> {
        let objective = self.objective_for(target)?;
        self.objective_gradient(input, objective.as_ref())
    }
}

impl Clone for Box<dyn DifferentiableModel> {
    fn clone(&self) -> Self {
        self.boxed_clone()
    }
}

/// Models whose parameters can be fit by gradient descent.
pub trait Trainable: DifferentiableModel + Clone + 'static {
    fn param_names(&self) -> Vec<&'static str>;

    fn params(&self) -> Vec<ArrayViewD<'_, f64>>;

    fn params_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>>;

    /// Loss for `target` and its gradient for every parameter, in
    /// [`Trainable::params`] order.
    fn param_gradient(&mut self, input: &[f64], target: &AttackTarget) -> Result<(f64, Vec<ArrayD<f64>>)>;
}

pub(crate) fn uniform_init<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

pub(crate) fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Inverted-dropout mask: zeros with probability `rate`, else `1/(1-rate)`.
pub(crate) fn dropout_mask<R: Rng + ?Sized>(rng: &mut R, shape: (usize, usize), rate: f64) -> Array2<f64> {
    let keep = 1.0 - rate;
    Array2::from_shape_fn(shape, |_| if rng.random::<f64>() < rate { 0.0 } else { 1.0 / keep })
}
