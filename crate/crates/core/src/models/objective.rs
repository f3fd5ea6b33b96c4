//! Differentiable objectives over model outputs.

use ndarray::Array2;

use super::ctc::ctc_loss_and_grad;
use super::ModelOutput;
use crate::error::{Error, Result};

/// A scalar loss of a model output, with its gradient in output space.
pub trait Objective: Send + Sync {
    fn evaluate(&self, output: &ModelOutput) -> Result<(f64, ModelOutput)>;
}

/// CTC negative log-likelihood of a label sequence.
#[derive(Debug, Clone)]
pub struct CtcObjective {
    pub labels: Vec<usize>,
    pub blank: usize,
}

impl Objective for CtcObjective {
    fn evaluate(&self, output: &ModelOutput) -> Result<(f64, ModelOutput)> {
        let ModelOutput::Frames(log_probs) = output else {
            return Err(Error::InvalidInput("CTC objective needs frame outputs".into()));
        };
        let (loss, grad) = ctc_loss_and_grad(log_probs.view(), &self.labels, self.blank)?;
        Ok((loss, ModelOutput::Frames(grad)))
    }
}

/// `sum_i y_i (log y_i - log softmax(z)_i)` over the support of `y`.
#[derive(Debug, Clone)]
pub struct KlObjective {
    pub target: Vec<f64>,
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_norm = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - log_norm).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// Row-wise log-softmax of a `[frames, vocab]` matrix.
pub fn log_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_norm = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|z| z - log_norm);
    }
    out
}

impl KlObjective {
    pub fn value(&self, logits: &[f64]) -> Result<f64> {
        if logits.len() != self.target.len() {
            return Err(Error::InvalidInput(format!(
                "{} logits against a {}-class target",
                logits.len(),
                self.target.len()
            )));
        }
        let log_p = log_softmax(logits);
        Ok(self.target.iter().zip(&log_p).filter(|(y, _)| **y > 0.0).map(|(y, lp)| y * (y.ln() - lp)).sum())
    }
}

impl Objective for KlObjective {
    fn evaluate(&self, output: &ModelOutput) -> Result<(f64, ModelOutput)> {
        let ModelOutput::Logits(logits) = output else {
            return Err(Error::InvalidInput("KL objective needs class logits".into()));
        };
        let value = self.value(logits)?;
        let mass: f64 = self.target.iter().sum();
        let grad = softmax(logits).iter().zip(&self.target).map(|(p, y)| p * mass - y).collect();
        Ok((value, ModelOutput::Logits(grad)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_zero_at_target() {
        let logits = [0.3, -1.0, 2.0];
        let obj = KlObjective { target: softmax(&logits) };
        assert!(obj.value(&logits).unwrap().abs() < 1e-15);
    }

    #[test]
    fn kl_hand_summation() {
        let logits = [1.0f64, 2.0, 0.5];
        let z: f64 = logits.iter().map(|v| v.exp()).sum();
        let p: Vec<f64> = logits.iter().map(|v| v.exp() / z).collect();
        let y = [0.2, 0.8, 0.0];
        let expected = 0.2 * (0.2f64.ln() - p[0].ln()) + 0.8 * (0.8f64.ln() - p[1].ln());
        let obj = KlObjective { target: y.to_vec() };
        assert!((obj.value(&logits).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn kl_gradient_matches_finite_differences() {
        let logits = vec![0.4, -0.2, 1.3, 0.0];
        let obj = KlObjective { target: vec![0.5, 0.0, 0.3, 0.2] };
        let (_, ModelOutput::Logits(g)) = obj.evaluate(&ModelOutput::Logits(logits.clone())).unwrap() else {
            unreachable!()
        };
        for i in 0..4 {
            let mut up = logits.clone();
            up[i] += 1e-6;
            let mut down = logits.clone();
            down[i] -= 1e-6;
            let fd = (obj.value(&up).unwrap() - obj.value(&down).unwrap()) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn uniform_target_against_peaked_output_is_positive() {
        let obj = KlObjective { target: vec![0.25; 4] };
        assert!(obj.value(&[10.0, 0.0, 0.0, 0.0]).unwrap() > 0.0);
    }
}
