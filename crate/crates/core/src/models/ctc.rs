//! Connectionist Temporal Classification loss (forward-backward in log
//! space) and greedy decoding.
//!
//! `log_probs` is laid out `[frames, vocab]`; each row holds per-frame log
//! probabilities.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Minimum frames needed to emit `target`: one per label plus a blank
/// between each pair of equal neighbours.
pub fn ctc_required_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

fn check_inputs(log_probs: &ArrayView2<f64>, target: &[usize], blank: usize) -> Result<()> {
    let (frames, vocab) = log_probs.dim();
    if blank >= vocab {
        return Err(Error::InvalidInput(format!("blank {blank} outside vocabulary of {vocab}")));
    }
    if let Some(&bad) = target.iter().find(|&&l| l >= vocab || l == blank) {
        return Err(Error::InvalidInput(format!("invalid CTC target label {bad}")));
    }
    let required = ctc_required_frames(target);
    if frames < required {
        return Err(Error::CtcLength { frames, required });
    }
    Ok(())
}

fn extended(target: &[usize], blank: usize) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(blank);
    for &l in target {
        ext.push(l);
        ext.push(blank);
    }
    ext
}

/// Log-space forward variables, `[frames, 2 * |target| + 1]`.
fn forward_vars(lp: &ArrayView2<f64>, ext: &[usize], blank: usize) -> Array2<f64> {
    let frames = lp.nrows();
    let states = ext.len();
    let mut alpha = Array2::from_elem((frames, states), f64::NEG_INFINITY);
    alpha[[0, 0]] = lp[[0, blank]];
    if states > 1 {
        alpha[[0, 1]] = lp[[0, ext[1]]];
    }
    for t in 1..frames {
        for s in 0..states {
            let mut acc = alpha[[t - 1, s]];
            if s >= 1 {
                acc = log_add(acc, alpha[[t - 1, s - 1]]);
            }
            if s >= 2 && ext[s] != blank && ext[s] != ext[s - 2] {
                acc = log_add(acc, alpha[[t - 1, s - 2]]);
            }
            alpha[[t, s]] = acc + lp[[t, ext[s]]];
        }
    }
    alpha
}

fn backward_vars(lp: &ArrayView2<f64>, ext: &[usize], blank: usize) -> Array2<f64> {
    let frames = lp.nrows();
    let states = ext.len();
    let mut beta = Array2::from_elem((frames, states), f64::NEG_INFINITY);
    beta[[frames - 1, states - 1]] = lp[[frames - 1, ext[states - 1]]];
    if states > 1 {
        beta[[frames - 1, states - 2]] = lp[[frames - 1, ext[states - 2]]];
    }
    for t in (0..frames - 1).rev() {
        for s in 0..states {
            let mut acc = beta[[t + 1, s]];
            if s + 1 < states {
                acc = log_add(acc, beta[[t + 1, s + 1]]);
            }
            if s + 2 < states && ext[s] != blank && ext[s] != ext[s + 2] {
                acc = log_add(acc, beta[[t + 1, s + 2]]);
            }
            beta[[t, s]] = acc + lp[[t, ext[s]]];
        }
    }
    beta
}

fn total_log_prob(alpha: &Array2<f64>) -> f64 {
    let (frames, states) = alpha.dim();
    let last = alpha[[frames - 1, states - 1]];
    if states > 1 {
        log_add(last, alpha[[frames - 1, states - 2]])
    } else {
        last
    }
}

/// Negative log-likelihood of `target` under all collapsing alignments.
pub fn ctc_loss(log_probs: ArrayView2<f64>, target: &[usize], blank: usize) -> Result<f64> {
    check_inputs(&log_probs, target, blank)?;
    if log_probs.nrows() == 0 {
        return Ok(0.0);
    }
    let ext = extended(target, blank);
    Ok(-total_log_prob(&forward_vars(&log_probs, &ext, blank)))
}

/// CTC loss together with its gradient with respect to `log_probs`.
pub fn ctc_loss_and_grad(log_probs: ArrayView2<f64>, target: &[usize], blank: usize) -> Result<(f64, Array2<f64>)> {
    check_inputs(&log_probs, target, blank)?;
    let mut grad = Array2::zeros(log_probs.dim());
    if log_probs.nrows() == 0 {
        return Ok((0.0, grad));
    }
    let ext = extended(target, blank);
    let alpha = forward_vars(&log_probs, &ext, blank);
    let beta = backward_vars(&log_probs, &ext, blank);
    let log_total = total_log_prob(&alpha);
    if !log_total.is_finite() {
        return Ok((f64::INFINITY, grad));
    }
    for t in 0..log_probs.nrows() {
        for (s, &label) in ext.iter().enumerate() {
            let occupancy = alpha[[t, s]] + beta[[t, s]] - log_probs[[t, label]] - log_total;
            if occupancy > f64::NEG_INFINITY {
                grad[[t, label]] -= occupancy.exp();
            }
        }
    }
    Ok((-log_total, grad))
}

/// Per-frame argmax (lowest index on ties), repeats collapsed, blanks dropped.
pub fn ctc_greedy_decode(log_probs: ArrayView2<f64>, blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for row in log_probs.rows() {
        let best =
            row.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc }).0;
        if Some(best) != prev && best != blank {
            out.push(best);
        }
        prev = Some(best);
    }
    out
}
