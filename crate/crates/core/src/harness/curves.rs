use serde::{Deserialize, Serialize};

use crate::attack::{cw_attack_observed, AttackConfig};
use crate::audio::AudioSample;
use crate::error::{Error, Result};
use crate::models::{DifferentiableModel, Mode};
use crate::targets::AttackTarget;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSeries {
    pub model: String,
    /// True for models the attack optimizes against.
    pub proxy: bool,
    pub points: Vec<(usize, f64)>,
}

/// Targeted loss of every observed model over the course of one attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCurves {
    pub sample: String,
    pub target: String,
    pub series: Vec<LossSeries>,
}

/// Attacks `sample` with the proxy ensemble and, at every checkpoint,
/// records the deterministic targeted loss on each proxy and on every model
/// in `observed`. No validation model is used, so the attack runs all its
/// iterations.
pub fn loss_curves(
    proxies: &[Box<dyn DifferentiableModel>],
    observed: &[Box<dyn DifferentiableModel>],
    sample: &AudioSample,
    target: &AttackTarget,
    config: &AttackConfig,
) -> Result<LossCurves> {
    let mut watchers: Vec<(Box<dyn DifferentiableModel>, bool)> = proxies
        .iter()
        .map(|p| (p.boxed_clone(), true))
        .chain(observed.iter().map(|m| (m.boxed_clone(), false)))
        .collect();
    let objectives = watchers
        .iter()
        .map(|(m, _)| m.objective_for(target).map_err(|e| e.in_model(m.name())))
        .collect::<Result<Vec<_>>>()?;
    for (m, _) in watchers.iter_mut() {
        m.set_mode(Mode::Deterministic);
    }
    let mut points: Vec<Vec<(usize, f64)>> = vec![Vec::new(); watchers.len()];
    let mut failure: Option<Error> = None;
    let mut observe = |iteration: usize, adv: &[f64]| {
        if failure.is_some() {
            return;
        }
        for (((model, _), objective), series) in watchers.iter_mut().zip(&objectives).zip(points.iter_mut()) {
            let loss =
                model.forward(adv).and_then(|out| objective.evaluate(&out)).map_err(|e| e.in_model(model.name()));
            match loss {
                Ok((v, _)) => series.push((iteration, v)),
                Err(e) => {
                    failure = Some(e);
                    return;
                }
            }
        }
    };
    let mut ensemble: Vec<Box<dyn DifferentiableModel>> = proxies.iter().map(|p| p.boxed_clone()).collect();
    cw_attack_observed(&mut ensemble, None, sample, target, config, Some(&mut observe))?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(LossCurves {
        sample: sample.id.clone(),
        target: target.text().unwrap_or_default().to_owned(),
        series: watchers
            .into_iter()
            .zip(points)
            .map(|((m, proxy), points)| LossSeries { model: m.name().to_owned(), proxy, points })
            .collect(),
    })
}
