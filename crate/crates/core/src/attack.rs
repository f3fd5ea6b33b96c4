//! Fixed-radius projected gradient attacks.
//!
//! [`cw_attack`] minimizes `sum_p L_p(x + d, y) + c |d|_2^2` over a proxy
//! ensemble with plain SGD, projecting `d` onto the L-infinity ball and
//! clipping `x + d` to `[-1, 1]` after every step. A deterministic
//! validation model, when given, picks the returned checkpoint.
//! [`pgd_attack`] is the same loop for an arbitrary objective on a single
//! model, without the penalty or the validation model. In L2 mode steps
//! follow the normalized gradient, so `learning_rate` is a step length.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::AudioSample;
use crate::error::{Error, Result};
use crate::metrics::{snr_db, squared_norm};
use crate::models::{DifferentiableModel, Mode, Objective};
use crate::targets::AttackTarget;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    Linf,
    L2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub linf_radius: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub reg_const: f64,
    pub norm: Norm,
    pub l2_radius: f64,
    pub checkpoint_every: usize,
    pub seed: u64,
    pub stochastic_proxy: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            linf_radius: 0.015,
            learning_rate: 5e-4,
            iterations: 10_000,
            reg_const: 10.0,
            norm: Norm::Linf,
            l2_radius: 0.5,
            checkpoint_every: 100,
            seed: 0,
            stochastic_proxy: true,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_owned()));
        if !(self.linf_radius > 0.0 && self.linf_radius.is_finite()) {
            return bad("linf_radius must be a positive number");
        }
        if self.norm == Norm::L2 && !(self.l2_radius > 0.0 && self.l2_radius.is_finite()) {
            return bad("l2_radius must be a positive number");
        }
        // A zero rate is accepted as a no-op run.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be a non-negative number");
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if !(self.reg_const >= 0.0 && self.reg_const.is_finite()) {
            return bad("reg_const must be non-negative");
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every must be at least 1");
        }
        Ok(())
    }

    /// One descent step followed by projection. L-infinity mode takes a
    /// plain SGD step; L2 mode steps `learning_rate` along the unit gradient.
    fn step(&self, delta: &mut [f64], grad: &[f64]) {
        match self.norm {
            Norm::Linf => {
                delta.iter_mut().zip(grad).for_each(|(d, g)| *d -= self.learning_rate * g);
                linf_project(delta, self.linf_radius);
            }
            Norm::L2 => {
                let norm = squared_norm(grad).sqrt();
                if norm > 0.0 {
                    let scale = self.learning_rate / norm;
                    delta.iter_mut().zip(grad).for_each(|(d, g)| *d -= scale * g);
                }
                l2_project(delta, self.l2_radius);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub delta: Vec<f64>,
}

impl Perturbation {
    pub fn apply(&self, signal: &[f64]) -> Vec<f64> {
        signal.iter().zip(&self.delta).map(|(x, d)| x + d).collect()
    }

    pub fn linf(&self) -> f64 {
        self.delta.iter().fold(0.0, |m, d| m.max(d.abs()))
    }

    pub fn l2(&self) -> f64 {
        squared_norm(&self.delta).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationResult {
    pub delta: Perturbation,
    /// Ensemble objective (penalty excluded) at the iterate entering each step.
    pub proxy_loss_trace: Vec<(usize, f64)>,
    /// Validation loss after each checkpointed step; empty without a
    /// validation model.
    pub validation_loss_trace: Vec<(usize, f64)>,
    pub best_iteration: usize,
    pub achieved_snr: f64,
}

pub fn linf_project(delta: &mut [f64], eps: f64) {
    for d in delta {
        *d = d.clamp(-eps, eps);
    }
}

pub fn l2_project(delta: &mut [f64], radius: f64) {
    let norm = squared_norm(delta).sqrt();
    if norm > radius {
        let scale = radius / norm;
        for d in delta {
            *d *= scale;
        }
    }
}

/// Shrinks `delta` where needed so that `signal + delta` stays in `[-1, 1]`.
/// Components whose sum is already in range are left untouched.
pub fn clip_to_signal_range(signal: &[f64], delta: &mut [f64]) {
    for (x, d) in signal.iter().zip(delta.iter_mut()) {
        let y = x + *d;
        if y > 1.0 {
            *d = 1.0 - x;
            while x + *d > 1.0 {
                *d = d.next_down();
            }
        } else if y < -1.0 {
            *d = -1.0 - x;
            while x + *d < -1.0 {
                *d = d.next_up();
            }
        }
    }
}

fn achieved_snr(signal: &[f64], delta: &[f64]) -> f64 {
    match snr_db(signal, delta) {
        Ok(snr) => snr,
        Err(_) if squared_norm(delta) == 0.0 => f64::NAN,
        Err(_) => f64::NEG_INFINITY,
    }
}

/// Unweighted sum of every proxy's training loss on `(input, target)`.
pub fn ensemble_loss(
    proxies: &mut [Box<dyn DifferentiableModel>],
    input: &[f64],
    target: &AttackTarget,
) -> Result<f64> {
    if proxies.is_empty() {
        return Err(Error::InvalidInput("ensemble needs at least one proxy".into()));
    }
    let mut total = 0.0;
    for proxy in proxies.iter_mut() {
        let name = proxy.name().to_owned();
        total += proxy.loss(input, target).map_err(|e| e.in_model(name))?;
    }
    Ok(total)
}

fn check_signal(signal: &[f64]) -> Result<()> {
    if signal.is_empty() {
        return Err(Error::InvalidInput("empty input".into()));
    }
    if signal.iter().any(|v| !(-1.0..=1.0).contains(v)) {
        return Err(Error::InvalidInput("input lies outside [-1, 1]".into()));
    }
    Ok(())
}

struct ModeGuard<'a> {
    model: &'a mut dyn DifferentiableModel,
    saved: Mode,
}

impl<'a> ModeGuard<'a> {
    fn new(model: &'a mut dyn DifferentiableModel, mode: Mode) -> Self {
        let saved = model.mode();
        model.set_mode(mode);
        Self { model, saved }
    }
}

impl Drop for ModeGuard<'_> {
    fn drop(&mut self) {
        self.model.set_mode(self.saved);
    }
}

/// Called at every validation checkpoint with the iteration number and the
/// current adversarial input.
pub type CheckpointObserver<'a> = &'a mut dyn FnMut(usize, &[f64]);

pub fn cw_attack(
    proxies: &mut [Box<dyn DifferentiableModel>],
    validation: Option<&mut dyn DifferentiableModel>,
    sample: &AudioSample,
    target: &AttackTarget,
    config: &AttackConfig,
) -> Result<PerturbationResult> {
    cw_attack_observed(proxies, validation, sample, target, config, None)
}

pub fn cw_attack_observed(
    proxies: &mut [Box<dyn DifferentiableModel>],
    validation: Option<&mut dyn DifferentiableModel>,
    sample: &AudioSample,
    target: &AttackTarget,
    config: &AttackConfig,
    mut observer: Option<CheckpointObserver<'_>>,
) -> Result<PerturbationResult> {
    config.validate()?;
    if config.norm != Norm::Linf {
        return Err(Error::Config("cw_attack uses the L-infinity norm".into()));
    }
    if proxies.is_empty() {
        return Err(Error::InvalidInput("cw_attack needs at least one proxy".into()));
    }
    let x = &sample.waveform;
    check_signal(x)?;

    let objectives = proxies
        .iter()
        .map(|p| p.objective_for(target).map_err(|e| e.in_model(p.name())))
        .collect::<Result<Vec<_>>>()?;
    let validation_objective = match &validation {
        Some(v) => Some(v.objective_for(target).map_err(|e| e.in_model(v.name()))?),
        None => None,
    };

    let mode = if config.stochastic_proxy { Mode::Stochastic } else { Mode::Deterministic };
    let mut seeder = ChaCha8Rng::seed_from_u64(config.seed);
    let saved: Vec<Mode> = proxies.iter().map(|p| p.mode()).collect();
    for p in proxies.iter_mut() {
        p.set_mode(mode);
        p.reseed(seeder.random());
    }
    let mut validation = validation.map(|v| ModeGuard::new(v, Mode::Deterministic));

    let outcome = (|| {
        let mut delta = vec![0.0; x.len()];
        let mut adv = x.clone();
        let mut grad = vec![0.0; x.len()];
        let mut proxy_trace = Vec::with_capacity(config.iterations);
        let mut validation_trace = Vec::new();
        let mut best: Option<(f64, usize, Vec<f64>)> = None;

        for iteration in 1..=config.iterations {
            grad.iter_mut().zip(&delta).for_each(|(g, d)| *g = 2.0 * config.reg_const * d);
            let mut loss = 0.0;
            for (proxy, objective) in proxies.iter_mut().zip(&objectives) {
                let (l, g) =
                    proxy.objective_gradient(&adv, objective.as_ref()).map_err(|e| e.in_model(proxy.name()))?;
                loss += l;
                grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            }
            proxy_trace.push((iteration, loss));
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    iteration,
                    trace: proxy_trace.into_iter().map(|(_, l)| l).collect(),
                });
            }

            config.step(&mut delta, &grad);
            clip_to_signal_range(x, &mut delta);
            adv.iter_mut().zip(x.iter().zip(&delta)).for_each(|(a, (x, d))| *a = x + d);

            let checkpoint = iteration % config.checkpoint_every == 0 || iteration == config.iterations;
            if checkpoint {
                if let Some(obs) = observer.as_mut() {
                    obs(iteration, &adv);
                }
                if let (Some(guard), Some(objective)) = (validation.as_mut(), &validation_objective) {
                    let output = guard.model.forward(&adv).map_err(|e| e.in_model(guard.model.name()))?;
                    let (v, _) = objective.evaluate(&output).map_err(|e| e.in_model(guard.model.name()))?;
                    validation_trace.push((iteration, v));
                    // NaN never wins; ties keep the earlier checkpoint.
                    if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                        best = Some((v, iteration, delta.clone()));
                    }
                }
            }
        }

        let (best_iteration, delta) = match best {
            Some((_, it, d)) => (it, d),
            None => (config.iterations, delta),
        };
        Ok(PerturbationResult {
            achieved_snr: achieved_snr(x, &delta),
            delta: Perturbation { delta },
            proxy_loss_trace: proxy_trace,
            validation_loss_trace: validation_trace,
            best_iteration,
        })
    })();

    for (p, m) in proxies.iter_mut().zip(saved) {
        p.set_mode(m);
    }
    outcome
}

/// Projected gradient descent on `objective(model(input + d))`.
pub fn pgd_attack(
    model: &mut dyn DifferentiableModel,
    input: &[f64],
    objective: &dyn Objective,
    config: &AttackConfig,
) -> Result<PerturbationResult> {
    config.validate()?;
    check_signal(input)?;
    let mode = if config.stochastic_proxy { Mode::Stochastic } else { Mode::Deterministic };
    let guard = ModeGuard::new(model, mode);
    guard.model.reseed(ChaCha8Rng::seed_from_u64(config.seed).random());

    let mut delta = vec![0.0; input.len()];
    let mut adv = input.to_vec();
    let mut trace = Vec::with_capacity(config.iterations);
    for iteration in 1..=config.iterations {
        let (loss, grad) =
            guard.model.objective_gradient(&adv, objective).map_err(|e| e.in_model(guard.model.name()))?;
        trace.push((iteration, loss));
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { iteration, trace: trace.into_iter().map(|(_, l)| l).collect() });
        }
        config.step(&mut delta, &grad);
        clip_to_signal_range(input, &mut delta);
        adv.iter_mut().zip(input.iter().zip(&delta)).for_each(|(a, (x, d))| *a = x + d);
    }
    Ok(PerturbationResult {
        achieved_snr: achieved_snr(input, &delta),
        delta: Perturbation { delta },
        proxy_loss_trace: trace,
        validation_loss_trace: Vec::new(),
        best_iteration: config.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{KlObjective, ToyClassifier, ToyClassifierConfig, ToyCtcConfig, ToyCtcModel};

    fn small_ctc(seed: u64) -> Box<dyn DifferentiableModel> {
        Box::new(ToyCtcModel::new(
            format!("ctc{seed}"),
            ToyCtcConfig { frame_len: 4, filters: 6, hidden: 5, recurrent: true, dropout: 0.1 },
            seed,
        ))
    }

    fn sample(n: usize) -> AudioSample {
        let wave = (0..n).map(|i| (i as f64 * 0.37).sin() * 0.9).collect();
        AudioSample::new("s", wave, "AB")
    }

    #[test]
    fn projections() {
        let mut d = vec![0.5, -1.0, 0.001];
        linf_project(&mut d, 0.015);
        assert_eq!(d, vec![0.015, -0.015, 0.001]);
        let mut d = vec![2.0, 0.0];
        l2_project(&mut d, 0.5);
        assert_eq!(d, vec![0.5, 0.0]);
        let mut d = vec![0.3, 0.0];
        l2_project(&mut d, 0.5);
        assert_eq!(d, vec![0.3, 0.0]);
        let mut z = vec![0.0; 3];
        l2_project(&mut z, 0.5);
        assert_eq!(z, vec![0.0; 3]);
    }

    #[test]
    fn signal_clip_is_exact() {
        let x = vec![0.9999999999, -0.3, 0.1 + 0.2];
        let mut d = vec![0.3, -0.9, 0.7, 0.2];
        let x = [x, vec![0.5]].concat();
        clip_to_signal_range(&x, &mut d);
        for (x, d) in x.iter().zip(&d) {
            assert!((-1.0..=1.0).contains(&(x + d)));
        }
        assert_eq!(x[1] + d[1], -1.0);
        assert_eq!(d[3], 0.2);
    }

    #[test]
    fn ensemble_is_a_plain_sum() {
        let target = AttackTarget::transcript("AB").unwrap();
        let s = sample(40);
        let mut one = vec![small_ctc(1)];
        let single = ensemble_loss(&mut one, &s.waveform, &target).unwrap();
        let mut two = vec![small_ctc(1), small_ctc(1)];
        assert_eq!(ensemble_loss(&mut two, &s.waveform, &target).unwrap(), 2.0 * single);
        let mut mixed = vec![small_ctc(1), small_ctc(2)];
        let other = small_ctc(2).loss(&s.waveform, &target).unwrap();
        assert!((ensemble_loss(&mut mixed, &s.waveform, &target).unwrap() - (single + other)).abs() < 1e-12);
    }

    #[test]
    fn zero_rate_is_a_no_op() {
        let config = AttackConfig { iterations: 1, learning_rate: 0.0, ..Default::default() };
        let mut proxies = vec![small_ctc(1)];
        let r = cw_attack(&mut proxies, None, &sample(40), &AttackTarget::transcript("AB").unwrap(), &config).unwrap();
        assert!(r.delta.delta.iter().all(|&d| d == 0.0));
        assert_eq!(r.proxy_loss_trace.len(), 1);
        assert_eq!(r.best_iteration, 1);
        assert!(r.achieved_snr.is_infinite());
    }

    #[test]
    fn validation_checkpoint_is_best() {
        let config = AttackConfig {
            iterations: 60,
            learning_rate: 0.05,
            linf_radius: 0.3,
            checkpoint_every: 7,
            ..Default::default()
        };
        let mut proxies = vec![small_ctc(1)];
        let mut val = small_ctc(2);
        let s = sample(40);
        let target = AttackTarget::transcript("BA").unwrap();
        let r = cw_attack(&mut proxies, Some(val.as_mut()), &s, &target, &config).unwrap();
        let its: Vec<usize> = r.validation_loss_trace.iter().map(|p| p.0).collect();
        assert_eq!(its, vec![7, 14, 21, 28, 35, 42, 49, 56, 60]);
        let best = r.validation_loss_trace.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        val.set_mode(Mode::Deterministic);
        let returned = val.loss(&r.delta.apply(&s.waveform), &target).unwrap();
        assert!((returned - best).abs() < 1e-9);
        assert!(returned <= r.validation_loss_trace.last().unwrap().1);
        assert_eq!(proxies[0].mode(), Mode::Deterministic);
        assert!(r.delta.linf() <= 0.3);
    }

    #[test]
    fn deterministic_runs_are_identical() {
        let config =
            AttackConfig { iterations: 20, learning_rate: 0.01, stochastic_proxy: true, seed: 4, ..Default::default() };
        let run = || {
            let mut proxies = vec![small_ctc(1)];
            cw_attack(&mut proxies, None, &sample(40), &AttackTarget::transcript("AB").unwrap(), &config).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn kl_at_current_output_starts_at_zero() {
        let config =
            ToyClassifierConfig { height: 5, width: 5, kernel: 3, filters: 2, classes: 4, ..Default::default() };
        let mut model = ToyClassifier::new("c", config.clone(), 3);
        let x: Vec<f64> = (0..config.input_len()).map(|i| (i as f64).cos() * 0.5).collect();
        let p = model.probabilities(&x).unwrap();
        let objective = KlObjective { target: p };
        let attack = AttackConfig {
            norm: Norm::L2,
            l2_radius: 0.5,
            learning_rate: 0.1,
            iterations: 5,
            stochastic_proxy: false,
            ..Default::default()
        };
        let r = pgd_attack(&mut model, &x, &objective, &attack).unwrap();
        assert!(r.proxy_loss_trace[0].1.abs() < 1e-12);
        assert!(r.delta.l2() <= 0.5 + 1e-12);
    }

    #[test]
    fn rejects_bad_configs() {
        for bad in [
            AttackConfig { linf_radius: 0.0, ..Default::default() },
            AttackConfig { iterations: 0, ..Default::default() },
            AttackConfig { reg_const: -1.0, ..Default::default() },
            AttackConfig { checkpoint_every: 0, ..Default::default() },
            AttackConfig { learning_rate: f64::NAN, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
        AttackConfig::default().validate().unwrap();
    }

    struct Nan;

    impl Objective for Nan {
        fn evaluate(&self, output: &crate::models::ModelOutput) -> Result<(f64, crate::models::ModelOutput)> {
            Ok((f64::NAN, output.clone()))
        }
    }

    #[test]
    fn non_finite_loss_aborts_with_trace() {
        let config =
            ToyClassifierConfig { height: 4, width: 4, kernel: 2, filters: 2, classes: 3, ..Default::default() };
        let mut model = ToyClassifier::new("c", config.clone(), 3);
        let x = vec![0.1; config.input_len()];
        match pgd_attack(&mut model, &x, &Nan, &AttackConfig::default()) {
            Err(Error::NonFiniteLoss { iteration: 1, trace }) => assert!(trace[0].is_nan()),
            other => panic!("{other:?}"),
        }
    }
}
