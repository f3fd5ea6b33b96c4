//! A one-layer convolutional image classifier: valid 2-D convolution with
//! `tanh`, optional dropout, then a dense layer to class logits.

use ndarray::{Array1, Array2, ArrayD, ArrayViewD, ArrayViewMutD, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::objective::{softmax, KlObjective, Objective};
use super::{dropout_mask, glorot_bound, uniform_init, DifferentiableModel, Mode, ModelOutput, Prediction, Trainable};
use crate::error::{Error, Result};
use crate::metrics::descending_argsort;
use crate::targets::AttackTarget;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyClassifierConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub filters: usize,
    pub classes: usize,
    pub dropout: f64,
}

impl Default for ToyClassifierConfig {
    fn default() -> Self {
        Self { channels: 1, height: 12, width: 12, kernel: 3, filters: 8, classes: 10, dropout: 0.1 }
    }
}

impl ToyClassifierConfig {
    pub fn input_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    fn out_hw(&self) -> (usize, usize) {
        (self.height - self.kernel + 1, self.width - self.kernel + 1)
    }

    fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }
}

#[derive(Debug, Clone)]
pub struct ToyClassifier {
    name: String,
    lineage: Option<String>,
    config: ToyClassifierConfig,
    /// `[filters, channels * kernel * kernel]`
    w_conv: Array2<f64>,
    b_conv: Array1<f64>,
    /// `[classes, positions * filters]`
    w_fc: Array2<f64>,
    b_fc: Array1<f64>,
    mode: Mode,
    rng: ChaCha8Rng,
}

struct Cache {
    patches: Array2<f64>,
    act: Array2<f64>,
    mask: Option<Array2<f64>>,
    flat: Array1<f64>,
    logits: Array1<f64>,
}

const PARAM_NAMES: [&str; 4] = ["w_conv", "b_conv", "w_fc", "b_fc"];

impl ToyClassifier {
    pub fn new(name: impl Into<String>, config: ToyClassifierConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (oh, ow) = config.out_hw();
        let flat = oh * ow * config.filters;
        let w_conv = uniform_init(
            &mut rng,
            config.filters,
            config.patch_len(),
            glorot_bound(config.patch_len(), config.filters),
        );
        let w_fc = uniform_init(&mut rng, config.classes, flat, glorot_bound(flat, config.classes));
        Self {
            name: name.into(),
            lineage: None,
            w_conv,
            b_conv: Array1::zeros(config.filters),
            w_fc,
            b_fc: Array1::zeros(config.classes),
            mode: Mode::Deterministic,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c1a5),
            config,
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_lineage(mut self, lineage: Option<String>) -> Self {
        self.lineage = lineage;
        self
    }

    pub fn config(&self) -> &ToyClassifierConfig {
        &self.config
    }

    pub fn probabilities(&mut self, input: &[f64]) -> Result<Vec<f64>> {
        let cache = self.run(input, false)?;
        Ok(softmax(cache.logits.as_slice().expect("contiguous")))
    }

    /// `[positions, patch]` matrix of receptive fields (im2col).
    fn patches(&self, input: &[f64]) -> Result<Array2<f64>> {
        let c = &self.config;
        if input.len() != c.input_len() {
            return Err(Error::InvalidInput(format!("expected {} pixels, got {}", c.input_len(), input.len())));
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("image has non-finite pixels".into()));
        }
        let (oh, ow) = c.out_hw();
        let k = c.kernel;
        let mut patches = Array2::zeros((oh * ow, c.patch_len()));
        for y in 0..oh {
            for x in 0..ow {
                let mut row = patches.row_mut(y * ow + x);
                let mut j = 0;
                for ch in 0..c.channels {
                    for dy in 0..k {
                        for dx in 0..k {
                            row[j] = input[(ch * c.height + y + dy) * c.width + x + dx];
                            j += 1;
                        }
                    }
                }
            }
        }
        Ok(patches)
    }

    fn run(&mut self, input: &[f64], stochastic: bool) -> Result<Cache> {
        let patches = self.patches(input)?;
        let act = (patches.dot(&self.w_conv.t()) + &self.b_conv).mapv(f64::tanh);
        let rate = self.config.dropout;
        let mask = (stochastic && rate > 0.0).then(|| dropout_mask(&mut self.rng, act.dim(), rate));
        let dropped = match &mask {
            Some(m) => &act * m,
            None => act.clone(),
        };
        let flat = Array1::from_iter(dropped.iter().copied());
        let logits = self.w_fc.dot(&flat) + &self.b_fc;
        Ok(Cache { patches, act, mask, flat, logits })
    }

    /// Gradients for `[w_conv, b_conv, w_fc, b_fc]` and the input.
    fn backward(&self, cache: &Cache, g_logits: &Array1<f64>) -> (Vec<ArrayD<f64>>, Vec<f64>) {
        let c = &self.config;
        let g_w_fc = g_logits.view().insert_axis(Axis(1)).dot(&cache.flat.view().insert_axis(Axis(0)));
        let g_b_fc = g_logits.clone();
        let g_flat = self.w_fc.t().dot(g_logits);
        let mut g_act = Array2::from_shape_vec(cache.act.dim(), g_flat.to_vec()).expect("shape matches");
        if let Some(m) = &cache.mask {
            g_act *= m;
        }
        let g_pre = g_act * &cache.act.mapv(|v| 1.0 - v * v);
        let g_w_conv = g_pre.t().dot(&cache.patches);
        let g_b_conv = g_pre.sum_axis(Axis(0));
        let g_patches = g_pre.dot(&self.w_conv);

        let (oh, ow) = c.out_hw();
        let k = c.kernel;
        let mut g_input = vec![0.0; c.input_len()];
        for y in 0..oh {
            for x in 0..ow {
                let row = g_patches.row(y * ow + x);
                let mut j = 0;
                for ch in 0..c.channels {
                    for dy in 0..k {
                        for dx in 0..k {
                            g_input[(ch * c.height + y + dy) * c.width + x + dx] += row[j];
                            j += 1;
                        }
                    }
                }
            }
        }
        (vec![g_w_conv.into_dyn(), g_b_conv.into_dyn(), g_w_fc.into_dyn(), g_b_fc.into_dyn()], g_input)
    }

    fn gradients(&mut self, input: &[f64], objective: &dyn Objective) -> Result<(f64, Vec<ArrayD<f64>>, Vec<f64>)> {
        let cache = self.run(input, self.mode == Mode::Stochastic)?;
        let (value, grad) = objective.evaluate(&ModelOutput::Logits(cache.logits.to_vec()))?;
        let ModelOutput::Logits(grad) = grad else {
            return Err(Error::InvalidInput("objective returned a non-logit gradient".into()));
        };
        let (params, input_grad) = self.backward(&cache, &Array1::from(grad));
        Ok((value, params, input_grad))
    }

    pub(crate) fn from_parts(
        name: String,
        lineage: Option<String>,
        config: ToyClassifierConfig,
        arrays: Vec<ArrayD<f64>>,
    ) -> Result<Self> {
        let mut model = Self::new(name, config, 0).with_lineage(lineage);
        if arrays.len() != PARAM_NAMES.len() {
            return Err(Error::InvalidInput("wrong number of parameter arrays".into()));
        }
        for (mut dst, src) in model.params_mut().into_iter().zip(&arrays) {
            if dst.shape() != src.shape() {
                return Err(Error::InvalidInput(format!(
                    "parameter shape {:?} does not match configuration {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            dst.assign(src);
        }
        Ok(model)
    }
}

impl DifferentiableModel for ToyClassifier {
    fn name(&self) -> &str {
        &self.name
    }

    fn lineage(&self) -> Option<&str> {
        self.lineage.as_deref()
    }

    fn mode(&self) -> Mode {
        self.mode
    }

    fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    fn forward(&mut self, input: &[f64]) -> Result<ModelOutput> {
        let cache = self.run(input, self.mode == Mode::Stochastic)?;
        Ok(ModelOutput::Logits(cache.logits.to_vec()))
    }

    fn objective_gradient(&mut self, input: &[f64], objective: &dyn Objective) -> Result<(f64, Vec<f64>)> {
        let (value, _, input_grad) = self.gradients(input, objective)?;
        Ok((value, input_grad))
    }

    fn objective_for(&self, target: &AttackTarget) -> Result<Box<dyn Objective>> {
        match target.distribution() {
            Some((dist, _)) if dist.len() == self.config.classes => Ok(Box::new(KlObjective { target: dist.to_vec() })),
            Some((dist, _)) => Err(Error::InvalidInput(format!(
                "target has {} classes, model has {}",
                dist.len(),
                self.config.classes
            ))),
            None => Err(Error::InvalidInput("a classifier needs a class-distribution target".into())),
        }
    }

    fn predict(&mut self, input: &[f64]) -> Result<Prediction> {
        let cache = self.run(input, false)?;
        let logits = cache.logits.to_vec();
        Ok(Prediction::Class(descending_argsort(&logits)[0]))
    }

    fn boxed_clone(&self) -> Box<dyn DifferentiableModel> {
        Box::new(self.clone())
    }

    fn checkpoint(&self) -> Option<super::checkpoint::Checkpoint> {
        Some(super::checkpoint::Checkpoint::from_classifier(self))
    }
}

impl Trainable for ToyClassifier {
    fn param_names(&self) -> Vec<&'static str> {
        PARAM_NAMES.to_vec()
    }

    fn params(&self) -> Vec<ArrayViewD<'_, f64>> {
        vec![
            self.w_conv.view().into_dyn(),
            self.b_conv.view().into_dyn(),
            self.w_fc.view().into_dyn(),
            self.b_fc.view().into_dyn(),
        ]
    }

    fn params_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        vec![
            self.w_conv.view_mut().into_dyn(),
            self.b_conv.view_mut().into_dyn(),
            self.w_fc.view_mut().into_dyn(),
            self.b_fc.view_mut().into_dyn(),
        ]
    }

    fn param_gradient(&mut self, input: &[f64], target: &AttackTarget) -> Result<(f64, Vec<ArrayD<f64>>)> {
        let objective = self.objective_for(target)?;
        let (value, params, _) = self.gradients(input, objective.as_ref())?;
        Ok((value, params))
    }
}
