//! A small frame-convolution acoustic model, optionally Elman-recurrent,
//! trained with CTC over a character alphabet.
//!
//! The waveform is cut into non-overlapping frames of `frame_len` samples
//! (zero padded at the end). Each frame goes through a linear filter bank
//! with `tanh`, then a `tanh` hidden layer (recurrent if configured), then a linear
//! projection and log-softmax over the alphabet. Dropout is applied after
//! the filter bank and after the recurrence when the model is stochastic.

use ndarray::{s, Array1, Array2, ArrayD, ArrayViewD, ArrayViewMutD, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::alphabet::{Alphabet, BLANK};
use super::ctc::ctc_greedy_decode;
use super::objective::{log_softmax_rows, CtcObjective, Objective};
use super::{dropout_mask, glorot_bound, uniform_init, DifferentiableModel, Mode, ModelOutput, Prediction, Trainable};
use crate::error::{Error, Result};
use crate::targets::AttackTarget;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyCtcConfig {
    pub frame_len: usize,
    pub filters: usize,
    pub hidden: usize,
    /// Feed the previous hidden state back in. Off, every frame is
    /// classified on its own.
    pub recurrent: bool,
    pub dropout: f64,
}

impl Default for ToyCtcConfig {
    fn default() -> Self {
        Self { frame_len: 128, filters: 32, hidden: 48, recurrent: false, dropout: 0.1 }
    }
}

#[derive(Debug, Clone)]
pub struct ToyCtcModel {
    name: String,
    lineage: Option<String>,
    config: ToyCtcConfig,
    alphabet: Alphabet,
    w_in: Array2<f64>,
    b_in: Array1<f64>,
    w_x: Array2<f64>,
    w_h: Array2<f64>,
    b_h: Array1<f64>,
    w_out: Array2<f64>,
    b_out: Array1<f64>,
    mode: Mode,
    rng: ChaCha8Rng,
}

struct Cache {
    frames: Array2<f64>,
    a1: Array2<f64>,
    mask1: Option<Array2<f64>>,
    a1d: Array2<f64>,
    h: Array2<f64>,
    mask2: Option<Array2<f64>>,
    hd: Array2<f64>,
    log_probs: Array2<f64>,
}

struct Grads {
    w_in: Array2<f64>,
    b_in: Array1<f64>,
    w_x: Array2<f64>,
    w_h: Array2<f64>,
    b_h: Array1<f64>,
    w_out: Array2<f64>,
    b_out: Array1<f64>,
    input: Vec<f64>,
}

const PARAM_NAMES: [&str; 7] = ["w_in", "b_in", "w_x", "w_h", "b_h", "w_out", "b_out"];

impl ToyCtcModel {
    /// Randomly initialized model; all randomness comes from `seed`.
    pub fn new(name: impl Into<String>, config: ToyCtcConfig, seed: u64) -> Self {
        let alphabet = Alphabet::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (f, c, h, v) = (config.frame_len, config.filters, config.hidden, alphabet.len());
        let w_in = uniform_init(&mut rng, c, f, glorot_bound(f, c));
        let w_x = uniform_init(&mut rng, h, c, glorot_bound(c, h));
        let w_h = if config.recurrent {
            uniform_init(&mut rng, h, h, 0.5 / (h as f64).sqrt())
        } else {
            Array2::zeros((h, h))
        };
        let w_out = uniform_init(&mut rng, v, h, glorot_bound(h, v));
        Self {
            name: name.into(),
            lineage: None,
            alphabet,
            w_in,
            b_in: Array1::zeros(c),
            w_x,
            w_h,
            b_h: Array1::zeros(h),
            w_out,
            b_out: Array1::zeros(v),
            mode: Mode::Deterministic,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_d50f),
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

    pub fn config(&self) -> &ToyCtcConfig {
        &self.config
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    /// Number of frames produced for `samples` input samples.
    pub fn frames_for(&self, samples: usize) -> usize {
        samples.div_ceil(self.config.frame_len)
    }

    pub fn transcribe(&mut self, waveform: &[f64]) -> Result<String> {
        match self.predict(waveform)? {
            Prediction::Transcript(t) => Ok(t),
            Prediction::Class(_) => unreachable!("CTC model predicts transcripts"),
        }
    }

    fn frame(&self, input: &[f64]) -> Result<Array2<f64>> {
        if input.is_empty() {
            return Err(Error::InvalidInput("empty waveform".into()));
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("waveform has non-finite samples".into()));
        }
        let f = self.config.frame_len;
        let frames = self.frames_for(input.len());
        let mut padded = input.to_vec();
        padded.resize(frames * f, 0.0);
        Ok(Array2::from_shape_vec((frames, f), padded).expect("shape matches"))
    }

    fn run(&mut self, input: &[f64], stochastic: bool) -> Result<Cache> {
        let frames = self.frame(input)?;
        let t_len = frames.nrows();
        let hidden = self.config.hidden;
        let rate = self.config.dropout;
        let dropout = stochastic && rate > 0.0;

        let a1 = (frames.dot(&self.w_in.t()) + &self.b_in).mapv(f64::tanh);
        let mask1 = dropout.then(|| dropout_mask(&mut self.rng, a1.dim(), rate));
        let a1d = match &mask1 {
            Some(m) => &a1 * m,
            None => a1.clone(),
        };
        let drive = a1d.dot(&self.w_x.t()) + &self.b_h;
        let mut h = Array2::zeros((t_len, hidden));
        for t in 0..t_len {
            let mut pre = drive.row(t).to_owned();
            if t > 0 && self.config.recurrent {
                pre += &self.w_h.dot(&h.row(t - 1));
            }
            h.row_mut(t).assign(&pre.mapv(f64::tanh));
        }
        let mask2 = dropout.then(|| dropout_mask(&mut self.rng, h.dim(), rate));
        let hd = match &mask2 {
            Some(m) => &h * m,
            None => h.clone(),
        };
        let logits = hd.dot(&self.w_out.t()) + &self.b_out;
        let log_probs = log_softmax_rows(&logits);
        Ok(Cache { frames, a1, mask1, a1d, h, mask2, hd, log_probs })
    }

    fn backward(&self, cache: &Cache, grad_log_probs: &Array2<f64>, input_len: usize) -> Grads {
        let probs = cache.log_probs.mapv(f64::exp);
        let row_sums = grad_log_probs.sum_axis(Axis(1)).insert_axis(Axis(1));
        let g_logits = grad_log_probs - &(&probs * &row_sums);

        let g_w_out = g_logits.t().dot(&cache.hd);
        let g_b_out = g_logits.sum_axis(Axis(0));
        let mut g_h = g_logits.dot(&self.w_out);
        if let Some(m) = &cache.mask2 {
            g_h *= m;
        }

        let (t_len, hidden) = cache.h.dim();
        let mut g_pre = Array2::zeros((t_len, hidden));
        let mut carry = Array1::<f64>::zeros(hidden);
        for t in (0..t_len).rev() {
            let total = &g_h.row(t) + &carry;
            let local = &total * &cache.h.row(t).mapv(|v| 1.0 - v * v);
            if self.config.recurrent {
                carry = self.w_h.t().dot(&local);
            }
            g_pre.row_mut(t).assign(&local);
        }
        let g_w_h = if t_len > 1 && self.config.recurrent {
            g_pre.slice(s![1.., ..]).t().dot(&cache.h.slice(s![..t_len - 1, ..]))
        } else {
            Array2::zeros(self.w_h.dim())
        };
        let g_w_x = g_pre.t().dot(&cache.a1d);
        let g_b_h = g_pre.sum_axis(Axis(0));

        let mut g_a1 = g_pre.dot(&self.w_x);
        if let Some(m) = &cache.mask1 {
            g_a1 *= m;
        }
        let g_z1 = g_a1 * &cache.a1.mapv(|v| 1.0 - v * v);
        let g_w_in = g_z1.t().dot(&cache.frames);
        let g_b_in = g_z1.sum_axis(Axis(0));
        let g_frames = g_z1.dot(&self.w_in);
        let mut input: Vec<f64> = g_frames.into_iter().collect();
        input.truncate(input_len);

        Grads { w_in: g_w_in, b_in: g_b_in, w_x: g_w_x, w_h: g_w_h, b_h: g_b_h, w_out: g_w_out, b_out: g_b_out, input }
    }

    fn ctc_objective(&self, text: &str) -> Result<CtcObjective> {
        let labels = self.alphabet.encode(text);
        if labels.is_empty() {
            return Err(Error::InvalidInput(format!("target `{text}` has no encodable characters")));
        }
        Ok(CtcObjective { labels, blank: BLANK })
    }

    fn gradients(&mut self, input: &[f64], objective: &dyn Objective) -> Result<(f64, Grads)> {
        let cache = self.run(input, self.mode == Mode::Stochastic)?;
        let (value, grad) = objective.evaluate(&ModelOutput::Frames(cache.log_probs.clone()))?;
        let ModelOutput::Frames(grad) = grad else {
            return Err(Error::InvalidInput("objective returned a non-frame gradient".into()));
        };
        if !value.is_finite() {
            return Ok((value, self.backward(&cache, &Array2::zeros(grad.dim()), input.len())));
        }
        Ok((value, self.backward(&cache, &grad, input.len())))
    }

    pub(crate) fn from_parts(
        name: String,
        lineage: Option<String>,
        config: ToyCtcConfig,
        mut arrays: Vec<ArrayD<f64>>,
    ) -> Result<Self> {
        let mut model = Self::new(name, config, 0).with_lineage(lineage);
        if arrays.len() != PARAM_NAMES.len() {
            return Err(Error::InvalidInput("wrong number of parameter arrays".into()));
        }
        for (dst, src) in model.params_mut().into_iter().zip(arrays.iter_mut()) {
            if dst.shape() != src.shape() {
                return Err(Error::InvalidInput(format!(
                    "parameter shape {:?} does not match configuration {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            let mut dst = dst;
            dst.assign(src);
        }
        Ok(model)
    }
}

impl DifferentiableModel for ToyCtcModel {
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
        Ok(ModelOutput::Frames(cache.log_probs))
    }

    fn objective_gradient(&mut self, input: &[f64], objective: &dyn Objective) -> Result<(f64, Vec<f64>)> {
        let (value, grads) = self.gradients(input, objective)?;
        Ok((value, grads.input))
    }

    fn objective_for(&self, target: &AttackTarget) -> Result<Box<dyn Objective>> {
        match target.text() {
            Some(text) => Ok(Box::new(self.ctc_objective(text)?)),
            None => Err(Error::InvalidInput("a CTC model needs a transcript or prefix target".into())),
        }
    }

    fn predict(&mut self, input: &[f64]) -> Result<Prediction> {
        let cache = self.run(input, false)?;
        let labels = ctc_greedy_decode(cache.log_probs.view(), BLANK);
        Ok(Prediction::Transcript(self.alphabet.decode(&labels)))
    }

    fn boxed_clone(&self) -> Box<dyn DifferentiableModel> {
        Box::new(self.clone())
    }

    fn checkpoint(&self) -> Option<super::checkpoint::Checkpoint> {
        Some(super::checkpoint::Checkpoint::from_ctc(self))
    }
}

impl Trainable for ToyCtcModel {
    fn param_names(&self) -> Vec<&'static str> {
        PARAM_NAMES.to_vec()
    }

    fn params(&self) -> Vec<ArrayViewD<'_, f64>> {
        vec![
            self.w_in.view().into_dyn(),
            self.b_in.view().into_dyn(),
            self.w_x.view().into_dyn(),
            self.w_h.view().into_dyn(),
            self.b_h.view().into_dyn(),
            self.w_out.view().into_dyn(),
            self.b_out.view().into_dyn(),
        ]
    }

    fn params_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        vec![
            self.w_in.view_mut().into_dyn(),
            self.b_in.view_mut().into_dyn(),
            self.w_x.view_mut().into_dyn(),
            self.w_h.view_mut().into_dyn(),
            self.b_h.view_mut().into_dyn(),
            self.w_out.view_mut().into_dyn(),
            self.b_out.view_mut().into_dyn(),
        ]
    }

    fn param_gradient(&mut self, input: &[f64], target: &AttackTarget) -> Result<(f64, Vec<ArrayD<f64>>)> {
        let objective = self.objective_for(target)?;
        let (value, g) = self.gradients(input, objective.as_ref())?;
        Ok((
            value,
            vec![
                g.w_in.into_dyn(),
                g.b_in.into_dyn(),
                g.w_x.into_dyn(),
                g.w_h.into_dyn(),
                g.b_h.into_dyn(),
                g.w_out.into_dyn(),
                g.b_out.into_dyn(),
            ],
        ))
    }
}
