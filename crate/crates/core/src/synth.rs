//! Synthetic speech and image tasks for the toy models.
//!
//! Speech: every alphabet symbol owns a fixed waveform template spanning
//! `frames_per_char` frames, mixed from a carrier all symbols share and a
//! random symbol-specific part. An utterance is leading
//! silence, then each character's template followed by a short gap, then
//! trailing silence, all under light noise. Images: every class owns a
//! smooth random pattern; samples add Gaussian pixel noise.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::audio::AudioSample;
use crate::models::train::{Example, TrainConfig};
use crate::models::{Alphabet, ToyClassifierConfig, ToyCtcConfig};
use crate::targets::{AttackTarget, TargetCorpus};

const EXTRA_WORDS: &[&str] = &[
    "BUT", "THEN", "QUICK", "BOX", "ZERO", "JUMP", "QUIET", "JOY", "EXTRA", "LAZY", "FOX", "WHY", "KEEP", "VERY",
    "SIX", "JUST", "QUEEN", "ZONE", "WAX", "BUT", "AND", "THE", "OF", "IN",
];

fn lexicon() -> Vec<String> {
    let mut words: Vec<String> = Vec::new();
    for line in TargetCorpus::librispeech_candidates().candidates() {
        for w in crate::metrics::normalize_str(line).split(' ') {
            if !words.iter().any(|x| x == w) {
                words.push(w.to_owned());
            }
        }
    }
    for w in EXTRA_WORDS {
        if !words.iter().any(|x| x == w) {
            words.push((*w).to_owned());
        }
    }
    words
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpeechSynthConfig {
    pub frames_per_char: usize,
    pub gap_frames: usize,
    pub lead_frames: usize,
    pub tail_frames: usize,
    pub min_amplitude: f64,
    pub max_amplitude: f64,
    pub noise_std: f64,
    /// Weight of the waveform all symbols share; the remainder is
    /// symbol-specific. Higher values make symbols harder to tell apart.
    pub shared_carrier: f64,
    pub voice_seed: u64,
}

impl Default for SpeechSynthConfig {
    fn default() -> Self {
        Self {
            frames_per_char: 1,
            gap_frames: 1,
            lead_frames: 12,
            tail_frames: 3,
            min_amplitude: 0.01,
            max_amplitude: 0.4,
            noise_std: 0.003,
            shared_carrier: 0.98,
            voice_seed: 2023,
        }
    }
}

/// The toy speech task: synthesizer, model shape and training schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpeechTask {
    pub synth: SpeechSynthConfig,
    pub model: ToyCtcConfig,
    pub training: TrainConfig,
    pub train_size: usize,
    /// Loudness range of held-out utterances; training draws from the
    /// synthesizer's wider range.
    pub eval_amplitude: (f64, f64),
    pub min_words: usize,
    pub max_words: usize,
    pub data_seed: u64,
}

impl Default for SpeechTask {
    fn default() -> Self {
        Self::standard()
    }
}

impl SpeechTask {
    pub fn standard() -> Self {
        Self {
            synth: SpeechSynthConfig::default(),
            model: ToyCtcConfig::default(),
            training: TrainConfig { epochs: 25, batch_size: 8, learning_rate: 3e-3, grad_clip: 5.0, weight_decay: 0.0 },
            train_size: 400,
            eval_amplitude: (0.2, 0.4),
            min_words: 1,
            max_words: 6,
            data_seed: 1,
        }
    }

    fn frame_len(&self) -> usize {
        self.model.frame_len
    }

    /// Unit-RMS template per alphabet label (index 0, the blank, is silence).
    pub fn templates(&self) -> Vec<Vec<f64>> {
        let alphabet = Alphabet::default();
        let mut rng = ChaCha8Rng::seed_from_u64(self.synth.voice_seed);
        let len = self.synth.frames_per_char * self.frame_len();
        let w = self.synth.shared_carrier.clamp(0.0, 1.0);
        let carrier: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
        (0..alphabet.len())
            .map(|label| {
                if label == 0 {
                    return vec![0.0; len];
                }
                let raw: Vec<f64> = carrier
                    .iter()
                    .map(|c| w * c + (1.0 - w * w).sqrt() * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let rms = (raw.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
                raw.into_iter().map(|v| v / rms).collect()
            })
            .collect()
    }

    pub fn render<R: Rng + ?Sized>(&self, text: &str, rng: &mut R) -> Vec<f64> {
        let alphabet = Alphabet::default();
        let templates = self.templates();
        let f = self.frame_len();
        let s = &self.synth;
        let amplitude = rng.random_range(s.min_amplitude..=s.max_amplitude);
        let mut wave = vec![0.0; s.lead_frames * f];
        for label in alphabet.encode(text) {
            wave.extend(templates[label].iter().map(|v| v * amplitude));
            wave.extend(std::iter::repeat_n(0.0, s.gap_frames * f));
        }
        wave.extend(std::iter::repeat_n(0.0, s.tail_frames * f));
        for v in &mut wave {
            let noise: f64 = rng.sample(StandardNormal);
            *v = (*v + s.noise_std * noise).clamp(-1.0, 1.0);
        }
        wave
    }

    pub fn random_sentence<R: Rng + ?Sized>(&self, rng: &mut R) -> String {
        let words = lexicon();
        let n = rng.random_range(self.min_words..=self.max_words.max(self.min_words));
        (0..n).map(|_| words.choose(rng).expect("lexicon is non-empty").as_str()).collect::<Vec<_>>().join(" ")
    }

    pub fn utterance<R: Rng + ?Sized>(&self, id: impl Into<String>, text: &str, rng: &mut R) -> AudioSample {
        AudioSample::new(id, self.render(text, rng), crate::metrics::normalize_str(text))
    }

    pub fn training_set(&self) -> Vec<Example> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.data_seed);
        (0..self.train_size)
            .map(|_| {
                let text = self.random_sentence(&mut rng);
                let wave = self.render(&text, &mut rng);
                (wave, AttackTarget::Transcript { text })
            })
            .collect()
    }

    /// `count` held-out utterances of `min_words..=max_words` random words.
    pub fn evaluation_samples(&self, count: usize, min_words: usize, max_words: usize, seed: u64) -> Vec<AudioSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut task = Self { min_words, max_words, ..self.clone() };
        (task.synth.min_amplitude, task.synth.max_amplitude) = self.eval_amplitude;
        (0..count)
            .map(|i| {
                let text = task.random_sentence(&mut rng);
                task.utterance(format!("utt{i:04}"), &text, &mut rng)
            })
            .collect()
    }
}

/// The toy image task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImageTask {
    pub model: ToyClassifierConfig,
    pub training: TrainConfig,
    pub train_size: usize,
    pub template_rms: f64,
    pub noise_std: f64,
    pub template_seed: u64,
    pub data_seed: u64,
}

impl Default for ImageTask {
    fn default() -> Self {
        Self::standard()
    }
}

impl ImageTask {
    pub fn standard() -> Self {
        Self {
            model: ToyClassifierConfig::default(),
            training: TrainConfig {
                epochs: 20,
                batch_size: 16,
                learning_rate: 3e-3,
                grad_clip: 5.0,
                weight_decay: 0.0,
            },
            train_size: 1000,
            template_rms: 0.3,
            noise_std: 0.3,
            template_seed: 77,
            data_seed: 2,
        }
    }

    /// One smooth pattern per class: white noise blurred by a 3x3 box,
    /// scaled to `template_rms`.
    pub fn templates(&self) -> Vec<Vec<f64>> {
        let c = &self.model;
        let mut rng = ChaCha8Rng::seed_from_u64(self.template_seed);
        (0..c.classes)
            .map(|_| {
                let raw: Vec<f64> = (0..c.input_len()).map(|_| rng.sample(StandardNormal)).collect();
                let mut smooth = vec![0.0; raw.len()];
                for ch in 0..c.channels {
                    for y in 0..c.height {
                        for x in 0..c.width {
                            let mut acc = 0.0;
                            let mut n = 0.0;
                            for dy in -1i64..=1 {
                                for dx in -1i64..=1 {
                                    let (yy, xx) = (y as i64 + dy, x as i64 + dx);
                                    if (0..c.height as i64).contains(&yy) && (0..c.width as i64).contains(&xx) {
                                        acc += raw[(ch * c.height + yy as usize) * c.width + xx as usize];
                                        n += 1.0;
                                    }
                                }
                            }
                            smooth[(ch * c.height + y) * c.width + x] = acc / n;
                        }
                    }
                }
                let rms = (smooth.iter().map(|v| v * v).sum::<f64>() / smooth.len() as f64).sqrt();
                smooth.into_iter().map(|v| v / rms * self.template_rms).collect()
            })
            .collect()
    }

    pub fn image<R: Rng + ?Sized>(&self, templates: &[Vec<f64>], class: usize, rng: &mut R) -> Vec<f64> {
        templates[class]
            .iter()
            .map(|&v| {
                let noise: f64 = rng.sample(StandardNormal);
                (v + self.noise_std * noise).clamp(-1.0, 1.0)
            })
            .collect()
    }

    /// `count` labelled images with classes cycling through all classes.
    pub fn labelled_images(&self, count: usize, seed: u64) -> Vec<(Vec<f64>, usize)> {
        let templates = self.templates();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|i| {
                let class = i % self.model.classes;
                (self.image(&templates, class, &mut rng), class)
            })
            .collect()
    }

    pub fn training_set(&self) -> Vec<Example> {
        self.labelled_images(self.train_size, self.data_seed)
            .into_iter()
            .map(|(x, class)| (x, AttackTarget::one_hot(class, self.model.classes).expect("class in range")))
            .collect()
    }
}
