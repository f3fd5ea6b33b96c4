//! Attack targets: length-matched transcripts, prefix-word targets and
//! top-k class distributions.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::audio::AudioSample;
use crate::error::{Error, Result};
use crate::metrics::{descending_argsort, normalize_str};

const CANDIDATE_TARGETS: &str = include_str!("../data/candidate_targets.txt");

/// What the attacker wants the model to output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackTarget {
    /// A full replacement transcript.
    Transcript { text: String },
    /// The original transcript with `word` prepended.
    Prefix { text: String, word: String },
    /// A probability vector with exactly `k` nonzero entries.
    ClassDistribution { distribution: Vec<f64>, k: usize },
}

impl AttackTarget {
    pub fn transcript(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if normalize_str(&text).is_empty() {
            return Err(Error::InvalidInput("transcript target is empty".into()));
        }
        Ok(AttackTarget::Transcript { text })
    }

    /// Validates a class distribution: nonnegative, unit mass within 1e-9,
    /// and `k` equal to the number of nonzero entries.
    pub fn class_distribution(distribution: Vec<f64>) -> Result<Self> {
        if distribution.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidInput("class distribution has negative or non-finite entries".into()));
        }
        let mass: f64 = distribution.iter().sum();
        if (mass - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("class distribution sums to {mass}, not 1")));
        }
        let k = distribution.iter().filter(|p| **p > 0.0).count();
        Ok(AttackTarget::ClassDistribution { distribution, k })
    }

    /// One-hot distribution on `class` out of `num_classes`.
    pub fn one_hot(class: usize, num_classes: usize) -> Result<Self> {
        if class >= num_classes {
            return Err(Error::InvalidInput(format!("class {class} out of range for {num_classes} classes")));
        }
        let mut distribution = vec![0.0; num_classes];
        distribution[class] = 1.0;
        Ok(AttackTarget::ClassDistribution { distribution, k: 1 })
    }

    /// Target text for the transcript-style kinds.
    pub fn text(&self) -> Option<&str> {
        match self {
            AttackTarget::Transcript { text } | AttackTarget::Prefix { text, .. } => Some(text),
            AttackTarget::ClassDistribution { .. } => None,
        }
    }

    pub fn distribution(&self) -> Option<(&[f64], usize)> {
        match self {
            AttackTarget::ClassDistribution { distribution, k } => Some((distribution, *k)),
            _ => None,
        }
    }
}

/// Ordered, duplicate-free list of candidate target sentences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetCorpus {
    candidates: Vec<String>,
}

impl TargetCorpus {
    pub fn new(candidates: Vec<String>) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::InvalidInput("target corpus is empty".into()));
        }
        for (i, c) in candidates.iter().enumerate() {
            if normalize_str(c).is_empty() {
                return Err(Error::InvalidInput(format!("candidate {i} is blank")));
            }
            if candidates[..i].contains(c) {
                return Err(Error::InvalidInput(format!("duplicate candidate `{c}`")));
            }
        }
        Ok(Self { candidates })
    }

    /// One sentence per line; blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        Self::new(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_owned).collect())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// The thirteen test-other sentences used as attack targets.
    pub fn librispeech_candidates() -> Self {
        Self::parse(CANDIDATE_TARGETS).expect("bundled corpus is valid")
    }

    pub fn candidates(&self) -> &[String] {
        &self.candidates
    }

    /// Index of the candidate closest in normalized character length;
    /// the earliest wins a tie.
    pub fn closest_by_length(&self, text: &str) -> usize {
        let len = normalized_len(text);
        self.candidates
            .iter()
            .enumerate()
            .min_by_key(|(i, c)| (normalized_len(c).abs_diff(len), *i))
            .map(|(i, _)| i)
            .expect("corpus is non-empty")
    }
}

fn normalized_len(text: &str) -> usize {
    normalize_str(text).chars().count()
}

/// Assigns each utterance the candidate whose length is closest to its
/// reference transcript. The result is index-aligned with `utterances`.
pub fn assign_length_matched_targets(utterances: &[AudioSample], corpus: &TargetCorpus) -> Vec<AttackTarget> {
    utterances
        .iter()
        .map(|u| AttackTarget::Transcript { text: corpus.candidates[corpus.closest_by_length(&u.transcript)].clone() })
        .collect()
}

pub fn make_prefix_target(transcript: &str, word: &str) -> Result<AttackTarget> {
    let word = word.trim();
    if word.is_empty() || word.split_whitespace().count() != 1 {
        return Err(Error::InvalidInput(format!("prefix word `{word}` must be a single token")));
    }
    let transcript = transcript.trim();
    let text = if transcript.is_empty() { word.to_owned() } else { format!("{word} {transcript}") };
    Ok(AttackTarget::Prefix { text, word: word.to_owned() })
}

fn first_word(text: &str) -> Option<String> {
    normalize_str(text).split(' ').next().filter(|w| !w.is_empty()).map(str::to_owned)
}

/// True iff the first word of `prediction` is `word` (case-insensitive).
pub fn prefix_success(prediction: &str, word: &str) -> bool {
    match (first_word(prediction), first_word(word)) {
        (Some(p), Some(w)) => p == w,
        _ => false,
    }
}

/// Drops utterances whose transcript already starts with `word`.
pub fn filter_prefix_eligible<'a>(utterances: &'a [AudioSample], word: &str) -> Vec<&'a AudioSample> {
    utterances.iter().filter(|u| !prefix_success(&u.transcript, word)).collect()
}

/// Uniform point on the unit (k-1)-simplex via normalized unit exponentials.
pub fn sample_simplex<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::InvalidInput("simplex dimension must be at least 1".into()));
    }
    let draws: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = draws.iter().sum();
    Ok(draws.into_iter().map(|d| d / total).collect())
}

/// Places `masses`, sorted in decreasing order, on the ordered `classes`
/// so the target's descending argsort starts with `classes`.
pub fn ordered_class_target(num_classes: usize, classes: &[usize], masses: &[f64]) -> Result<AttackTarget> {
    if classes.len() != masses.len() || classes.is_empty() {
        return Err(Error::InvalidInput("need one mass per selected class".into()));
    }
    let mut sorted = masses.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut distribution = vec![0.0; num_classes];
    for (&class, &mass) in classes.iter().zip(&sorted) {
        let slot = distribution
            .get_mut(class)
            .ok_or_else(|| Error::InvalidInput(format!("class {class} out of range for {num_classes} classes")))?;
        if *slot != 0.0 {
            return Err(Error::InvalidInput(format!("class {class} selected twice")));
        }
        *slot = mass;
    }
    AttackTarget::class_distribution(distribution)
}

/// Uniform ordered k-subset of `num_classes` classes with simplex masses.
pub fn sample_topk_target<R: Rng + ?Sized>(num_classes: usize, k: usize, rng: &mut R) -> Result<AttackTarget> {
    if k == 0 || k > num_classes {
        return Err(Error::InvalidInput(format!("k = {k} outside 1..={num_classes}")));
    }
    let mut classes: Vec<usize> = (0..num_classes).collect();
    let (chosen, _) = classes.partial_shuffle(rng, k);
    let chosen = chosen.to_vec();
    let masses = sample_simplex(k, rng)?;
    let target = ordered_class_target(num_classes, &chosen, &masses)?;
    debug_assert_eq!(&descending_argsort(target.distribution().unwrap().0)[..k], &chosen[..]);
    Ok(target)
}
