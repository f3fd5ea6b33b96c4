//! Evaluation metrics: word/character error rates, clipped targeted and
//! untargeted success scores, signal-to-noise ratio and top-k ordering
//! accuracy.
//!
//! Everything here is a pure function over borrowed inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Granularity of a token sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Word,
    Char,
}

/// Whether a score rewards reaching a target or leaving the reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SuccessMode {
    Targeted,
    Untargeted,
}

/// Normalized text split into words or characters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    tokens: Vec<String>,
    level: Level,
}

impl TokenSequence {
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Reassembles the normalized text the tokens were cut from.
    pub fn to_text(&self) -> String {
        match self.level {
            Level::Word => self.tokens.join(" "),
            Level::Char => self.tokens.concat(),
        }
    }
}

/// A success score clipped to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuccessScore {
    pub value: f64,
    pub level: Level,
    pub mode: SuccessMode,
}

/// Uppercases, strips punctuation other than apostrophes and collapses
/// whitespace. Punctuation is replaced by a space so hyphenated words split.
pub fn normalize_str(raw: &str) -> String {
    let cleaned: String = raw
        .chars()
        .flat_map(char::to_uppercase)
        .map(|c| if c.is_alphanumeric() || c == '\'' { c } else { ' ' })
        .collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn normalize_text(raw: &str, level: Level) -> TokenSequence {
    let text = normalize_str(raw);
    let tokens = match level {
        Level::Word => text.split(' ').filter(|w| !w.is_empty()).map(str::to_owned).collect(),
        Level::Char => text.chars().map(String::from).collect(),
    };
    TokenSequence { tokens, level }
}

/// Levenshtein distance over arbitrary comparable tokens.
pub fn levenshtein<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> usize {
    if reference.is_empty() {
        return hypothesis.len();
    }
    let mut prev: Vec<usize> = (0..=hypothesis.len()).collect();
    let mut curr = vec![0; hypothesis.len() + 1];
    for (i, r) in reference.iter().enumerate() {
        curr[0] = i + 1;
        for (j, h) in hypothesis.iter().enumerate() {
            let substitution = prev[j] + usize::from(r != h);
            curr[j + 1] = substitution.min(prev[j + 1] + 1).min(curr[j] + 1);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[hypothesis.len()]
}

pub fn edit_distance(reference: &TokenSequence, hypothesis: &TokenSequence) -> Result<usize> {
    check_levels(reference, hypothesis)?;
    Ok(levenshtein(&reference.tokens, &hypothesis.tokens))
}

/// Edit distance divided by the reference length. An empty reference gives
/// 0 against an empty hypothesis and 1 otherwise.
pub fn error_rate(reference: &TokenSequence, hypothesis: &TokenSequence) -> Result<f64> {
    let distance = edit_distance(reference, hypothesis)?;
    if reference.is_empty() {
        return Ok(if hypothesis.is_empty() { 0.0 } else { 1.0 });
    }
    Ok(distance as f64 / reference.len() as f64)
}

/// WER (or CER) of `hypothesis` against `reference`, both raw strings.
pub fn text_error_rate(reference: &str, hypothesis: &str, level: Level) -> f64 {
    let reference = normalize_text(reference, level);
    let hypothesis = normalize_text(hypothesis, level);
    // levels agree by construction
    error_rate(&reference, &hypothesis).unwrap_or(1.0)
}

/// `max(1 - ER(prediction, target), 0)`.
pub fn targeted_success(prediction: &str, target: &str, level: Level) -> Result<SuccessScore> {
    let target = normalize_text(target, level);
    if target.is_empty() {
        return Err(Error::InvalidInput("targeted success needs a non-empty target".into()));
    }
    let rate = error_rate(&target, &normalize_text(prediction, level))?;
    Ok(SuccessScore { value: (1.0 - rate).max(0.0), level, mode: SuccessMode::Targeted })
}

/// `min(ER(prediction, reference), 1)`.
pub fn untargeted_success(prediction: &str, reference: &str, level: Level) -> Result<SuccessScore> {
    let reference = normalize_text(reference, level);
    if reference.is_empty() {
        return Err(Error::InvalidInput("untargeted success needs a non-empty reference".into()));
    }
    let rate = error_rate(&reference, &normalize_text(prediction, level))?;
    Ok(SuccessScore { value: rate.min(1.0), level, mode: SuccessMode::Untargeted })
}

/// Arithmetic mean of per-utterance scores; `None` for an empty slice.
pub fn mean_score(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

pub fn squared_norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum()
}

/// `10 log10(|x|^2 / |delta|^2)`. A silent perturbation yields `+inf`.
pub fn snr_db(signal: &[f64], perturbation: &[f64]) -> Result<f64> {
    if signal.len() != perturbation.len() {
        return Err(Error::InvalidInput(format!(
            "signal has {} samples but perturbation has {}",
            signal.len(),
            perturbation.len()
        )));
    }
    let signal_energy = squared_norm(signal);
    if signal_energy == 0.0 {
        return Err(Error::ZeroSignal);
    }
    let noise_energy = squared_norm(perturbation);
    if noise_energy == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal_energy / noise_energy).log10())
}

/// L-infinity radius whose saturating perturbation (every sample at `±eps`)
/// sits exactly at `target_snr` dB: `|x|_2 10^(-snr/20) / sqrt(N)`.
pub fn epsilon_for_target_snr(signal: &[f64], target_snr: f64) -> Result<f64> {
    if signal.is_empty() {
        return Err(Error::InvalidInput("empty signal".into()));
    }
    if !target_snr.is_finite() {
        return Err(Error::InvalidInput(format!("target SNR {target_snr} is not finite")));
    }
    let norm = squared_norm(signal).sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroSignal);
    }
    Ok(norm * 10f64.powf(-target_snr / 20.0) / (signal.len() as f64).sqrt())
}

/// L2 radius giving exactly `target_snr` dB against `signal`.
pub fn l2_radius_for_target_snr(signal: &[f64], target_snr: f64) -> Result<f64> {
    let norm = squared_norm(signal).sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroSignal);
    }
    Ok(norm * 10f64.powf(-target_snr / 20.0))
}

/// Class indices sorted by decreasing score; ties keep ascending index.
pub fn descending_argsort(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    // stable sort keeps ascending index among equal scores
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    order
}

/// Fraction of the first `k` ranked positions where `output` and `target`
/// agree on the class.
pub fn topk_match_accuracy(output: &[f64], target: &[f64], k: usize) -> Result<f64> {
    if output.len() != target.len() {
        return Err(Error::InvalidInput(format!(
            "output has {} classes but target has {}",
            output.len(),
            target.len()
        )));
    }
    if k == 0 || k > output.len() {
        return Err(Error::InvalidInput(format!("k = {k} outside 1..={}", output.len())));
    }
    let ranked_output = descending_argsort(output);
    let ranked_target = descending_argsort(target);
    let hits = ranked_output[..k].iter().zip(&ranked_target[..k]).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / k as f64)
}

fn check_levels(a: &TokenSequence, b: &TokenSequence) -> Result<()> {
    if a.level != b.level {
        return Err(Error::LevelMismatch { left: a.level, right: b.level });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn words(s: &str) -> TokenSequence {
        normalize_text(s, Level::Word)
    }

    fn chars(s: &str) -> TokenSequence {
        normalize_text(s, Level::Char)
    }

    fn word_ids(a: &TokenSequence, b: &TokenSequence) -> (Vec<u8>, Vec<u8>) {
        let mut vocab: Vec<&String> = Vec::new();
        let mut id = |w| match vocab.iter().position(|v| *v == w) {
            Some(i) => i as u8,
            None => {
                vocab.push(w);
                (vocab.len() - 1) as u8
            }
        };
        let a = a.tokens().iter().map(&mut id).collect();
        let b = b.tokens().iter().map(&mut id).collect();
        (a, b)
    }

    /// Exhaustive recursion over every edit script.
    fn brute_edit(a: &[u8], b: &[u8]) -> usize {
        match (a.split_first(), b.split_first()) {
            (None, _) => b.len(),
            (_, None) => a.len(),
            (Some((x, ra)), Some((y, rb))) => {
                let sub = brute_edit(ra, rb) + usize::from(x != y);
                sub.min(brute_edit(ra, b) + 1).min(brute_edit(a, rb) + 1)
            }
        }
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(words("let me see").tokens(), ["LET", "ME", "SEE"]);
        assert!(words("").is_empty());
        assert_eq!(words("So you are not a grave digger then").len(), 8);
        assert_eq!(words("Don't, stop!").tokens(), ["DON'T", "STOP"]);
        assert_eq!(chars("a b").tokens(), ["A", " ", "B"]);
        assert_eq!(words("pere-Lachaise").tokens(), ["PERE", "LACHAISE"]);
    }

    #[test]
    fn edit_distance_examples() {
        assert_eq!(edit_distance(&words("A B C"), &words("A B C")).unwrap(), 0);
        assert_eq!(edit_distance(&words("A B C"), &words("")).unwrap(), 3);
        assert_eq!(brute_edit(b"KITTEN", b"SITTING"), 3);
        assert_eq!(edit_distance(&chars("kitten"), &chars("sitting")).unwrap(), 3);
        assert!(matches!(edit_distance(&words("a"), &chars("a")), Err(Error::LevelMismatch { .. })));
    }

    #[test]
    fn error_rate_examples() {
        assert_eq!(error_rate(&words("a b c d"), &words("a b c d")).unwrap(), 0.0);
        assert_eq!(error_rate(&words("a b c d"), &words("a x c")).unwrap(), 0.5);
        assert_eq!(error_rate(&words(""), &words("x")).unwrap(), 1.0);
        assert_eq!(error_rate(&words(""), &words("")).unwrap(), 0.0);
        assert!(error_rate(&words("a"), &chars("a")).is_err());
    }

    #[test]
    fn targeted_examples() {
        let t = "one two three four five six seven eight nine ten";
        assert_eq!(targeted_success(t, t, Level::Word).unwrap().value, 1.0);
        let garbage = "q w e r t y u i o p a s d f g h j k";
        let rate = text_error_rate("x y z a b c d e f g", garbage, Level::Word);
        assert!(rate > 1.0);
        assert_eq!(targeted_success(garbage, "x y z a b c d e f g", Level::Word).unwrap().value, 0.0);
        // three substitutions against a ten word target
        let hyp = "one two tree four hive six seven ate nine ten";
        let (a, b) = word_ids(&words(t), &words(hyp));
        assert_eq!(brute_edit(&a, &b), 3);
        let score = targeted_success(hyp, t, Level::Word).unwrap();
        assert!((score.value - 0.7).abs() < 1e-12);
        assert_eq!(score.mode, SuccessMode::Targeted);
        assert!(targeted_success("x", "  ", Level::Word).is_err());
    }

    #[test]
    fn untargeted_examples() {
        let r = "the quick brown fox jumps";
        assert_eq!(untargeted_success(r, r, Level::Word).unwrap().value, 0.0);
        let long = "a b c d e f g";
        assert!(text_error_rate(r, long, Level::Word) >= 1.4);
        assert_eq!(untargeted_success(long, r, Level::Word).unwrap().value, 1.0);
        let s = untargeted_success("the quack brown fix jumps", r, Level::Word).unwrap();
        assert!((s.value - 0.4).abs() < 1e-12);
        assert!(untargeted_success("x", "", Level::Char).is_err());
    }

    #[test]
    fn snr_examples() {
        let x = vec![10.0];
        assert!((snr_db(&x, &[1.0]).unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(snr_db(&[0.3, -0.2], &[0.3, -0.2]).unwrap(), 0.0);
        let x = vec![10.0; 10];
        let d = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        assert!((snr_db(&x, &d).unwrap() - 30.0).abs() < 1e-12);
        assert_eq!(snr_db(&[1.0], &[0.0]).unwrap(), f64::INFINITY);
        assert!(matches!(snr_db(&[0.0], &[1.0]), Err(Error::ZeroSignal)));
        assert!(snr_db(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn epsilon_examples() {
        let x = [1.0; 4];
        assert!((epsilon_for_target_snr(&x, 0.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((epsilon_for_target_snr(&x, 20.0).unwrap() - 0.1).abs() < 1e-15);
        assert!(epsilon_for_target_snr(&[], 20.0).is_err());
        assert!(epsilon_for_target_snr(&x, f64::NAN).is_err());
    }

    #[test]
    fn topk_examples() {
        let out = [0.1, 0.05, 0.05, 0.05, 0.35, 0.2, 0.05, 0.05, 0.05, 0.05];
        let target = [0.0, 0.17, 0.0, 0.0, 0.55, 0.28, 0.0, 0.0, 0.0, 0.0];
        assert!((topk_match_accuracy(&out, &target, 3).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(topk_match_accuracy(&out, &out, 7).unwrap(), 1.0);
        let a = [0.5, 0.5, 0.0, 0.0];
        let b = [0.0, 0.0, 0.5, 0.5];
        assert_eq!(topk_match_accuracy(&a, &b, 2).unwrap(), 0.0);
        assert!(topk_match_accuracy(&a, &b, 5).is_err());
        assert!(topk_match_accuracy(&a, &b, 0).is_err());
    }

    #[test]
    fn argsort_breaks_ties_by_index() {
        assert_eq!(descending_argsort(&[0.2, 0.5, 0.2, 0.5]), vec![1, 3, 0, 2]);
    }

    fn symbols() -> impl Strategy<Value = Vec<u8>> {
        prop::collection::vec(0u8..3, 0..8)
    }

    proptest! {
        #[test]
        fn levenshtein_matches_recursion(a in symbols(), b in symbols()) {
            prop_assert_eq!(levenshtein(&a, &b), brute_edit(&a, &b));
        }

        #[test]
        fn levenshtein_is_a_metric(a in symbols(), b in symbols(), c in symbols()) {
            prop_assert_eq!(levenshtein(&a, &b), levenshtein(&b, &a));
            prop_assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
            prop_assert_eq!(levenshtein(&a, &b) == 0, a == b);
        }

        #[test]
        fn success_scores_are_clipped(p in "[a-c ]{0,30}", t in "[a-c]{1,3}( [a-c]{1,3}){0,4}") {
            for level in [Level::Word, Level::Char] {
                let ts = targeted_success(&p, &t, level).unwrap().value;
                let us = untargeted_success(&p, &t, level).unwrap().value;
                prop_assert!((0.0..=1.0).contains(&ts));
                prop_assert!((0.0..=1.0).contains(&us));
            }
        }

        #[test]
        fn snr_scales_by_twenty_db(
            x in prop::collection::vec(-1.0f64..1.0, 1..64),
            seed in prop::collection::vec(-1.0f64..1.0, 64),
        ) {
            let d: Vec<f64> = seed[..x.len()].to_vec();
            prop_assume!(squared_norm(&x) > 1e-6 && squared_norm(&d) > 1e-6);
            let tenth: Vec<f64> = d.iter().map(|v| v / 10.0).collect();
            let shift = snr_db(&x, &tenth).unwrap() - snr_db(&x, &d).unwrap();
            prop_assert!((shift - 20.0).abs() < 1e-9);
        }

        #[test]
        fn topk_invariant_under_monotone_rescaling(
            out in prop::collection::vec(0.0f64..1.0, 2..12),
            target_seed in prop::collection::vec(0.0f64..1.0, 12),
            scale in 0.1f64..10.0,
            shift in -5.0f64..5.0,
        ) {
            let target = &target_seed[..out.len()];
            let rescaled: Vec<f64> = out.iter().map(|v| (scale * v + shift).exp()).collect();
            for k in 1..=out.len() {
                prop_assert_eq!(
                    topk_match_accuracy(&out, target, k).unwrap(),
                    topk_match_accuracy(&rescaled, target, k).unwrap()
                );
            }
        }

        #[test]
        fn normalization_is_idempotent(raw in "\\PC{0,40}") {
            for level in [Level::Word, Level::Char] {
                let once = normalize_text(&raw, level);
                prop_assert_eq!(normalize_text(&once.to_text(), level), once);
            }
        }
    }
}
