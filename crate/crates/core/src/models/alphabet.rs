use serde::{Deserialize, Serialize};

use crate::metrics::normalize_str;

/// Character vocabulary with the CTC blank at index 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alphabet {
    symbols: Vec<char>,
}

pub const BLANK: usize = 0;

impl Default for Alphabet {
    /// Blank, space, `A`-`Z` and the apostrophe.
    fn default() -> Self {
        let mut symbols = vec!['\u{0}', ' '];
        symbols.extend('A'..='Z');
        symbols.push('\'');
        Self { symbols }
    }
}

impl Alphabet {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbol(&self, label: usize) -> Option<char> {
        self.symbols.get(label).copied().filter(|_| label != BLANK)
    }

    pub fn label(&self, symbol: char) -> Option<usize> {
        self.symbols.iter().skip(1).position(|&c| c == symbol).map(|i| i + 1)
    }

    /// Normalizes `text` and maps it to labels, dropping characters the
    /// alphabet does not cover.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        let kept: String = normalize_str(text).chars().filter(|c| self.label(*c).is_some()).collect();
        kept.split_whitespace().collect::<Vec<_>>().join(" ").chars().filter_map(|c| self.label(c)).collect()
    }

    pub fn decode(&self, labels: &[usize]) -> String {
        let raw: String = labels.iter().filter_map(|&l| self.symbol(l)).collect();
        raw.split_whitespace().collect::<Vec<_>>().join(" ")
    }
}
