use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::batch::AdversarialExample;
use super::worker_pool;
use crate::error::{Error, Result};
use crate::metrics::{mean_score, targeted_success, text_error_rate, untargeted_success, Level};
use crate::models::DifferentiableModel;

/// What one model heard on one example. `None` marks a failed transcription.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptionRecord {
    pub example: String,
    pub model: String,
    pub clean: Option<String>,
    pub adversarial: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellRates {
    pub targeted_word: f64,
    pub targeted_char: f64,
    pub untargeted_word: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferCell {
    /// `None` when a transcription in this cell failed.
    pub rates: Option<CellRates>,
    pub examples: usize,
    /// The model took part in generating these examples (it is a proxy or
    /// the validation model, or shares a lineage with a proxy), so the cell
    /// does not measure transfer.
    pub flagged: bool,
}

/// Success rates of every proxy ensemble's examples on every model. Rows
/// follow the order in which ensembles first appear among the examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub proxies: Vec<String>,
    pub models: Vec<String>,
    pub cells: Vec<Vec<TransferCell>>,
    /// Word error rate of each model on the clean audio of all examples.
    pub clean_wer: Vec<Option<f64>>,
    pub transcriptions: Vec<TranscriptionRecord>,
}

impl TransferMatrix {
    pub fn cell(&self, proxy: &str, model: &str) -> Option<&TransferCell> {
        let row = self.proxies.iter().position(|p| p == proxy)?;
        let col = self.models.iter().position(|m| m == model)?;
        Some(&self.cells[row][col])
    }
}

fn transcribe(model: &mut dyn DifferentiableModel, input: &[f64]) -> Option<String> {
    match model.predict(input) {
        Ok(p) => Some(p.as_text()),
        Err(e) => {
            log::warn!("model `{}` failed to transcribe: {e}", model.name());
            None
        }
    }
}

fn rates(example: &AdversarialExample, heard: &str) -> Result<CellRates> {
    let target = example
        .target
        .text()
        .ok_or_else(|| Error::InvalidInput(format!("example `{}` has no text target", example.id)))?;
    Ok(CellRates {
        targeted_word: targeted_success(heard, target, Level::Word)?.value,
        targeted_char: targeted_success(heard, target, Level::Char)?.value,
        untargeted_word: untargeted_success(heard, &example.clean.transcript, Level::Word)?.value,
    })
}

/// Has every model transcribe every example, clean and perturbed, then
/// aggregates per (proxy ensemble, model) cell. Each model is confined to
/// one worker.
pub fn evaluate_transfer(
    models: &mut [Box<dyn DifferentiableModel>],
    examples: &[AdversarialExample],
    workers: usize,
) -> Result<TransferMatrix> {
    if examples.is_empty() {
        return Err(Error::InvalidInput("no examples to evaluate".into()));
    }
    let mut proxies: Vec<String> = Vec::new();
    for e in examples {
        if e.proxies.is_empty() {
            return Err(Error::InvalidInput(format!("example `{}` names no proxy", e.id)));
        }
        if !proxies.contains(&e.proxy_label()) {
            proxies.push(e.proxy_label());
        }
    }
    let names: Vec<String> = models.iter().map(|m| m.name().to_owned()).collect();
    let lineages: Vec<Option<String>> = models.iter().map(|m| m.lineage().map(str::to_owned)).collect();
    let lineage_of = |name: &str| names.iter().position(|n| n == name).and_then(|i| lineages[i].clone());

    let heard: Vec<Vec<(Option<String>, Option<String>)>> = worker_pool(workers)?.install(|| {
        models
            .par_iter_mut()
            .map(|model| {
                examples
                    .iter()
                    .map(|e| {
                        let clean = transcribe(model.as_mut(), &e.clean.waveform);
                        let adv = transcribe(model.as_mut(), &e.adversarial());
                        (clean, adv)
                    })
                    .collect()
            })
            .collect()
    });

    let mut cells = Vec::with_capacity(proxies.len());
    for label in &proxies {
        let members: Vec<usize> = (0..examples.len()).filter(|&i| &examples[i].proxy_label() == label).collect();
        let first = &examples[members[0]];
        let mut row = Vec::with_capacity(models.len());
        for (col, name) in names.iter().enumerate() {
            let shares_lineage =
                lineages[col].as_ref().is_some_and(|l| first.proxies.iter().any(|p| lineage_of(p).as_ref() == Some(l)));
            let flagged = first.proxies.contains(name) || first.validation.as_ref() == Some(name) || shares_lineage;
            let mut scores = Vec::with_capacity(members.len());
            for &i in &members {
                match &heard[col][i].1 {
                    Some(text) => scores.push(rates(&examples[i], text)?),
                    None => break,
                }
            }
            let rates = (scores.len() == members.len()).then(|| CellRates {
                targeted_word: mean_score(&scores.iter().map(|s| s.targeted_word).collect::<Vec<_>>()).unwrap_or(0.0),
                targeted_char: mean_score(&scores.iter().map(|s| s.targeted_char).collect::<Vec<_>>()).unwrap_or(0.0),
                untargeted_word: mean_score(&scores.iter().map(|s| s.untargeted_word).collect::<Vec<_>>())
                    .unwrap_or(0.0),
            });
            row.push(TransferCell { rates, examples: members.len(), flagged });
        }
        cells.push(row);
    }

    let clean_wer = heard
        .iter()
        .map(|per_model| {
            let errors: Option<Vec<f64>> = per_model
                .iter()
                .zip(examples)
                .map(|((clean, _), e)| clean.as_ref().map(|c| text_error_rate(&e.clean.transcript, c, Level::Word)))
                .collect();
            errors.and_then(|v| mean_score(&v))
        })
        .collect();

    let mut transcriptions = Vec::with_capacity(names.len() * examples.len());
    for (col, name) in names.iter().enumerate() {
        for (i, e) in examples.iter().enumerate() {
            transcriptions.push(TranscriptionRecord {
                example: e.id.clone(),
                model: name.clone(),
                clean: heard[col][i].0.clone(),
                adversarial: heard[col][i].1.clone(),
            });
        }
    }

    Ok(TransferMatrix { proxies, models: names, cells, clean_wer, transcriptions })
}
