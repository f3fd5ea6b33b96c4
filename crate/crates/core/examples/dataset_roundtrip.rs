//! Export adversarial examples as WAV files plus a JSONL manifest and read
//! them back.
//!
//! cargo run --release --example dataset_roundtrip -- /tmp/adv-dataset

use std::path::PathBuf;

use serde_json::json;
use transfer_attack::attack::AttackConfig;
use transfer_attack::harness::{export_dataset, import_dataset, run_attack_batch};
use transfer_attack::models::load_model;
use transfer_attack::synth::SpeechTask;
use transfer_attack::targets::TargetCorpus;

fn main() -> transfer_attack::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("adv-dataset"));
    let proxies = vec![load_model("toy-ctc", &json!({"name": "ctc-1", "seed": 1}))?];
    let samples = SpeechTask::standard().evaluation_samples(3, 3, 6, 5);
    let config = AttackConfig { iterations: 100, ..AttackConfig::default() };
    let batch = run_attack_batch(&samples, &proxies, None, &TargetCorpus::librispeech_candidates(), &config, 0)?;

    let records = export_dataset(&batch.examples, &dir)?;
    println!("wrote {} records to {}", records.len(), dir.display());
    for r in &records {
        println!("  {} {:.1} dB  {:?} -> {:?}", r.id, r.snr_db, r.transcript, r.target.text().unwrap_or_default());
    }

    let back = import_dataset(&dir)?;
    let worst = batch
        .examples
        .iter()
        .zip(&back)
        .flat_map(|(a, b)| a.adversarial().into_iter().zip(b.adversarial()))
        .map(|(u, v)| (u - v).abs())
        .fold(0.0, f64::max);
    println!("max waveform difference after import: {:.2} LSB", worst * 32767.0);
    Ok(())
}
