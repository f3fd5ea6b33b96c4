//! Render results as CSV, Markdown and PNG. The loss curves follow one
//! attack on a proxy and how the same perturbation scores on two other
//! models.
//!
//! cargo run --release --example reports -- /tmp/reports

use std::path::PathBuf;

use serde_json::json;
use transfer_attack::attack::AttackConfig;
use transfer_attack::harness::{loss_curves, render_report, render_text, ReportData, ReportFormat};
use transfer_attack::models::{load_model, DifferentiableModel};
use transfer_attack::synth::SpeechTask;
use transfer_attack::targets::{assign_length_matched_targets, TargetCorpus};

fn main() -> transfer_attack::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("reports"));
    std::fs::create_dir_all(&dir).map_err(|e| transfer_attack::Error::InvalidInput(e.to_string()))?;

    let ctc = |s: u64| load_model("toy-ctc", &json!({"name": format!("ctc-{s}"), "seed": s}));
    let proxies = vec![ctc(1)?];
    let private: Vec<Box<dyn DifferentiableModel>> = vec![ctc(2)?, ctc(3)?];
    let samples = SpeechTask::standard().evaluation_samples(1, 5, 8, 99);
    let target = &assign_length_matched_targets(&samples, &TargetCorpus::librispeech_candidates())[0];
    let config = AttackConfig { linf_radius: 0.05, iterations: 1000, checkpoint_every: 50, ..AttackConfig::default() };
    let data = ReportData::Loss(loss_curves(&proxies, &private, &samples[0], target, &config)?);

    for format in ReportFormat::ALL {
        let path = dir.join(format!("loss.{}", format.extension()));
        render_report(&data, format, &path)?;
        println!("wrote {}", path.display());
    }
    print!("{}", render_text(&data, ReportFormat::Md)?);
    Ok(())
}
