//! Make every model of a pool hear "BUT" first, then check which of the
//! other models hear it too.
//!
//! cargo run --release --example prefix_attack

use serde_json::json;
use transfer_attack::harness::{render_text, run_prefix_experiment, PrefixConfig, ReportData, ReportFormat};
use transfer_attack::models::{load_model, DifferentiableModel};
use transfer_attack::synth::SpeechTask;

fn main() -> transfer_attack::Result<()> {
    let pool: Vec<Box<dyn DifferentiableModel>> = (1..=3)
        .map(|s| load_model("toy-ctc", &json!({"name": format!("ctc-{s}"), "seed": s})))
        .collect::<transfer_attack::Result<_>>()?;
    let samples = SpeechTask::standard().evaluation_samples(10, 2, 8, 7);
    let mut config = PrefixConfig::default();
    config.attack.iterations = 300;
    let result = run_prefix_experiment(&pool, &samples, &config, 0)?;
    print!("{}", render_text(&ReportData::Prefix(result), ReportFormat::Md)?);
    Ok(())
}
