//! Each toy CTC model attacks a small batch in turn; every model then
//! transcribes every example.
//!
//! cargo run --release --example transfer_matrix

use serde_json::json;
use transfer_attack::attack::AttackConfig;
use transfer_attack::harness::{evaluate_transfer, render_text, run_attack_batch, ReportData, ReportFormat};
use transfer_attack::models::{load_model, DifferentiableModel};
use transfer_attack::synth::SpeechTask;
use transfer_attack::targets::TargetCorpus;

fn main() -> transfer_attack::Result<()> {
    let mut pool: Vec<Box<dyn DifferentiableModel>> = (1..=3)
        .map(|s| load_model("toy-ctc", &json!({"name": format!("ctc-{s}"), "seed": s})))
        .collect::<transfer_attack::Result<_>>()?;
    let samples = SpeechTask::standard().evaluation_samples(4, 4, 8, 3);
    let corpus = TargetCorpus::librispeech_candidates();
    let config = AttackConfig { linf_radius: 0.05, iterations: 500, ..AttackConfig::default() };

    let mut examples = Vec::new();
    for proxy in &pool {
        let batch = run_attack_batch(&samples, std::slice::from_ref(proxy), None, &corpus, &config, 0)?;
        examples.extend(batch.examples.into_iter().map(|mut e| {
            e.id = format!("{}-{}", proxy.name(), e.id);
            e
        }));
    }
    let matrix = evaluate_transfer(&mut pool, &examples, 0)?;
    print!("{}", render_text(&ReportData::Transfer(matrix), ReportFormat::Md)?);
    Ok(())
}
