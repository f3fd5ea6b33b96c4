//! Targeted L-infinity attack on one toy CTC model, early-stopped on a
//! second one.
//!
//! cargo run --release --example white_box_attack

use serde_json::json;
use transfer_attack::attack::{cw_attack, AttackConfig};
use transfer_attack::metrics::{targeted_success, Level};
use transfer_attack::models::load_model;
use transfer_attack::synth::SpeechTask;
use transfer_attack::targets::{assign_length_matched_targets, TargetCorpus};

fn main() -> transfer_attack::Result<()> {
    env_logger::init();
    let mut proxies = vec![load_model("toy-ctc", &json!({"name": "proxy", "seed": 1}))?];
    let mut validation = load_model("toy-ctc", &json!({"name": "validation", "seed": 2}))?;

    let samples = SpeechTask::standard().evaluation_samples(3, 5, 8, 99);
    let targets = assign_length_matched_targets(&samples, &TargetCorpus::librispeech_candidates());
    let config = AttackConfig { linf_radius: 0.05, iterations: 1000, ..AttackConfig::default() };

    for (sample, target) in samples.iter().zip(&targets) {
        let result = cw_attack(&mut proxies, Some(validation.as_mut()), sample, target, &config)?;
        let heard = proxies[0].predict(&result.delta.apply(&sample.waveform))?.as_text();
        let wanted = target.text().unwrap_or_default();
        println!("clean  : {}", sample.transcript);
        println!("target : {wanted}");
        println!("heard  : {heard}");
        println!(
            "char success {:.2}, SNR {:.1} dB, best checkpoint {}\n",
            targeted_success(&heard, wanted, Level::Char)?.value,
            result.achieved_snr,
            result.best_iteration
        );
    }
    Ok(())
}
