//! Train a toy CTC model, save a checkpoint and load it back through the
//! registry.
//!
//! cargo run --release --example train_models

use serde_json::json;
use transfer_attack::models::checkpoint::Checkpoint;
use transfer_attack::models::train::train_model;
use transfer_attack::models::{load_model, ToyCtcModel};
use transfer_attack::synth::SpeechTask;

fn main() -> transfer_attack::Result<()> {
    let task = SpeechTask::standard();
    let mut model = ToyCtcModel::new("ctc-7", task.model.clone(), 7);
    let losses = train_model(&mut model, &task.training_set(), &task.training, 7)?;
    println!("epoch losses: {:.3?}", losses);

    let path = std::env::temp_dir().join("ctc-7.json");
    Checkpoint::from_ctc(&model).save(&path)?;
    let mut loaded = load_model("toy-ctc", &json!({"checkpoint": path, "name": "ctc-7"}))?;

    for sample in task.evaluation_samples(3, 3, 6, 1) {
        println!("{:<40} -> {}", sample.transcript, loaded.predict(&sample.waveform)?.as_text());
    }
    Ok(())
}
