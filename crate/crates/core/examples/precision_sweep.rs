//! Top-k targeted attacks on a toy classifier: white-box success stays high
//! while transfer to an independently trained twin fades as k grows.
//!
//! cargo run --release --example precision_sweep

use serde_json::json;
use transfer_attack::attack::{AttackConfig, Norm};
use transfer_attack::harness::{run_precision_sweep, SweepConfig};
use transfer_attack::models::load_model;
use transfer_attack::synth::ImageTask;

fn main() -> transfer_attack::Result<()> {
    let proxy = load_model("toy-classifier", &json!({"name": "proxy", "seed": 1}))?;
    let private = load_model("toy-classifier", &json!({"name": "private", "seed": 2}))?;
    let images: Vec<Vec<f64>> = ImageTask::standard().labelled_images(100, 99).into_iter().map(|(x, _)| x).collect();
    let config = SweepConfig {
        attack: AttackConfig {
            norm: Norm::L2,
            l2_radius: 4.0,
            learning_rate: 0.01,
            stochastic_proxy: false,
            ..AttackConfig::default()
        },
        steps_per_k: 500,
        seed: 0,
    };
    let curve = run_precision_sweep(proxy.as_ref(), private.as_ref(), &images, &[1, 3, 5, 9], 8, 1, &config, 0)?;
    println!(" k  white-box  transfer");
    for i in 0..curve.ks.len() {
        println!("{:>2}  {:>9.3}  {:>8.3}", curve.ks[i], curve.white_box[i], curve.transfer[i]);
    }
    println!("chance: {:.3}", 1.0 / curve.num_classes as f64);
    Ok(())
}
