//! Plug a new model type into the registry. Any `DifferentiableModel` can be
//! attacked and evaluated by the harness; here a wrapper renames a toy model
//! and gives it a lineage so transfer cells against its siblings are
//! flagged.

use serde_json::{json, Value};
use transfer_attack::models::{ModelRegistry, ToyCtcModel};
use transfer_attack::synth::SpeechTask;

fn main() -> transfer_attack::Result<()> {
    let mut registry = ModelRegistry::with_toy_adapters();
    registry.register_adapter(
        "family",
        Box::new(|config: &Value| {
            let seed = config["seed"].as_u64().unwrap_or(0);
            let model = ToyCtcModel::new(format!("family-{seed}"), SpeechTask::standard().model, seed)
                .with_lineage(Some("family".into()));
            Ok(Box::new(model))
        }),
    )?;
    println!("adapters: {:?}", registry.names());
    let model = registry.load_model("family", &json!({"seed": 4}))?;
    println!("{} (lineage {:?})", model.name(), model.lineage());
    match registry.load_model("missing", &Value::Null) {
        Err(e) => println!("expected error: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
