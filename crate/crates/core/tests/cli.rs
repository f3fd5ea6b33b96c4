use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use transfer_attack::harness::ExperimentConfig;

const BIN: &str = env!("CARGO_BIN_EXE_transfer-attack");

// untrained models keep these runs fast
const TOY: &str = r#"
formats = ["csv", "md"]
[[models]]
name = "ctc-1"
config = { seed = 1, train = false }
[[models]]
name = "ctc-2"
config = { seed = 2, train = false }
[[models]]
name = "ctc-3"
config = { seed = 3, train = false }
[[models]]
name = "cls-1"
adapter = "toy-classifier"
config = { seed = 1, train = false }
[[models]]
name = "cls-2"
adapter = "toy-classifier"
config = { seed = 2, train = false }
[attack]
iterations = 20
[data]
samples = 2
min_words = 2
max_words = 4
"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    let config = dir.join("toy.toml");
    if !config.exists() {
        fs::write(&config, TOY).unwrap();
    }
    Command::new(BIN).args(args).arg("--config").arg(&config).env_remove("TRANSFER_ATTACK_MODEL_DIR").output().unwrap()
}

fn ok(output: &Output) {
    assert!(
        output.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        output.status.code(),
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

#[test]
fn help_lists_every_key_with_defaults() {
    for sub in
        ["attack", "evaluate", "matrix", "precision-sweep", "prefix-attack", "export", "import", "report", "train-toys"]
    {
        let out = Command::new(BIN).args([sub, "--help"]).output().unwrap();
        assert!(out.status.success());
        let help = String::from_utf8(out.stdout).unwrap();
        for key in [
            "linf_radius = 0.015",
            "reg_const = 10.0",
            "learning_rate = 0.0005",
            "iterations = 10000",
            "[sweep]",
            "steps_per_k = 1000",
            "[prefix]",
            "target_snr = 30.0",
            "data.corpus",
            "data.dataset",
            "0005",
        ] {
            assert!(help.contains(key), "`{sub} --help` lacks {key}");
        }
    }
}

#[test]
fn configuration_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("o");
    let out = out_dir.to_str().unwrap();
    for args in [
        vec!["attack", "--out", out, "--set", "attack.unknown=1"],
        vec!["attack", "--out", out, "--set", "proxies=[\"nobody\"]"],
        vec!["attack", "--out", out, "--set", "formats=[\"pdf\"]"],
        vec!["evaluate", "--out", out, "--data", "/does/not/exist"],
    ] {
        let output = run(dir.path(), &args);
        assert_eq!(output.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&output.stderr));
    }
    let missing =
        Command::new(BIN).args(["attack", "--config", "/does/not/exist.toml", "--out", out]).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn attack_is_reproducible_and_writes_its_config() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&run(dir.path(), &["attack", "--seed", "7", "--out", a.to_str().unwrap()]));
    ok(&run(dir.path(), &["attack", "--seed", "7", "--workers", "2", "--out", b.to_str().unwrap()]));
    for file in ["dataset/manifest.jsonl", "traces.jsonl"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file} differs");
    }

    let resolved = a.join("resolved_config.toml");
    let config = ExperimentConfig::resolve(Some(&resolved), &[], None).unwrap();
    assert_eq!(config.seed, 7);
    assert_eq!(config.attack.seed, 7);
    assert_eq!(config.attack.iterations, 20);

    let c = dir.path().join("c");
    ok(&run(dir.path(), &["attack", "--seed", "8", "--out", c.to_str().unwrap()]));
    assert_ne!(fs::read(a.join("traces.jsonl")).unwrap(), fs::read(c.join("traces.jsonl")).unwrap());
}

#[test]
fn dataset_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let attack = dir.path().join("attack");
    ok(&run(dir.path(), &["attack", "--out", attack.to_str().unwrap()]));
    let data = attack.join("dataset");

    let eval = dir.path().join("eval");
    ok(&run(dir.path(), &["evaluate", "--data", data.to_str().unwrap(), "--out", eval.to_str().unwrap()]));
    let csv = fs::read_to_string(eval.join("transfer.csv")).unwrap();
    assert!(csv.starts_with("model,proxy,clean_wer,targeted_word,targeted_char,untargeted_word,examples,flagged"));
    assert_eq!(csv.lines().count(), 1 + 3);
    assert!(eval.join("transfer.md").exists());
    assert!(eval.join("transcriptions.jsonl").exists());

    let export = dir.path().join("export");
    ok(&run(dir.path(), &["export", "--data", data.to_str().unwrap(), "--out", export.to_str().unwrap()]));
    assert_eq!(
        fs::read(data.join("manifest.jsonl")).unwrap(),
        fs::read(export.join("dataset/manifest.jsonl")).unwrap()
    );

    let import = dir.path().join("import");
    ok(&run(dir.path(), &["import", "--data", data.to_str().unwrap(), "--out", import.to_str().unwrap()]));
    assert_eq!(fs::read_to_string(import.join("examples.jsonl")).unwrap().lines().count(), 2);

    let report = dir.path().join("report");
    let input = eval.join("results.json");
    ok(&run(
        dir.path(),
        &["report", "--input", input.to_str().unwrap(), "--out", report.to_str().unwrap(), "--set", "formats=[\"md\"]"],
    ));
    assert_eq!(
        fs::read_to_string(report.join("report.md")).unwrap(),
        fs::read_to_string(eval.join("transfer.md")).unwrap()
    );
}

#[test]
fn matrix_csv_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&run(dir.path(), &["matrix", "--seed", "3", "--out", a.to_str().unwrap(), "--set", "validation=\"\""]));
    ok(&run(dir.path(), &["matrix", "--seed", "3", "--out", b.to_str().unwrap(), "--set", "validation=\"\""]));
    let csv = fs::read_to_string(a.join("transfer.csv")).unwrap();
    assert_eq!(csv, fs::read_to_string(b.join("transfer.csv")).unwrap());
    // 3 proxies x 3 models
    assert_eq!(csv.lines().count(), 1 + 9);
}

#[test]
fn precision_sweep_over_ten_ks() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let output = run(
        dir.path(),
        &[
            "precision-sweep",
            "--ks",
            "1..10",
            "--repeats",
            "3",
            "--out",
            out.to_str().unwrap(),
            "--set",
            "sweep.n_inputs=2",
            "--set",
            "sweep.images=20",
            "--set",
            "sweep.steps_per_k=5",
            "--set",
            "formats=[\"csv\",\"png\"]",
        ],
    );
    ok(&output);
    let csv = fs::read_to_string(out.join("precision.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("k,white_box,transfer"));
    assert_eq!(csv.lines().count(), 11);
    assert!(fs::metadata(out.join("precision.png")).unwrap().len() > 0);
    let resolved = fs::read_to_string(out.join("resolved_config.toml")).unwrap();
    assert!(resolved.contains("repeats = 3"));
}

#[test]
fn train_toys_writes_loadable_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("models");
    ok(&run(dir.path(), &["train-toys", "--out", out.to_str().unwrap()]));
    let listing = out.join("models.toml");
    let text = fs::read_to_string(&listing).unwrap();
    assert_eq!(text.matches("[[models]]").count(), 5);

    // the listing drops straight into a config
    let attack = dir.path().join("attack");
    let output = Command::new(BIN)
        .args(["attack", "--config"])
        .arg(&listing)
        .args(["--out", attack.to_str().unwrap(), "--set", "attack.iterations=5", "--set", "data.samples=1"])
        .output()
        .unwrap();
    ok(&output);
}
