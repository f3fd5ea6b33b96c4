//! Command-line front end. Every subcommand resolves an
//! [`ExperimentConfig`], writes it to `<out>/resolved_config.toml` and then
//! runs one harness workflow.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::{
    evaluate_transfer, export_dataset, import_dataset, loss_curves, render_report, run_attack_batch,
    run_precision_sweep, run_prefix_experiment, AdversarialExample, BatchOutcome, ExperimentConfig, ReportData,
    ReportFormat,
};
use crate::models::{registry::MODEL_DIR_ENV, DifferentiableModel, ModelRegistry};
use crate::synth::{ImageTask, SpeechTask};
use crate::targets::assign_length_matched_targets;

#[derive(Debug, Parser)]
#[command(name = "transfer-attack", version, about = "Targeted adversarial attacks and transfer measurement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment configuration file (TOML)
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set attack.iterations=500`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Master seed; replaces `seed` in the configuration
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long, short, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads (0 = one per core); replaces `workers`
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Attack synthetic utterances with the proxy ensemble and export the dataset
    #[command(after_long_help = config_help())]
    Attack {
        #[command(flatten)]
        common: Common,
        /// Also record the loss of every `evaluate` model over the first attack
        #[arg(long)]
        curves: bool,
    },
    /// Transcribe a dataset with every `evaluate` model and build the transfer matrix
    #[command(after_long_help = config_help())]
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Dataset directory; replaces `data.dataset`
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Use every `evaluate` model as the proxy in turn and evaluate on all of them
    #[command(after_long_help = config_help())]
    Matrix {
        #[command(flatten)]
        common: Common,
    },
    /// White-box and transfer top-k success of classifier attacks against k
    #[command(after_long_help = config_help())]
    PrecisionSweep {
        #[command(flatten)]
        common: Common,
        /// k values: `1..10` (inclusive) or a list such as `1,2,5`
        #[arg(long)]
        ks: Option<String>,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Prepend a word to utterances on each pool model and test every other model
    #[command(after_long_help = config_help())]
    PrefixAttack {
        #[command(flatten)]
        common: Common,
    },
    /// Rewrite a dataset into `<out>/dataset`, re-checking every record
    #[command(after_long_help = config_help())]
    Export {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Read a dataset and summarize its records into `<out>/examples.jsonl`
    #[command(after_long_help = config_help())]
    Import {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Render a saved `results.json` in the configured formats
    #[command(after_long_help = config_help())]
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
    /// Train the configured toy models and save checkpoints
    #[command(after_long_help = config_help())]
    TrainToys {
        #[command(flatten)]
        common: Common,
    },
}

/// The full default configuration, shown under `--help`.
pub fn config_help() -> String {
    let defaults = ExperimentConfig::default().to_toml().unwrap_or_else(|e| format!("# unavailable: {e}\n"));
    format!(
        "Configuration keys and their defaults (set any of them with --set KEY=VALUE):\n\n{defaults}\n\
         Optional keys, unset by default: data.corpus (target sentences, one per line; a built-in list \
         otherwise) and data.dataset (dataset directory for evaluate, export and import).\n\
         attack.learning_rate defaults to 5e-4. Its commonly quoted value \"0005\" is a typo; 5e-4 is the \
         reading used here.\n\
         An empty `validation` disables early stopping. Relative checkpoint paths resolve against \
         ${MODEL_DIR_ENV}, which also holds the trained-model cache.\n"
    )
}

/// Exit status for an error: 2 for configuration problems, 1 otherwise.
pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Config(_) | Error::UnknownFormat(_) | Error::UnknownModel { .. } | Error::DuplicateModel(_) => 2,
        Error::Model { source, .. } => exit_code(source),
        _ => 1,
    }
}

/// Runs the command and returns the process exit status.
pub fn run(cli: Cli) -> i32 {
    match dispatch(&cli.command) {
        Ok(0) => 0,
        Ok(failed) => {
            eprintln!("warning: {failed} job(s) failed; see the output directory for details");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Runs one command; returns the number of per-sample failures.
pub fn dispatch(command: &Command) -> Result<usize> {
    match command {
        Command::Attack { common, curves } => {
            let (cfg, out) = prepare(common, &[])?;
            attack(&cfg, &out, *curves)
        }
        Command::Evaluate { common, data } => {
            let (cfg, out) = prepare(common, &dataset_override(data))?;
            evaluate(&cfg, &out)
        }
        Command::Matrix { common } => {
            let (cfg, out) = prepare(common, &[])?;
            matrix(&cfg, &out)
        }
        Command::PrecisionSweep { common, ks, repeats } => {
            let mut extra = Vec::new();
            if let Some(ks) = ks {
                let list: Vec<String> = parse_ks(ks)?.iter().map(usize::to_string).collect();
                extra.push(format!("sweep.ks=[{}]", list.join(",")));
            }
            if let Some(r) = repeats {
                extra.push(format!("sweep.repeats={r}"));
            }
            let (cfg, out) = prepare(common, &extra)?;
            precision_sweep(&cfg, &out)
        }
        Command::PrefixAttack { common } => {
            let (cfg, out) = prepare(common, &[])?;
            prefix_attack(&cfg, &out)
        }
        Command::Export { common, data } => {
            let (cfg, out) = prepare(common, &dataset_override(data))?;
            let examples = import_dataset(&dataset_dir(&cfg)?)?;
            let records = export_dataset(&examples, &out.join("dataset"))?;
            println!("exported {} examples to {}", records.len(), out.join("dataset").display());
            Ok(0)
        }
        Command::Import { common, data } => {
            let (cfg, out) = prepare(common, &dataset_override(data))?;
            import(&cfg, &out)
        }
        Command::Report { common, input } => {
            let (cfg, out) = prepare(common, &[])?;
            let text = fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
            let data: ReportData = serde_json::from_str(&text)?;
            write_reports(&cfg, &out, "report", &data)?;
            Ok(0)
        }
        Command::TrainToys { common } => {
            let (cfg, out) = prepare(common, &[])?;
            train_toys(&cfg, &out)
        }
    }
}

/// Parses `a..b` (inclusive), `a..=b` or a comma-separated list.
pub fn parse_ks(text: &str) -> Result<Vec<usize>> {
    let bad = || Error::Config(format!("cannot read k values from `{text}`"));
    let number = |s: &str| s.trim().parse::<usize>().map_err(|_| bad());
    if let Some((a, b)) = text.split_once("..") {
        let b = b.strip_prefix('=').unwrap_or(b);
        let (a, b) = (number(a)?, number(b)?);
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    text.split(',').map(number).collect()
}

fn dataset_override(data: &Option<PathBuf>) -> Vec<String> {
    data.iter().map(|d| format!("data.dataset={}", toml::Value::String(d.display().to_string()))).collect()
}

fn prepare(common: &Common, extra: &[String]) -> Result<(ExperimentConfig, PathBuf)> {
    let mut overrides = common.overrides.clone();
    overrides.extend_from_slice(extra);
    if let Some(w) = common.workers {
        overrides.push(format!("workers={w}"));
    }
    if let Some(path) = &common.config {
        if !path.is_file() {
            return Err(Error::Config(format!("config file {} does not exist", path.display())));
        }
    }
    let cfg = ExperimentConfig::resolve(common.config.as_deref(), &overrides, common.seed)?;
    let out = common.out.clone();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write_file(&out.join("resolved_config.toml"), &cfg.to_toml()?)?;
    log::info!("seed {}, output in {}", cfg.seed, out.display());
    Ok((cfg, out))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut text = String::new();
    for item in items {
        text.push_str(&serde_json::to_string(item)?);
        text.push('\n');
    }
    write_file(path, &text)
}

fn write_reports(cfg: &ExperimentConfig, out: &Path, stem: &str, data: &ReportData) -> Result<()> {
    write_json(&out.join("results.json"), data)?;
    for name in &cfg.formats {
        let format = ReportFormat::parse(name)?;
        let path = out.join(format!("{stem}.{}", format.extension()));
        render_report(data, format, &path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn dataset_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg
        .data
        .dataset
        .clone()
        .ok_or_else(|| Error::Config("no dataset given (use --data or data.dataset)".into()))?;
    if !dir.is_dir() {
        return Err(Error::Config(format!("dataset directory {} does not exist", dir.display())));
    }
    Ok(dir)
}

fn load(cfg: &ExperimentConfig, names: &[String]) -> Result<Vec<Box<dyn DifferentiableModel>>> {
    cfg.load_models(&ModelRegistry::with_toy_adapters(), names)
}

fn speech_samples(cfg: &ExperimentConfig) -> Vec<crate::audio::AudioSample> {
    SpeechTask::standard().evaluation_samples(cfg.data.samples, cfg.data.min_words, cfg.data.max_words, cfg.data.seed)
}

fn attack(cfg: &ExperimentConfig, out: &Path, curves: bool) -> Result<usize> {
    let proxies = load(cfg, &cfg.proxies)?;
    let validation = match &cfg.validation {
        Some(v) => load(cfg, std::slice::from_ref(v))?.pop(),
        None => None,
    };
    let samples = speech_samples(cfg);
    let corpus = cfg.corpus()?;
    let outcome = run_attack_batch(&samples, &proxies, validation.as_deref(), &corpus, &cfg.attack, cfg.workers)?;
    export_dataset(&outcome.examples, &out.join("dataset"))?;
    write_jsonl(&out.join("traces.jsonl"), &outcome.traces)?;
    summarize_batch(&outcome, out)?;

    if curves {
        let others: Vec<String> = cfg.evaluate.iter().filter(|m| !cfg.proxies.contains(m)).cloned().collect();
        let observed = load(cfg, &others)?;
        let targets = assign_length_matched_targets(&samples[..1], &corpus);
        let data = ReportData::Loss(loss_curves(&proxies, &observed, &samples[0], &targets[0], &cfg.attack)?);
        write_json(&out.join("loss_curves.json"), &data)?;
        for name in &cfg.formats {
            let format = ReportFormat::parse(name)?;
            render_report(&data, format, &out.join(format!("loss.{}", format.extension())))?;
        }
    }
    Ok(outcome.failures.len())
}

fn summarize_batch(outcome: &BatchOutcome, out: &Path) -> Result<()> {
    if !outcome.failures.is_empty() {
        write_jsonl(&out.join("failures.jsonl"), &outcome.failures)?;
    }
    let snrs: Vec<f64> = outcome.examples.iter().map(|e| e.achieved_snr).filter(|s| s.is_finite()).collect();
    let mean = if snrs.is_empty() { f64::NAN } else { snrs.iter().sum::<f64>() / snrs.len() as f64 };
    println!(
        "{} examples written to {} ({} failed), mean SNR {mean:.1} dB",
        outcome.examples.len(),
        out.join("dataset").display(),
        outcome.failures.len()
    );
    Ok(())
}

fn evaluate(cfg: &ExperimentConfig, out: &Path) -> Result<usize> {
    let examples = import_dataset(&dataset_dir(cfg)?)?;
    transfer_report(cfg, out, &examples)
}

fn transfer_report(cfg: &ExperimentConfig, out: &Path, examples: &[AdversarialExample]) -> Result<usize> {
    let mut models = load(cfg, &cfg.evaluate)?;
    let matrix = evaluate_transfer(&mut models, examples, cfg.workers)?;
    write_jsonl(&out.join("transcriptions.jsonl"), &matrix.transcriptions)?;
    let invalid = matrix.cells.iter().flatten().filter(|c| c.rates.is_none()).count();
    write_reports(cfg, out, "transfer", &ReportData::Transfer(matrix))?;
    Ok(invalid)
}

fn matrix(cfg: &ExperimentConfig, out: &Path) -> Result<usize> {
    let samples = speech_samples(cfg);
    let corpus = cfg.corpus()?;
    let mut examples = Vec::new();
    let mut failures = 0;
    for name in &cfg.evaluate {
        let proxies = load(cfg, std::slice::from_ref(name))?;
        let mut outcome = run_attack_batch(&samples, &proxies, None, &corpus, &cfg.attack, cfg.workers)?;
        for e in &mut outcome.examples {
            e.id = format!("{name}-{}", e.id);
        }
        failures += outcome.failures.len();
        examples.extend(outcome.examples);
    }
    export_dataset(&examples, &out.join("dataset"))?;
    Ok(failures + transfer_report(cfg, out, &examples)?)
}

fn precision_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<usize> {
    let mut models = load(cfg, &[cfg.sweep.proxy.clone(), cfg.sweep.private.clone()])?;
    let private = models.pop().expect("two models");
    let proxy = models.pop().expect("two models");
    let images: Vec<Vec<f64>> =
        ImageTask::standard().labelled_images(cfg.sweep.images, cfg.data.seed).into_iter().map(|(x, _)| x).collect();
    let curve = run_precision_sweep(
        proxy.as_ref(),
        private.as_ref(),
        &images,
        &cfg.sweep.ks,
        cfg.sweep.n_inputs,
        cfg.sweep.repeats,
        &cfg.sweep_config(),
        cfg.workers,
    )?;
    for ((k, w), t) in curve.ks.iter().zip(&curve.white_box).zip(&curve.transfer) {
        println!("k={k:>2}  white-box {w:.3}  transfer {t:.3}");
    }
    write_reports(cfg, out, "precision", &ReportData::Precision(curve))?;
    Ok(0)
}

fn prefix_attack(cfg: &ExperimentConfig, out: &Path) -> Result<usize> {
    let pool = load(cfg, &cfg.prefix.models)?;
    let samples = SpeechTask::standard().evaluation_samples(
        cfg.prefix.samples,
        cfg.prefix.min_words,
        cfg.prefix.max_words,
        cfg.data.seed,
    );
    let result = run_prefix_experiment(&pool, &samples, &cfg.prefix_config(), cfg.workers)?;
    if let Some(s) = result.off_diagonal {
        println!("off-diagonal mean {:.3}, sd {:.3}", s.mean, s.sd);
    }
    write_reports(cfg, out, "prefix", &ReportData::Prefix(result))?;
    Ok(0)
}

#[derive(Serialize)]
struct ImportedSummary<'a> {
    id: &'a str,
    transcript: &'a str,
    target: Option<&'a str>,
    proxies: &'a [String],
    validation: Option<&'a str>,
    snr_db: Option<f64>,
    samples: usize,
    config_fingerprint: &'a str,
}

fn import(cfg: &ExperimentConfig, out: &Path) -> Result<usize> {
    let examples = import_dataset(&dataset_dir(cfg)?)?;
    let rows: Vec<ImportedSummary<'_>> = examples
        .iter()
        .map(|e| ImportedSummary {
            id: &e.id,
            transcript: &e.clean.transcript,
            target: e.target.text(),
            proxies: &e.proxies,
            validation: e.validation.as_deref(),
            snr_db: e.achieved_snr.is_finite().then_some(e.achieved_snr),
            samples: e.delta.len(),
            config_fingerprint: &e.config_fingerprint,
        })
        .collect();
    write_jsonl(&out.join("examples.jsonl"), &rows)?;
    println!("read {} examples", rows.len());
    Ok(0)
}

#[derive(Serialize)]
struct CheckpointEntry {
    name: String,
    adapter: String,
    config: CheckpointRef,
}

#[derive(Serialize)]
struct CheckpointRef {
    checkpoint: PathBuf,
}

fn train_toys(cfg: &ExperimentConfig, out: &Path) -> Result<usize> {
    let dir = out.join("models");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut entries = Vec::new();
    for spec in &cfg.models {
        let model = load(cfg, std::slice::from_ref(&spec.name))?.pop().expect("one model");
        let Some(checkpoint) = model.checkpoint() else {
            log::warn!("model `{}` has no checkpoint format; skipped", spec.name);
            continue;
        };
        let path = dir.join(format!("{}.json", spec.name));
        checkpoint.save(&path)?;
        println!("saved {}", path.display());
        entries.push(CheckpointEntry {
            name: spec.name.clone(),
            adapter: spec.adapter.clone(),
            config: CheckpointRef { checkpoint: fs::canonicalize(&path).map_err(|e| Error::io(&path, e))? },
        });
    }
    #[derive(Serialize)]
    struct Models {
        models: Vec<CheckpointEntry>,
    }
    let text = toml::to_string(&Models { models: entries }).map_err(|e| Error::Config(e.to_string()))?;
    write_file(&out.join("models.toml"), &text)?;
    Ok(0)
}
