//! Acceptance criteria. Runs without the libtest harness so that every
//! criterion prints one line; exits non-zero when any of them fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use transfer_attack::attack::{clip_to_signal_range, cw_attack_observed, pgd_attack, AttackConfig, Norm};
use transfer_attack::harness::{
    export_dataset, import_dataset, read_manifest, run_attack_batch, run_precision_sweep, run_prefix_experiment,
    BatchOutcome, PrefixConfig, SweepConfig,
};
use transfer_attack::metrics::{
    epsilon_for_target_snr, levenshtein, snr_db, targeted_success, topk_match_accuracy, Level,
};
use transfer_attack::models::ctc::ctc_loss;
use transfer_attack::models::{load_model, DifferentiableModel, Mode};
use transfer_attack::synth::{ImageTask, SpeechTask};
use transfer_attack::targets::{assign_length_matched_targets, sample_simplex, AttackTarget, TargetCorpus};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn model(adapter: &str, seed: u64, train: bool) -> Box<dyn DifferentiableModel> {
    let name = format!("{}-{seed}", if adapter == "toy-ctc" { "ctc" } else { "cls" });
    load_model(adapter, &json!({"name": name, "seed": seed, "train": train})).expect("toy model")
}

// 1
fn topk_worked_example() -> Outcome {
    let output = [0.1, 0.05, 0.05, 0.05, 0.35, 0.2, 0.05, 0.05, 0.05, 0.05];
    let target = [0.0, 0.17, 0.0, 0.0, 0.55, 0.28, 0.0, 0.0, 0.0, 0.0];
    let acc = topk_match_accuracy(&output, &target, 3).map_err(|e| e.to_string())?;
    check(acc == 2.0 / 3.0, format!("accuracy {acc}"))
}

fn oracle_distance(a: &[u8], b: &[u8], memo: &mut [[Option<usize>; 7]; 7]) -> usize {
    let (i, j) = (a.len(), b.len());
    if let Some(d) = memo[i][j] {
        return d;
    }
    let d = if i == 0 {
        j
    } else if j == 0 {
        i
    } else {
        let sub = oracle_distance(&a[..i - 1], &b[..j - 1], memo) + usize::from(a[i - 1] != b[j - 1]);
        let del = oracle_distance(&a[..i - 1], b, memo) + 1;
        let ins = oracle_distance(a, &b[..j - 1], memo) + 1;
        sub.min(del).min(ins)
    };
    memo[i][j] = Some(d);
    d
}

fn all_sequences(max_len: usize, symbols: u8) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let next: Vec<Vec<u8>> = frontier
            .iter()
            .flat_map(|s: &Vec<u8>| {
                (0..symbols).map(move |c| {
                    let mut t = s.clone();
                    t.push(c);
                    t
                })
            })
            .collect();
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

// 2
fn edit_distance_exhaustive() -> Outcome {
    let seqs = all_sequences(6, 3);
    let mut mismatches = 0usize;
    let mut pairs = 0usize;
    for a in &seqs {
        for b in &seqs {
            let mut memo = [[None; 7]; 7];
            if levenshtein(a, b) != oracle_distance(a, b, &mut memo) {
                mismatches += 1;
            }
            pairs += 1;
        }
    }
    check(mismatches == 0, format!("{pairs} pairs, {mismatches} mismatches"))
}

fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &s in path {
        if Some(s) != prev && s != blank {
            out.push(s);
        }
        prev = Some(s);
    }
    out
}

fn brute_force_ctc(log_probs: &Array2<f64>, target: &[usize], blank: usize) -> f64 {
    let (frames, vocab) = log_probs.dim();
    let mut total = 0.0;
    let mut path = vec![0usize; frames];
    for code in 0..vocab.pow(frames as u32) {
        let mut c = code;
        for p in path.iter_mut() {
            *p = c % vocab;
            c /= vocab;
        }
        if collapse(&path, blank) == target {
            total += path.iter().enumerate().map(|(t, &s)| log_probs[[t, s]]).sum::<f64>().exp();
        }
    }
    -total.ln()
}

fn random_log_probs(frames: usize, vocab: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut m = Array2::from_shape_fn((frames, vocab), |_| rng.random_range(-3.0..3.0));
    for mut row in m.rows_mut() {
        let lse = row.iter().map(|v: &f64| v.exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    m
}

// 3
fn ctc_brute_force() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut cases, mut worst, mut infeasible) = (0usize, 0.0f64, 0usize);
    for vocab in 2..=4 {
        let labels = all_sequences(3, (vocab - 1) as u8);
        for frames in 1..=6 {
            for t in &labels {
                let target: Vec<usize> = t.iter().map(|&c| c as usize + 1).collect();
                let lp = random_log_probs(frames, vocab, &mut rng);
                let oracle = brute_force_ctc(&lp, &target, 0);
                match ctc_loss(lp.view(), &target, 0) {
                    Ok(loss) => {
                        if !oracle.is_finite() {
                            return Err(format!(
                                "finite loss {loss} for infeasible target {target:?} in {frames} frames"
                            ));
                        }
                        worst = worst.max((loss - oracle).abs());
                    }
                    Err(_) if oracle.is_infinite() => infeasible += 1,
                    Err(e) => return Err(format!("error {e} on feasible target {target:?}")),
                }
                cases += 1;
            }
        }
    }
    check(worst <= 1e-6, format!("{cases} cases ({infeasible} infeasible), max abs error {worst:.2e}"))
}

fn gradient_errors(
    model: &mut dyn DifferentiableModel,
    input: &[f64],
    target: &AttackTarget,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let (_, grad) = model.input_gradient(input, target).expect("gradient");
    let h = 1e-5;
    let direction: Vec<f64> = (0..input.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let shifted = |sign: f64| -> Vec<f64> { input.iter().zip(&direction).map(|(x, d)| x + sign * h * d).collect() };
    let numeric =
        (model.loss(&shifted(1.0), target).unwrap() - model.loss(&shifted(-1.0), target).unwrap()) / (2.0 * h);
    let analytic: f64 = grad.iter().zip(&direction).map(|(g, d)| g * d).sum();
    let mut worst = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8);
    for _ in 0..3 {
        let i = rng.random_range(0..input.len());
        let mut up = input.to_vec();
        let mut down = input.to_vec();
        up[i] += h;
        down[i] -= h;
        let numeric = (model.loss(&up, target).unwrap() - model.loss(&down, target).unwrap()) / (2.0 * h);
        let scale = numeric.abs().max(grad[i].abs());
        if scale > 1e-6 {
            worst = worst.max((numeric - grad[i]).abs() / scale);
        }
    }
    worst
}

// 4
fn gradients_match_finite_differences() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut ctc = model("toy-ctc", 11, true);
    let mut cls = model("toy-classifier", 11, true);
    ctc.set_mode(Mode::Deterministic);
    cls.set_mode(Mode::Deterministic);
    let task = SpeechTask::standard();
    let samples = task.evaluation_samples(10, 1, 3, 40);
    let corpus = TargetCorpus::new(vec!["A CAT".into(), "DOG".into(), "BUT IT".into(), "NO".into()]).unwrap();
    let targets = assign_length_matched_targets(&samples, &corpus);
    let mut worst = 0.0f64;
    for (s, t) in samples.iter().zip(&targets) {
        worst = worst.max(gradient_errors(ctc.as_mut(), &s.waveform, t, &mut rng));
    }
    let image = ImageTask::standard();
    for (x, _) in image.labelled_images(10, 41) {
        let k = rng.random_range(1..=10);
        let target = transfer_attack::targets::sample_topk_target(10, k, &mut rng).unwrap();
        worst = worst.max(gradient_errors(cls.as_mut(), &x, &target, &mut rng));
    }
    check(worst < 1e-4, format!("20 pairs, max relative error {worst:.2e}"))
}

// 5
fn constraint_invariants() -> Outcome {
    let mut proxies = vec![model("toy-ctc", 1, true)];
    let samples = SpeechTask::standard().evaluation_samples(10, 2, 6, 5);
    let targets = assign_length_matched_targets(&samples, &TargetCorpus::librispeech_candidates());
    let config = AttackConfig {
        linf_radius: 0.05,
        learning_rate: 5e-3,
        iterations: 1000,
        checkpoint_every: 1,
        ..AttackConfig::default()
    };
    let mut linf_worst = 0.0f64;
    let mut range_violations = 0usize;
    let mut iterates = 0usize;
    for (s, t) in samples.iter().zip(&targets) {
        let mut observe = |_: usize, adv: &[f64]| {
            iterates += 1;
            for (a, x) in adv.iter().zip(&s.waveform) {
                linf_worst = linf_worst.max((a - x).abs());
                if !(-1.0..=1.0).contains(a) {
                    range_violations += 1;
                }
            }
        };
        cw_attack_observed(&mut proxies, None, s, t, &config, Some(&mut observe)).map_err(|e| e.to_string())?;
    }

    // L2 analogue on a signal near the range edges.
    let mut cls = model("toy-classifier", 1, true);
    let mut l2_worst = 0.0f64;
    let x: Vec<f64> = ImageTask::standard().labelled_images(1, 5)[0].0.iter().map(|v| v.clamp(-0.95, 0.95)).collect();
    let target = AttackTarget::one_hot(3, 10).unwrap();
    let objective = cls.objective_for(&target).unwrap();
    let l2 = AttackConfig {
        norm: Norm::L2,
        l2_radius: 2.0,
        learning_rate: 0.05,
        iterations: 1000,
        ..AttackConfig::default()
    };
    let result = pgd_attack(cls.as_mut(), &x, objective.as_ref(), &l2).map_err(|e| e.to_string())?;
    l2_worst = l2_worst.max(result.delta.l2());
    let mut clipped = result.delta.delta.clone();
    clip_to_signal_range(&x, &mut clipped);

    check(
        iterates == 10_000 && linf_worst <= 0.05 + 1e-9 && range_violations == 0 && l2_worst <= 2.0 + 1e-9 && clipped == result.delta.delta,
        format!("{iterates} iterates, max |d| {linf_worst:.6} (eps 0.05), {range_violations} range violations, L2 {l2_worst:.6} (radius 2)"),
    )
}

// 6
fn snr_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    let mut scaling = 0.0f64;
    for n in [16usize, 1000, 16000] {
        let x: Vec<f64> = (0..n).map(|i| 0.3 * (i as f64 * 0.07).sin() + rng.random_range(-0.1..0.1)).collect();
        let eps = epsilon_for_target_snr(&x, 30.0).map_err(|e| e.to_string())?;
        let delta: Vec<f64> = (0..n).map(|_| if rng.random::<bool>() { eps } else { -eps }).collect();
        let snr = snr_db(&x, &delta).map_err(|e| e.to_string())?;
        worst = worst.max((snr - 30.0).abs());
        let small: Vec<f64> = delta.iter().map(|d| d / 10.0).collect();
        let gain = snr_db(&x, &small).unwrap() - snr;
        scaling = scaling.max((gain - 20.0).abs());
    }
    check(worst <= 1e-9 && scaling <= 1e-9, format!("max |snr - 30| {worst:.1e}, max |gain - 20| {scaling:.1e}"))
}

// 7
fn simplex_sampler() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 100_000;
    let mut sums = [0.0; 3];
    for _ in 0..n {
        let p = sample_simplex(3, &mut rng).unwrap();
        for (s, v) in sums.iter_mut().zip(&p) {
            *s += v;
        }
    }
    let means: Vec<f64> = sums.iter().map(|s| s / n as f64).collect();
    let mean_err = means.iter().map(|m| (m - 1.0 / 3.0).abs()).fold(0.0, f64::max);
    let mut first: Vec<f64> = (0..n).map(|_| sample_simplex(2, &mut rng).unwrap()[0]).collect();
    first.sort_by(f64::total_cmp);
    let ks = first
        .iter()
        .enumerate()
        .map(|(i, &v)| (v - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - v).abs()))
        .fold(0.0, f64::max);
    check(mean_err < 0.01 && ks < 0.01, format!("means {means:.4?}, KS statistic {ks:.4}"))
}

struct WhiteBoxRun {
    outcome: BatchOutcome,
    char_success: f64,
    mean_snr: f64,
    elapsed: Duration,
}

fn white_box_run() -> Result<WhiteBoxRun, String> {
    let start = Instant::now();
    let proxies = vec![model("toy-ctc", 1, true)];
    let validation = model("toy-ctc", 2, true);
    let samples = SpeechTask::standard().evaluation_samples(20, 5, 12, 99);
    let config = AttackConfig { linf_radius: 0.05, iterations: 1000, ..AttackConfig::default() };
    let outcome = run_attack_batch(
        &samples,
        &proxies,
        Some(validation.as_ref()),
        &TargetCorpus::librispeech_candidates(),
        &config,
        0,
    )
    .map_err(|e| e.to_string())?;
    if !outcome.failures.is_empty() {
        return Err(format!("{} samples failed", outcome.failures.len()));
    }
    let mut proxy = proxies[0].boxed_clone();
    let mut scores = Vec::new();
    for e in &outcome.examples {
        let heard = proxy.predict(&e.adversarial()).map_err(|e| e.to_string())?.as_text();
        scores.push(targeted_success(&heard, e.target.text().unwrap(), Level::Char).unwrap().value);
    }
    let snrs: Vec<f64> = outcome.examples.iter().map(|e| e.achieved_snr).collect();
    Ok(WhiteBoxRun {
        char_success: scores.iter().sum::<f64>() / scores.len() as f64,
        mean_snr: snrs.iter().sum::<f64>() / snrs.len() as f64,
        outcome,
        elapsed: start.elapsed(),
    })
}

// 8
fn white_box_attack(run: &Result<WhiteBoxRun, String>) -> Outcome {
    let run = run.as_ref().map_err(Clone::clone)?;
    check(
        run.char_success >= 0.9 && run.outcome.examples.len() == 20,
        format!(
            "targeted char success {:.3} over {} utterances, mean SNR {:.1} dB, {:.0?}",
            run.char_success,
            run.outcome.examples.len(),
            run.mean_snr,
            run.elapsed
        ),
    )
}

// 9
fn precision_sweep_trend() -> Outcome {
    let proxy = model("toy-classifier", 1, true);
    let private = model("toy-classifier", 2, true);
    let images: Vec<Vec<f64>> = ImageTask::standard().labelled_images(200, 99).into_iter().map(|(x, _)| x).collect();
    let config = SweepConfig {
        attack: AttackConfig {
            norm: Norm::L2,
            l2_radius: 4.0,
            learning_rate: 0.01,
            stochastic_proxy: false,
            ..AttackConfig::default()
        },
        steps_per_k: 1000,
        seed: 9,
    };
    let ks: Vec<usize> = (1..=9).collect();
    let curve = run_precision_sweep(proxy.as_ref(), private.as_ref(), &images, &ks, 16, 3, &config, 0)
        .map_err(|e| e.to_string())?;
    let min_white = curve.white_box.iter().copied().fold(1.0, f64::min);
    let drop = curve.transfer[0] - curve.transfer[ks.len() - 1];
    check(
        min_white >= 0.95 && drop >= 0.1,
        format!(
            "white-box min {min_white:.3}; transfer k=1 {:.3}, k=9 {:.3}",
            curve.transfer[0],
            curve.transfer[ks.len() - 1]
        ),
    )
}

// 10
fn prefix_transfer_shape() -> Outcome {
    let pool: Vec<Box<dyn DifferentiableModel>> = (1..=3).map(|s| model("toy-ctc", s, true)).collect();
    let samples = SpeechTask::standard().evaluation_samples(30, 2, 8, 7);
    let result = run_prefix_experiment(&pool, &samples, &PrefixConfig::default(), 0).map_err(|e| e.to_string())?;
    let mut ok = true;
    for (i, row) in result.success.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            ok &= if i == j { v >= 0.9 } else { v > result.clean_rate[j] };
        }
    }
    let rows: Vec<String> =
        result.success.iter().map(|r| r.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join(" ")).collect();
    check(ok, format!("{} utterances, success [{}], clean {:?}", result.samples, rows.join(" | "), result.clean_rate))
}

// 11
fn validation_checkpointing(run: &Result<WhiteBoxRun, String>) -> Outcome {
    let run = run.as_ref().map_err(Clone::clone)?;
    let mut validator = model("toy-ctc", 2, true);
    validator.set_mode(Mode::Deterministic);
    let mut violations = 0;
    let mut improved = 0;
    for (e, trace) in run.outcome.examples.iter().zip(&run.outcome.traces) {
        let returned = validator.loss(&e.adversarial(), &e.target).map_err(|e| e.to_string())?;
        let (_, last) = *trace.validation.last().ok_or("empty validation trace")?;
        if returned > last + 1e-9 * last.abs().max(1.0) {
            violations += 1;
        }
        if returned < last {
            improved += 1;
        }
    }
    check(
        violations == 0,
        format!(
            "{} samples, {violations} violations, {improved} stopped before the final iterate",
            run.outcome.examples.len()
        ),
    )
}

// 12
fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let bin = env!("CARGO_BIN_EXE_transfer-attack");
    let config = dir.path().join("toy.toml");
    std::fs::write(
        &config,
        "validation = \"ctc-2\"\nformats = [\"csv\"]\n[attack]\niterations = 100\n[data]\nsamples = 3\nmax_words = 6\n",
    )
    .map_err(|e| e.to_string())?;
    let run = |out: &Path| -> Result<Vec<u8>, String> {
        let status = Command::new(bin)
            .args(["attack", "--config"])
            .arg(&config)
            .args(["--seed", "7", "--out"])
            .arg(out)
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(String::from_utf8_lossy(&status.stderr).into_owned());
        }
        std::fs::read(out.join("dataset/manifest.jsonl")).map_err(|e| e.to_string())
    };
    let first = run(&dir.path().join("a"))?;
    let second = run(&dir.path().join("b"))?;
    let identical = first == second && !first.is_empty();

    let original = dir.path().join("a/dataset");
    let examples = import_dataset(&original).map_err(|e| e.to_string())?;
    let copy = dir.path().join("copy");
    export_dataset(&examples, &copy).map_err(|e| e.to_string())?;
    let same_manifest = std::fs::read(original.join("manifest.jsonl")).ok()
        == std::fs::read(copy.join("manifest.jsonl")).ok()
        && read_manifest(&original).ok() == read_manifest(&copy).ok();

    // waveform fidelity against the in-memory examples
    let samples = SpeechTask::standard().evaluation_samples(3, 2, 5, 12);
    let proxies = vec![model("toy-ctc", 1, false)];
    let batch = run_attack_batch(
        &samples,
        &proxies,
        None,
        &TargetCorpus::librispeech_candidates(),
        &AttackConfig { iterations: 20, linf_radius: 0.05, learning_rate: 0.01, ..AttackConfig::default() },
        0,
    )
    .map_err(|e| e.to_string())?;
    let wav_dir = dir.path().join("wav");
    export_dataset(&batch.examples, &wav_dir).map_err(|e| e.to_string())?;
    let back = import_dataset(&wav_dir).map_err(|e| e.to_string())?;
    let lsb = 1.0 / 32767.0;
    let mut worst = 0.0f64;
    for (a, b) in batch.examples.iter().zip(&back) {
        for (u, v) in a.clean.waveform.iter().zip(&b.clean.waveform) {
            worst = worst.max((u - v).abs());
        }
        for (u, v) in a.adversarial().iter().zip(&b.adversarial()) {
            worst = worst.max((u - v).abs());
        }
    }
    check(
        identical && same_manifest && worst <= lsb && back.len() == batch.examples.len(),
        format!(
            "manifests identical: {identical}; round trip manifest equal: {same_manifest}; max waveform error {:.3} LSB",
            worst / lsb
        ),
    )
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome, Duration)> = Vec::new();
    let mut timed = |n: usize, name: &'static str, f: &dyn Fn() -> Outcome| {
        let start = Instant::now();
        let outcome = f();
        let elapsed = start.elapsed();
        let (status, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("criterion {n:>2} {name} ... {status} ({detail}) [{:.1}s]", elapsed.as_secs_f64());
        results.push((n, name, outcome, elapsed));
    };
    timed(1, "top-k worked example", &topk_worked_example);
    timed(2, "edit distance vs exhaustive oracle", &edit_distance_exhaustive);
    timed(3, "CTC loss vs alignment enumeration", &ctc_brute_force);
    timed(4, "input gradients vs finite differences", &gradients_match_finite_differences);
    timed(5, "perturbation constraints", &constraint_invariants);
    timed(6, "SNR helpers", &snr_identities);
    timed(7, "simplex sampler", &simplex_sampler);
    let white_box = white_box_run();
    timed(8, "white-box toy attack", &|| white_box_attack(&white_box));
    timed(9, "precision sweep trend", &precision_sweep_trend);
    timed(10, "prefix transfer shape", &prefix_transfer_shape);
    timed(11, "validation checkpointing", &|| validation_checkpointing(&white_box));
    timed(12, "reproducibility and round trip", &reproducibility);

    let failed: Vec<usize> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
