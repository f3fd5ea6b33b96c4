//! On-disk dataset layout:
//!
//! ```text
//! <dir>/manifest.jsonl          one JSON record per line
//! <dir>/audio/<id>_clean.wav    16-bit PCM mono
//! <dir>/audio/<id>_adv.wav
//! ```
//!
//! A record holds `id`, `clean_path`, `adv_path`, `transcript`, `target`,
//! `proxies`, `validation`, `snr_db`, `best_iteration`,
//! `config_fingerprint` and `sample_rate`. An infinite SNR (silent
//! perturbation) is written as `null`.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::batch::AdversarialExample;
use crate::audio::{read_wav, write_wav, AudioSample};
use crate::error::{Error, Result};
use crate::targets::AttackTarget;

pub const MANIFEST: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub clean_path: String,
    pub adv_path: String,
    pub transcript: String,
    pub target: AttackTarget,
    pub proxies: Vec<String>,
    pub validation: Option<String>,
    #[serde(serialize_with = "write_snr", deserialize_with = "read_snr")]
    pub snr_db: f64,
    pub best_iteration: usize,
    pub config_fingerprint: String,
    pub sample_rate: u32,
}

fn write_snr<S: Serializer>(snr: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if *snr == f64::INFINITY {
        s.serialize_none()
    } else if snr.is_finite() {
        s.serialize_some(snr)
    } else {
        Err(serde::ser::Error::custom(format!("cannot record an SNR of {snr}")))
    }
}

fn read_snr<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("example id `{id}` is not usable as a file name")))
    }
}

impl ManifestRecord {
    pub fn for_example(example: &AdversarialExample) -> Result<Self> {
        check_id(&example.id)?;
        Ok(Self {
            id: example.id.clone(),
            clean_path: format!("audio/{}_clean.wav", example.id),
            adv_path: format!("audio/{}_adv.wav", example.id),
            transcript: example.clean.transcript.clone(),
            target: example.target.clone(),
            proxies: example.proxies.clone(),
            validation: example.validation.clone(),
            snr_db: example.achieved_snr,
            best_iteration: example.best_iteration,
            config_fingerprint: example.config_fingerprint.clone(),
            sample_rate: example.clean.sample_rate,
        })
    }
}

/// Writes audio files and the manifest; returns the records written.
pub fn export_dataset(examples: &[AdversarialExample], directory: &Path) -> Result<Vec<ManifestRecord>> {
    let audio = directory.join("audio");
    fs::create_dir_all(&audio).map_err(|e| Error::io(&audio, e))?;
    let records = examples.iter().map(ManifestRecord::for_example).collect::<Result<Vec<_>>>()?;
    for (i, r) in records.iter().enumerate() {
        if records[..i].iter().any(|o| o.id == r.id) {
            return Err(Error::InvalidInput(format!("duplicate example id `{}`", r.id)));
        }
    }
    let mut manifest = String::new();
    for (example, record) in examples.iter().zip(&records) {
        write_wav(&directory.join(&record.clean_path), &example.clean.waveform, record.sample_rate)?;
        write_wav(&directory.join(&record.adv_path), &example.adversarial(), record.sample_rate)?;
        manifest.push_str(&serde_json::to_string(record)?);
        manifest.push('\n');
    }
    let path = directory.join(MANIFEST);
    let mut file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    file.write_all(manifest.as_bytes()).map_err(|e| Error::io(&path, e))?;
    Ok(records)
}

/// Parses `manifest.jsonl`, skipping blank lines. Errors carry the 1-based
/// line number.
pub fn read_manifest(directory: &Path) -> Result<Vec<ManifestRecord>> {
    Ok(read_numbered(directory)?.into_iter().map(|(_, r)| r).collect())
}

fn read_numbered(directory: &Path) -> Result<Vec<(usize, ManifestRecord)>> {
    let path = directory.join(MANIFEST);
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::Manifest { path: path.clone(), line: i + 1, message };
        let record: ManifestRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        check_id(&record.id).map_err(|e| bad(e.to_string()))?;
        for p in [&record.clean_path, &record.adv_path] {
            if Path::new(p).is_absolute() || p.split(['/', '\\']).any(|c| c == "..") {
                return Err(bad(format!("audio path `{p}` leaves the dataset directory")));
            }
        }
        records.push((i + 1, record));
    }
    Ok(records)
}

fn resolve(directory: &Path, relative: &str) -> PathBuf {
    directory.join(relative)
}

/// Inverse of [`export_dataset`]. Waveforms come back PCM-quantized; the
/// SNR is the recorded one.
pub fn import_dataset(directory: &Path) -> Result<Vec<AdversarialExample>> {
    let manifest = directory.join(MANIFEST);
    let records = read_numbered(directory)?;
    let mut examples = Vec::with_capacity(records.len());
    for (line, record) in records {
        let (clean, rate) = read_wav(&resolve(directory, &record.clean_path))?;
        let (adv, adv_rate) = read_wav(&resolve(directory, &record.adv_path))?;
        if clean.len() != adv.len() || rate != record.sample_rate || adv_rate != record.sample_rate {
            return Err(Error::Manifest {
                path: manifest,
                line,
                message: format!("audio files for `{}` disagree with the record", record.id),
            });
        }
        let delta = adv.iter().zip(&clean).map(|(a, c)| a - c).collect();
        examples.push(AdversarialExample {
            clean: AudioSample {
                id: record.id.clone(),
                waveform: clean,
                transcript: record.transcript,
                sample_rate: rate,
            },
            id: record.id,
            delta,
            target: record.target,
            proxies: record.proxies,
            validation: record.validation,
            achieved_snr: record.snr_db,
            best_iteration: record.best_iteration,
            config_fingerprint: record.config_fingerprint,
        });
    }
    Ok(examples)
}
