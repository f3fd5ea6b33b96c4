//! Waveforms and 16-bit PCM WAV I/O.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Largest magnitude error introduced by a 16-bit PCM round trip.
pub const PCM16_LSB: f64 = 1.0 / 32768.0;

/// A clean utterance: waveform in `[-1, 1]` plus its reference transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioSample {
    pub id: String,
    pub waveform: Vec<f64>,
    pub transcript: String,
    pub sample_rate: u32,
}

impl AudioSample {
    pub fn new(id: impl Into<String>, waveform: Vec<f64>, transcript: impl Into<String>) -> Self {
        Self { id: id.into(), waveform, transcript: transcript.into(), sample_rate: DEFAULT_SAMPLE_RATE }
    }
}

fn to_pcm(value: f64) -> i16 {
    (value.clamp(-1.0, 1.0) * 32767.0).round() as i16
}

fn from_pcm(value: i16) -> f64 {
    f64::from(value) / 32767.0
}

pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let spec =
        hound::WavSpec { channels: 1, sample_rate, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let wav_err = |source| Error::Wav { path: path.to_path_buf(), source };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in samples {
        writer.write_sample(to_pcm(s)).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

/// Reads a mono 16-bit WAV file, returning samples and sample rate.
pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let wav_err = |source| Error::Wav { path: path.to_path_buf(), source };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::InvalidInput(format!(
            "{}: expected mono 16-bit PCM, found {} channel(s) at {} bits",
            path.display(),
            spec.channels,
            spec.bits_per_sample
        )));
    }
    let samples = reader.samples::<i16>().map(|s| s.map(from_pcm)).collect::<Result<Vec<_>, _>>().map_err(wav_err)?;
    Ok((samples, spec.sample_rate))
}
