//! Mono 16 kHz WAV reading and writing.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::stft::SAMPLE_RATE;
use crate::error::{invalid, Result};

pub fn read_wav(path: &Path) -> Result<Vec<f64>> {
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return invalid(format!("{}: expected mono, found {} channels", path.display(), spec.channels));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return invalid(format!("{}: expected {} Hz, found {} Hz", path.display(), SAMPLE_RATE, spec.sample_rate));
    }
    let samples = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<Vec<_>, _>>()?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<Vec<_>, _>>()?,
        (fmt, bits) => {
            return invalid(format!("{}: unsupported sample format {:?}/{} bits", path.display(), fmt, bits));
        }
    };
    if samples.iter().any(|v| !v.is_finite()) {
        return invalid(format!("{}: non-finite samples", path.display()));
    }
    Ok(samples)
}

/// Writes 32-bit float samples.
pub fn write_wav(path: &Path, samples: &[f64]) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut w = WavWriter::create(path, spec)?;
    for &s in samples {
        w.write_sample(s as f32)?;
    }
    w.finalize()?;
    Ok(())
}

/// Writes 16-bit PCM samples, clipping to [-1, 1).
pub fn write_wav_pcm16(path: &Path, samples: &[f64]) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut w = WavWriter::create(path, spec)?;
    for &s in samples {
        w.write_sample((s * 32768.0).round().clamp(-32768.0, 32767.0) as i16)?;
    }
    w.finalize()?;
    Ok(())
}
