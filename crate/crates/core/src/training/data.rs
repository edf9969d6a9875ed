//! Additive-noise mixing and a synthetic tone-plus-noise corpus.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::frontend::{HOP, SAMPLE_RATE};

pub const SNR_RANGE: (f64, f64) = (-5.0, 15.0);
/// Frames quieter than this fraction of the loudest frame are inactive.
const ACTIVE_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct MixSpec<'a> {
    pub snr_db: f64,
    pub clean: &'a [f64],
    pub noise: &'a [f64],
}

/// Per-sample activity of `clean`, decided per 256-sample frame.
pub fn active_region(clean: &[f64]) -> Vec<bool> {
    let energies: Vec<f64> = clean.chunks(HOP).map(|c| c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64).collect();
    let peak = energies.iter().cloned().fold(0.0, f64::max);
    let mut out = Vec::with_capacity(clean.len());
    for (c, e) in clean.chunks(HOP).zip(&energies) {
        out.extend(std::iter::repeat(*e > peak * ACTIVE_FLOOR).take(c.len()));
    }
    out
}

fn power_over(x: &[f64], mask: &[bool]) -> f64 {
    let (s, n) = x
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, n), (v, _)| (s + v * v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// SNR of `noise` against `clean` over the active region of `clean`.
pub fn measured_snr_db(clean: &[f64], noise: &[f64]) -> f64 {
    let act = active_region(clean);
    10.0 * (power_over(clean, &act) / power_over(noise, &act)).log10()
}

/// Factor applied to the noise to reach the requested SNR.
pub fn noise_scale(spec: &MixSpec) -> Result<f64> {
    let act = active_region(spec.clean);
    let pc = power_over(spec.clean, &act);
    if pc == 0.0 {
        return invalid("clean signal is silent");
    }
    let pn = power_over(&spec.noise[..spec.clean.len().min(spec.noise.len())], &act);
    if pn == 0.0 {
        return invalid("noise is silent over the active region");
    }
    Ok((pc / (pn * 10f64.powf(spec.snr_db / 10.0))).sqrt())
}

/// `(noisy, target)`; the noise is cropped to the clean length.
pub fn mix(spec: &MixSpec) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(SNR_RANGE.0..=SNR_RANGE.1).contains(&spec.snr_db) {
        return invalid(format!("snr {} dB outside [{}, {}]", spec.snr_db, SNR_RANGE.0, SNR_RANGE.1));
    }
    let n = spec.clean.len();
    if n < SAMPLE_RATE as usize || spec.noise.len() < n {
        return invalid("clean and noise need at least one second, and noise as long as clean");
    }
    let g = noise_scale(spec)?;
    let noisy = spec.clean.iter().zip(spec.noise).map(|(c, v)| c + g * v).collect();
    Ok((noisy, spec.clean.to_vec()))
}

/// Harmonic tone with a slow amplitude envelope.
pub fn tone<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let f0 = rng.gen_range(110.0..420.0);
    let harmonics = rng.gen_range(1..=4);
    let amps: Vec<f64> = (0..harmonics).map(|h| rng.gen_range(0.3..1.0) / (h + 1) as f64).collect();
    let phases: Vec<f64> = (0..harmonics).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
    let am = rng.gen_range(1.0..4.0);
    let amp = rng.gen_range(0.1..0.5);
    (0..len)
        .map(|n| {
            let t = n as f64 / sr;
            let env = 0.6 + 0.4 * (std::f64::consts::TAU * am * t).sin();
            let s: f64 = amps
                .iter()
                .zip(&phases)
                .enumerate()
                .map(|(h, (a, p))| a * (std::f64::consts::TAU * f0 * (h + 1) as f64 * t + p).sin())
                .sum();
            amp * env * s
        })
        .collect()
}

/// White or one-pole low-passed Gaussian noise.
pub fn noise<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    let pole = if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(0.5..0.95) };
    let mut y = 0.0;
    (0..len)
        .map(|_| {
            let w: f64 = StandardNormal.sample(rng);
            y = pole * y + (1.0 - pole) * w;
            y
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub pairs: usize,
    /// Samples per pair.
    pub length: usize,
    pub snr_db: (f64, f64),
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            pairs: 64,
            length: 64 * HOP,
            snr_db: (-5.0, 5.0),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Pair {
    pub noisy: Vec<f64>,
    pub clean: Vec<f64>,
    pub snr_db: f64,
}

/// Deterministic tone-plus-noise pairs.
pub fn synthetic_set<R: Rng + ?Sized>(cfg: &SyntheticConfig, rng: &mut R) -> Result<Vec<Pair>> {
    (0..cfg.pairs)
        .map(|_| {
            let len = cfg.length.max(SAMPLE_RATE as usize);
            let clean = tone(len, rng);
            let nz = noise(len, rng);
            let snr = rng.gen_range(cfg.snr_db.0..=cfg.snr_db.1);
            let (mut noisy, mut clean) = mix(&MixSpec {
                snr_db: snr,
                clean: &clean,
                noise: &nz,
            })?;
            noisy.truncate(cfg.length);
            clean.truncate(cfg.length);
            Ok(Pair { noisy, clean, snr_db: snr })
        })
        .collect()
}
