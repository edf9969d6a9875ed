//! Hybrid training objective: a scale-invariant waveform term plus
//! power-compressed magnitude and real/imaginary spectral terms.
//!
//! Each term exists twice: over plain slices (for metrics and as a reference)
//! and on the tape (for training).

use litese_autograd::{Tape, Var};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::frontend::Spectrogram;

/// Guard added to the SISNR residual energy.
pub const SISNR_EPS: f64 = 1e-8;
/// Magnitudes are floored here before compression.
pub const MAG_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Weight of the SISNR term.
    pub alpha_w: f64,
    /// Share of the real/imaginary terms; the magnitude term gets `1 - beta_w`.
    pub beta_w: f64,
    /// Magnitude compression exponent.
    pub compress: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha_w: 0.01,
            beta_w: 0.3,
            compress: 0.3,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_w >= 0.0 && self.beta_w < 1.0) {
            return invalid(format!("beta_w {} outside [0, 1)", self.beta_w));
        }
        if !(self.compress > 0.0 && self.compress <= 1.0) {
            return invalid(format!("compress {} outside (0, 1]", self.compress));
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `(||s_t||^2, ||est - s_t||^2)` with `s_t` the projection onto `reference`.
fn projection_energies(est: &[f64], reference: &[f64]) -> Result<(f64, f64)> {
    if est.len() != reference.len() {
        return invalid(format!("length mismatch: {} vs {}", est.len(), reference.len()));
    }
    let rr = dot(reference, reference);
    if rr == 0.0 {
        return invalid("reference signal is all zero");
    }
    let a = dot(est, reference) / rr;
    let target = a * a * rr;
    let resid: f64 = est.iter().zip(reference).map(|(e, r)| (e - a * r).powi(2)).sum();
    Ok((target, resid))
}

/// `-log10(||s_t||^2 / (||e||^2 + eps))`; no factor of ten.
pub fn sisnr_loss(est: &[f64], reference: &[f64]) -> Result<f64> {
    let (t, e) = projection_energies(est, reference)?;
    Ok(-(t / (e + SISNR_EPS)).log10())
}

/// SISNR in dB, exact division; a perfect estimate gives `+inf`.
pub fn sisnr_db(est: &[f64], reference: &[f64]) -> Result<f64> {
    let (t, e) = projection_energies(est, reference)?;
    Ok(10.0 * (t / e).log10())
}

fn compressed(re: f64, im: f64, p: f64) -> (f64, f64, f64) {
    let m = (re * re + im * im).sqrt().max(MAG_FLOOR);
    let scale = m.powf(p - 1.0);
    (m.powf(p), re * scale, im * scale)
}

/// `(L_mag, L_real, L_imag)`, each a mean over all bins.
pub fn spectral_losses(est: &Spectrogram, reference: &Spectrogram, compress: f64) -> Result<(f64, f64, f64)> {
    if est.frames != reference.frames || est.bins.len() != reference.bins.len() {
        return invalid("spectrogram shapes differ");
    }
    let n = est.bins.len().max(1) as f64;
    let (mut lm, mut lr, mut li) = (0.0, 0.0, 0.0);
    for (a, b) in est.bins.iter().zip(&reference.bins) {
        let (ma, ra, ia) = compressed(a.re, a.im, compress);
        let (mb, rb, ib) = compressed(b.re, b.im, compress);
        lm += (ma - mb).powi(2);
        lr += (ra - rb).powi(2);
        li += (ia - ib).powi(2);
    }
    Ok((lm / n, lr / n, li / n))
}

pub fn hybrid_loss(
    est_wave: &[f64],
    ref_wave: &[f64],
    est_spec: &Spectrogram,
    ref_spec: &Spectrogram,
    w: &LossWeights,
) -> Result<f64> {
    let s = sisnr_loss(est_wave, ref_wave)?;
    let (m, r, i) = spectral_losses(est_spec, ref_spec, w.compress)?;
    Ok(w.alpha_w * s + (1.0 - w.beta_w) * m + w.beta_w * (r + i))
}

/// Batch mean of [`sisnr_loss`] over rows of `[B, N]` tensors.
pub fn sisnr_loss_var(tape: &Tape, est: Var, reference: Var) -> Var {
    let rr = tape.sum_axis(tape.square(reference), 1);
    let er = tape.sum_axis(tape.mul(est, reference), 1);
    let a = tape.div(er, rr);
    let target = tape.mul(a, reference);
    let t = tape.sum_axis(tape.square(target), 1);
    let e = tape.sum_axis(tape.square(tape.sub(est, target)), 1);
    let ratio = tape.div(t, tape.add_scalar(e, SISNR_EPS));
    tape.neg(tape.mean_all(tape.log10(ratio)))
}

/// Compressed `(|S|^p, Re/|S|^(1-p), Im/|S|^(1-p))` of a `[B, 2, T, F]` map.
fn compressed_var(tape: &Tape, s: Var, p: f64) -> (Var, Var, Var) {
    let re = tape.narrow(s, 1, 0, 1);
    let im = tape.narrow(s, 1, 1, 1);
    let sq = tape.floor_at(tape.add(tape.square(re), tape.square(im)), MAG_FLOOR * MAG_FLOOR);
    let mag = tape.powf(sq, p / 2.0);
    let scale = tape.powf(sq, (p - 1.0) / 2.0);
    (mag, tape.mul(re, scale), tape.mul(im, scale))
}

fn mse(tape: &Tape, a: Var, b: Var) -> Var {
    tape.mean_all(tape.square(tape.sub(a, b)))
}

/// Tape form of [`spectral_losses`] over `[B, 2, T, F]` maps.
pub fn spectral_losses_var(tape: &Tape, est: Var, reference: Var, compress: f64) -> (Var, Var, Var) {
    let (ma, ra, ia) = compressed_var(tape, est, compress);
    let (mb, rb, ib) = compressed_var(tape, reference, compress);
    (mse(tape, ma, mb), mse(tape, ra, rb), mse(tape, ia, ib))
}

/// Tape form of [`hybrid_loss`].
pub fn hybrid_loss_var(tape: &Tape, est_wave: Var, ref_wave: Var, est_spec: Var, ref_spec: Var, w: &LossWeights) -> Var {
    let s = sisnr_loss_var(tape, est_wave, ref_wave);
    let (m, r, i) = spectral_losses_var(tape, est_spec, ref_spec, w.compress);
    let spec = tape.add(tape.scale(m, 1.0 - w.beta_w), tape.scale(tape.add(r, i), w.beta_w));
    tape.add(tape.scale(s, w.alpha_w), spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_example() {
        // est [1, 0] onto [1, 1]: target [0.5, 0.5], residual [0.5, -0.5].
        let l = sisnr_loss(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((l - -(0.5f64 / (0.5 + SISNR_EPS)).log10()).abs() < 1e-15);
        assert!(l.abs() < 1e-7);
    }

    #[test]
    fn scale_invariance_and_cap() {
        let s = [0.3, -1.2, 0.8, 0.1];
        let a = sisnr_loss(&s, &s).unwrap();
        assert!(a.is_finite() && a < -7.0);
        // exact invariance away from the cap
        let e = [0.5, -1.0, 0.9, -0.2];
        let b: Vec<f64> = e.iter().map(|v| v * 3.5).collect();
        assert!((sisnr_loss(&b, &s).unwrap() - sisnr_loss(&e, &s).unwrap()).abs() < 1e-6);
        assert!(sisnr_loss(&s, &[0.0; 4]).is_err());
    }
}
