//! Short-time Fourier analysis and weighted overlap-add synthesis.
//!
//! 512-point periodic Hann window, 256-sample hop, one-sided 257 bins. The
//! first frame starts at sample 0, so frame `t` only depends on samples up to
//! `256 t + 511`. Synthesis divides the overlap-added windowed frames by the
//! overlapped squared window, which inverts analysis exactly wherever at
//! least one window is non-zero.

use std::sync::{Arc, OnceLock};

use litese_autograd::{Tape, Tensor, Var};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, Result};

pub const WIN: usize = 512;
pub const HOP: usize = 256;
pub const BINS: usize = WIN / 2 + 1;
pub const SAMPLE_RATE: u32 = 16_000;
/// Frames per second implied by the hop.
pub const FRAME_RATE: f64 = SAMPLE_RATE as f64 / HOP as f64;

/// Squared-window sums below this are treated as uncovered samples.
const COVER_EPS: f64 = 1e-10;

struct Plans {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
}

fn plans() -> &'static Plans {
    static PLANS: OnceLock<Plans> = OnceLock::new();
    PLANS.get_or_init(|| {
        let mut planner = FftPlanner::new();
        Plans {
            fwd: planner.plan_fft_forward(WIN),
            inv: planner.plan_fft_inverse(WIN),
            window: (0..WIN)
                .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / WIN as f64).cos())
                .collect(),
        }
    })
}

/// The periodic Hann analysis window.
pub fn window() -> &'static [f64] {
    &plans().window
}

/// Number of full frames in `len` samples.
pub fn frame_count(len: usize) -> usize {
    if len < WIN {
        0
    } else {
        (len - WIN) / HOP + 1
    }
}

/// Signal length spanned by `frames` frames.
pub fn span(frames: usize) -> usize {
    if frames == 0 {
        0
    } else {
        (frames - 1) * HOP + WIN
    }
}

/// Complex spectrogram, `frames × 257`, row major.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: Vec<Complex64>,
}

impl Spectrogram {
    pub fn zeros(frames: usize) -> Self {
        Self {
            frames,
            bins: vec![Complex64::new(0.0, 0.0); frames * BINS],
        }
    }

    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.bins[t * BINS..(t + 1) * BINS]
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.bins.iter().map(|c| c.norm()).collect()
    }
}

/// One windowed frame to its 257 one-sided bins.
pub fn analyze_frame(samples: &[f64], out: &mut [Complex64]) {
    let p = plans();
    let mut buf: Vec<Complex64> = samples
        .iter()
        .zip(&p.window)
        .map(|(&x, &w)| Complex64::new(x * w, 0.0))
        .collect();
    p.fwd.process(&mut buf);
    out.copy_from_slice(&buf[..BINS]);
}

/// Real inverse FFT of one one-sided frame (imaginary parts of the DC and
/// Nyquist bins are ignored), without windowing.
pub fn synthesize_frame(bins: &[Complex64], out: &mut [f64]) {
    let p = plans();
    let mut buf = vec![Complex64::new(0.0, 0.0); WIN];
    buf[0] = Complex64::new(bins[0].re, 0.0);
    buf[WIN / 2] = Complex64::new(bins[WIN / 2].re, 0.0);
    for k in 1..WIN / 2 {
        buf[k] = bins[k];
        buf[WIN - k] = bins[k].conj();
    }
    p.inv.process(&mut buf);
    for (o, c) in out.iter_mut().zip(&buf) {
        *o = c.re / WIN as f64;
    }
}

/// Overlapped squared window at each of `len` output samples.
pub fn window_power(frames: usize) -> Vec<f64> {
    let w = window();
    let mut d = vec![0.0; span(frames)];
    for t in 0..frames {
        for n in 0..WIN {
            d[t * HOP + n] += w[n] * w[n];
        }
    }
    d
}

pub fn stft(wave: &[f64]) -> Result<Spectrogram> {
    if wave.len() < WIN {
        return invalid(format!("waveform of {} samples is shorter than one {}-sample window", wave.len(), WIN));
    }
    let frames = frame_count(wave.len());
    let mut spec = Spectrogram::zeros(frames);
    for t in 0..frames {
        analyze_frame(&wave[t * HOP..t * HOP + WIN], &mut spec.bins[t * BINS..(t + 1) * BINS]);
    }
    Ok(spec)
}

pub fn istft(spec: &Spectrogram) -> Result<Vec<f64>> {
    if spec.bins.len() != spec.frames * BINS {
        return invalid(format!("spectrogram must have {} bins per frame", BINS));
    }
    let w = window();
    let mut out = vec![0.0; span(spec.frames)];
    let mut frame = vec![0.0; WIN];
    for t in 0..spec.frames {
        synthesize_frame(spec.frame(t), &mut frame);
        for n in 0..WIN {
            out[t * HOP + n] += w[n] * frame[n];
        }
    }
    let d = window_power(spec.frames);
    for (o, &dv) in out.iter_mut().zip(&d) {
        *o = if dv > COVER_EPS { *o / dv } else { 0.0 };
    }
    Ok(out)
}

/// Differentiable STFT of `wave: [B, N]`, giving `[B, 2, T, 257]` with the
/// real part in channel 0 and the imaginary part in channel 1.
pub fn stft_var(tape: &Tape, wave: Var) -> Var {
    let wv = tape.value(wave);
    let [b, n] = wv.shape()[..] else {
        panic!("stft_var expects [B, N], got {:?}", wv.shape())
    };
    let t = frame_count(n);
    assert!(t > 0, "stft_var needs at least one frame");
    let mut out = vec![0.0; b * 2 * t * BINS];
    let mut bins = vec![Complex64::new(0.0, 0.0); BINS];
    for bi in 0..b {
        let x = &wv.data()[bi * n..(bi + 1) * n];
        for ti in 0..t {
            analyze_frame(&x[ti * HOP..ti * HOP + WIN], &mut bins);
            let re = (bi * 2 * t + ti) * BINS;
            let im = ((bi * 2 + 1) * t + ti) * BINS;
            for (k, c) in bins.iter().enumerate() {
                out[re + k] = c.re;
                out[im + k] = c.im;
            }
        }
    }
    tape.push_op(Tensor::new(&[b, 2, t, BINS], out), &[wave], move |g| {
        let p = plans();
        let gd = g.data();
        let mut gx = vec![0.0; b * n];
        let mut buf = vec![Complex64::new(0.0, 0.0); WIN];
        for bi in 0..b {
            for ti in 0..t {
                let re = (bi * 2 * t + ti) * BINS;
                let im = ((bi * 2 + 1) * t + ti) * BINS;
                buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
                for k in 0..BINS {
                    buf[k] = Complex64::new(gd[re + k], gd[im + k]);
                }
                // adjoint of the one-sided DFT: Re(sum_k G_k e^{+i 2 pi k n / N})
                p.inv.process(&mut buf);
                let dst = &mut gx[bi * n + ti * HOP..bi * n + ti * HOP + WIN];
                for ((d, c), &w) in dst.iter_mut().zip(&buf).zip(&p.window) {
                    *d += w * c.re;
                }
            }
        }
        vec![Some(Tensor::new(&[b, n], gx))]
    })
}

/// Differentiable inverse of [`stft_var`]: `[B, 2, T, 257]` to `[B, span(T)]`.
pub fn istft_var(tape: &Tape, spec: Var) -> Var {
    let sv = tape.value(spec);
    let [b, two, t, bins] = sv.shape()[..] else {
        panic!("istft_var expects [B, 2, T, 257], got {:?}", sv.shape())
    };
    assert!(two == 2 && bins == BINS, "istft_var expects [B, 2, T, 257]");
    let n = span(t);
    let d = window_power(t);
    let w = window();
    let mut out = vec![0.0; b * n];
    let mut cbins = vec![Complex64::new(0.0, 0.0); BINS];
    let mut frame = vec![0.0; WIN];
    for bi in 0..b {
        for ti in 0..t {
            let re = (bi * 2 * t + ti) * BINS;
            let im = ((bi * 2 + 1) * t + ti) * BINS;
            for k in 0..BINS {
                cbins[k] = Complex64::new(sv.data()[re + k], sv.data()[im + k]);
            }
            synthesize_frame(&cbins, &mut frame);
            for j in 0..WIN {
                out[bi * n + ti * HOP + j] += w[j] * frame[j];
            }
        }
        for (o, &dv) in out[bi * n..(bi + 1) * n].iter_mut().zip(&d) {
            *o = if dv > COVER_EPS { *o / dv } else { 0.0 };
        }
    }
    tape.push_op(Tensor::new(&[b, n], out), &[spec], move |g| {
        let p = plans();
        let gd = g.data();
        let mut gs = vec![0.0; b * 2 * t * BINS];
        let mut buf = vec![Complex64::new(0.0, 0.0); WIN];
        for bi in 0..b {
            for ti in 0..t {
                for j in 0..WIN {
                    let m = ti * HOP + j;
                    let gy = if d[m] > COVER_EPS { gd[bi * n + m] / d[m] } else { 0.0 };
                    buf[j] = Complex64::new(p.window[j] * gy, 0.0);
                }
                p.fwd.process(&mut buf);
                let re = (bi * 2 * t + ti) * BINS;
                let im = ((bi * 2 + 1) * t + ti) * BINS;
                for k in 0..BINS {
                    let c = if k == 0 || k == WIN / 2 { 1.0 } else { 2.0 } / WIN as f64;
                    gs[re + k] = c * buf[k].re;
                    gs[im + k] = if k == 0 || k == WIN / 2 { 0.0 } else { c * buf[k].im };
                }
            }
        }
        vec![Some(Tensor::new(&[b, 2, t, BINS], gs))]
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_is_periodic_hann() {
        let w = window();
        assert_eq!(w[0], 0.0);
        assert!((w[256] - 1.0).abs() < 1e-15);
        // periodic Hann sums to one at 50% overlap
        for n in 0..HOP {
            assert!((w[n] + w[n + HOP] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn frame_bookkeeping() {
        assert_eq!(frame_count(511), 0);
        assert_eq!(frame_count(512), 1);
        assert_eq!(frame_count(16000), 61);
        assert_eq!(span(61), 15872);
    }
}
