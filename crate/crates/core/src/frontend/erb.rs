//! ERB band merging (257 bins to 129 features) and splitting (back to 257).
//!
//! Bins 0..=64 pass through. The 192 bins above are covered by 64 triangular
//! filters whose centres are evenly spaced on the ERB-rate scale between the
//! frequency of bin 65 (2031.25 Hz) and 8 kHz. Neighbouring triangles overlap
//! so that, at every bin, the weights of all filters sum to one.

use litese_autograd::{Tape, Tensor, Var};

use super::stft::{BINS, SAMPLE_RATE, WIN};
use crate::error::{invalid, Result};

pub const PASS: usize = 65;
pub const BANDS: usize = 64;
pub const MERGED: usize = PASS + BANDS;
pub const HIGH: usize = BINS - PASS;

pub fn erb_rate(hz: f64) -> f64 {
    21.4 * (1.0 + 0.00437 * hz).log10()
}

pub fn bin_hz(k: usize) -> f64 {
    k as f64 * SAMPLE_RATE as f64 / WIN as f64
}

#[derive(Clone, Debug)]
pub struct ErbFilterbank {
    /// `[192, 64]`: weight of high bin `k` in band `j`; columns sum to one.
    pub merge_high: Tensor,
    /// `[64, 192]`: weight of band `j` in high bin `k`; columns sum to one.
    pub split_high: Tensor,
}

impl Default for ErbFilterbank {
    fn default() -> Self {
        Self::new()
    }
}

impl ErbFilterbank {
    pub fn new() -> Self {
        let lo = erb_rate(bin_hz(PASS));
        let hi = erb_rate(bin_hz(BINS - 1));
        let step = (hi - lo) / (BANDS - 1) as f64;
        // hat[k][j]: triangular weight of band j at high bin k
        let hat: Vec<Vec<f64>> = (0..HIGH)
            .map(|k| {
                let e = erb_rate(bin_hz(PASS + k));
                (0..BANDS)
                    .map(|j| (1.0 - ((e - (lo + j as f64 * step)) / step).abs()).max(0.0))
                    .collect()
            })
            .collect();
        let mut merge = Tensor::zeros(&[HIGH, BANDS]);
        for j in 0..BANDS {
            let total: f64 = (0..HIGH).map(|k| hat[k][j]).sum();
            assert!(total > 0.0, "ERB band {} covers no bin", j);
            for k in 0..HIGH {
                merge.set(&[k, j], hat[k][j] / total);
            }
        }
        let mut split = Tensor::zeros(&[BANDS, HIGH]);
        for (k, row) in hat.iter().enumerate() {
            let total: f64 = row.iter().sum();
            for j in 0..BANDS {
                split.set(&[j, k], row[j] / total);
            }
        }
        Self {
            merge_high: merge,
            split_high: split,
        }
    }

    /// Full `[129, 257]` merge matrix (row = output feature).
    pub fn merge_matrix(&self) -> Tensor {
        let mut m = Tensor::zeros(&[MERGED, BINS]);
        for k in 0..PASS {
            m.set(&[k, k], 1.0);
        }
        for j in 0..BANDS {
            for k in 0..HIGH {
                m.set(&[PASS + j, PASS + k], self.merge_high.at(&[k, j]));
            }
        }
        m
    }

    /// Full `[257, 129]` split matrix (row = output bin).
    pub fn split_matrix(&self) -> Tensor {
        let mut m = Tensor::zeros(&[BINS, MERGED]);
        for k in 0..PASS {
            m.set(&[k, k], 1.0);
        }
        for k in 0..HIGH {
            for j in 0..BANDS {
                m.set(&[PASS + k, PASS + j], self.split_high.at(&[j, k]));
            }
        }
        m
    }

    /// Merges the last axis of a plain tensor from 257 to 129.
    pub fn merge(&self, x: &Tensor) -> Result<Tensor> {
        self.apply(x, BINS, true)
    }

    /// Splits the last axis of a plain tensor from 129 to 257.
    pub fn split(&self, x: &Tensor) -> Result<Tensor> {
        self.apply(x, MERGED, false)
    }

    fn apply(&self, x: &Tensor, want: usize, merge: bool) -> Result<Tensor> {
        if x.shape().last() != Some(&want) {
            return invalid(format!("last axis must be {}, got shape {:?}", want, x.shape()));
        }
        let tape = Tape::no_grad();
        let v = tape.constant(x.clone());
        let (m, s) = (tape.constant(self.merge_high.clone()), tape.constant(self.split_high.clone()));
        let y = if merge { band_merge(&tape, v, m) } else { band_split(&tape, v, s) };
        Ok((*tape.value(y)).clone())
    }
}

/// Tape form of the merge; `m` is the `[192, 64]` high-band matrix.
pub fn band_merge(tape: &Tape, x: Var, m: Var) -> Var {
    let r = tape.shape(x).len() - 1;
    let low = tape.narrow(x, r, 0, PASS);
    let high = tape.narrow(x, r, PASS, HIGH);
    let merged = tape.matmul_last(high, m);
    tape.concat(&[low, merged], r)
}

/// Tape form of the split; `s` is the `[64, 192]` high-band matrix.
pub fn band_split(tape: &Tape, x: Var, s: Var) -> Var {
    let r = tape.shape(x).len() - 1;
    let low = tape.narrow(x, r, 0, PASS);
    let bands = tape.narrow(x, r, PASS, BANDS);
    let high = tape.matmul_last(bands, s);
    tape.concat(&[low, high], r)
}
