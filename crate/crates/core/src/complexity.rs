//! Parameter and MAC accounting.
//!
//! Counting convention: every convolution carries a bias (one MAC per output
//! element), batch norm and PReLU cost two MACs per element, layer norm two
//! per element, a GRU step `3h(in + h) + 13h`, a dense layer `in * out + out`
//! per row; the adaptive PReLU, logistic gates, means and attention products
//! are free. Reparameterized blocks are counted in their merged form. The
//! fixed band matrices are counted as parameters and as one matrix product
//! per frame each.

use std::collections::BTreeMap;

use litese_autograd::{Tape, Tensor};
use serde::Serialize;

use crate::error::Result;
use crate::frontend::{BINS, FRAME_RATE};
use crate::network::{ArchitectureSpec, Model};
use crate::nn::{Ctx, LayerCost, Module};

#[derive(Clone, Debug, Serialize)]
pub struct ComplexityReport {
    pub params: u64,
    pub macs_per_frame: u64,
    pub frame_rate: f64,
    /// MACs per second of audio.
    pub macs: f64,
    pub layers: Vec<LayerCost>,
}

impl ComplexityReport {
    pub fn from_layers(layers: Vec<LayerCost>) -> Self {
        let params = layers.iter().map(|l| l.params).sum();
        let macs_per_frame = layers.iter().map(|l| l.macs).sum();
        Self {
            params,
            macs_per_frame,
            frame_rate: FRAME_RATE,
            macs: macs_per_frame as f64 * FRAME_RATE,
            layers,
        }
    }

    pub fn kparams(&self) -> f64 {
        self.params as f64 / 1e3
    }

    pub fn gmacs(&self) -> f64 {
        self.macs / 1e9
    }

    pub fn mmacs(&self) -> f64 {
        self.macs / 1e6
    }

    /// Totals grouped by the first `depth` dot-separated components of the
    /// layer names (`enc.0`, `mid`, ...).
    pub fn grouped(&self, depth: usize) -> BTreeMap<String, (u64, u64)> {
        let mut out = BTreeMap::new();
        for l in &self.layers {
            let key = l.name.split('.').take(depth).collect::<Vec<_>>().join(".");
            let e = out.entry(key).or_insert((0, 0));
            e.0 += l.params;
            e.1 += l.macs;
        }
        out
    }
}

pub fn report(model: &Model) -> ComplexityReport {
    ComplexityReport::from_layers(model.merged().cost_list())
}

pub fn report_spec(spec: &ArchitectureSpec) -> Result<ComplexityReport> {
    Ok(report(&Model::assemble(spec, 0)?))
}

pub fn count_params(model: &Model) -> u64 {
    report(model).params
}

/// MACs per second of audio.
pub fn count_macs(model: &Model) -> f64 {
    report(model).macs
}

/// MACs per frame of a biased or bias-free convolution.
pub fn conv_macs(cin: usize, cout: usize, kernel: (usize, usize), groups: usize, f_out: usize, bias: bool) -> u64 {
    let per = cin / groups * kernel.0 * kernel.1 + usize::from(bias);
    (cout * f_out * per) as u64
}

/// MACs actually executed per layer by a one-frame forward pass of the
/// merged model, as recorded by the instrumented kernels.
pub fn measured_macs(model: &Model) -> BTreeMap<String, u64> {
    let merged = model.merged();
    let tape = Tape::no_grad();
    tape.enable_mac_counting();
    let ctx = Ctx::eval(&tape);
    let x = tape.constant(Tensor::zeros(&[1, 1, 1, BINS]));
    merged.forward(&ctx, x);
    tape.mac_counts()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pointwise_example() {
        // 16 -> 16 pointwise over 33 bins at 62.5 frames/s, no bias.
        let m = conv_macs(16, 16, (1, 1), 1, 33, false) as f64 * FRAME_RATE;
        assert_eq!(m, 528_000.0);
        let biased = conv_macs(16, 16, (1, 1), 1, 33, true) as f64 * FRAME_RATE;
        assert_eq!(biased, 561_000.0);
    }
}
