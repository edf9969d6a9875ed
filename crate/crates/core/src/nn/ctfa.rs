//! Causal time-frequency attention.
//!
//! A frequency-independent branch summarises each channel per frame (mean of
//! squares over frequency) and runs it through a time recurrence, producing
//! one gate per channel and frame. A frequency-dependent branch summarises
//! each bin per frame (mean of squares over channels) and runs two causal
//! `(3, 1)` convolutions, producing one gate per bin and frame. The input is
//! scaled by both gates.

use litese_autograd::Var;
use rand::Rng;

use super::ctx::Ctx;
use super::layers::{Conv, ConvShape, Gru, Linear, Prelu};
use super::param::{LayerCost, Module, Param};

/// Hidden channels of the frequency-dependent branch.
pub const EXPANSION: usize = 5;

#[derive(Clone, Debug)]
pub struct Ctfa {
    pub gru: Gru,
    pub lin: Linear,
    pub conv1: Conv,
    pub act: Prelu,
    pub conv2: Conv,
    pub c: usize,
    pub f: usize,
}

impl Ctfa {
    pub fn new<R: Rng + ?Sized>(name: &str, c: usize, f: usize, rng: &mut R) -> Self {
        let h = 2 * c;
        let conv = |n: &str, cin, cout, rng: &mut R| {
            Conv::new(
                &format!("{}.{}", name, n),
                ConvShape {
                    cin,
                    cout,
                    kernel: (3, 1),
                    stride: 1,
                    groups: 1,
                    transposed: false,
                },
                f,
                rng,
            )
        };
        Self {
            gru: Gru::new(&format!("{}.time_gru", name), c, h, false, 1, rng),
            lin: Linear::new(&format!("{}.time_fc", name), h, c, 1, rng),
            conv1: conv("freq_conv1", 1, EXPANSION, rng),
            act: Prelu::new(&format!("{}.freq_act", name), EXPANSION, EXPANSION, f),
            conv2: conv("freq_conv2", EXPANSION, 1, rng),
            c,
            f,
        }
    }

    /// Time gate `[B, C, T, 1]`.
    pub fn time_gate(&self, ctx: &Ctx, v: Var) -> Var {
        let t = ctx.tape;
        let [b, c, n, _] = t.shape(v)[..] else { unreachable!() };
        let sq = t.square(v);
        let z = t.reshape(t.mean_axis(sq, 3), &[b, c, n]);
        let z = t.permute(z, &[0, 2, 1]);
        let h = self.gru.forward(ctx, z, true);
        let a = t.sigmoid(self.lin.forward(ctx, h));
        t.reshape(t.permute(a, &[0, 2, 1]), &[b, c, n, 1])
    }

    /// Frequency gate `[B, 1, T, F]`.
    pub fn freq_gate(&self, ctx: &Ctx, v: Var) -> Var {
        let t = ctx.tape;
        let z = t.mean_axis(t.square(v), 1);
        let h = self.conv1.forward(ctx, z);
        let h = self.act.forward(ctx, h);
        t.sigmoid(self.conv2.forward(ctx, h))
    }

    pub fn forward(&self, ctx: &Ctx, v: Var) -> Var {
        let t = ctx.tape;
        let at = self.time_gate(ctx, v);
        let af = self.freq_gate(ctx, v);
        t.mul(t.mul(v, at), af)
    }
}

impl Module for Ctfa {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        self.gru.visit(f);
        self.lin.visit(f);
        self.conv1.visit(f);
        self.act.visit(f);
        self.conv2.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.gru.visit_mut(f);
        self.lin.visit_mut(f);
        self.conv1.visit_mut(f);
        self.act.visit_mut(f);
        self.conv2.visit_mut(f);
    }
    fn costs(&self, out: &mut Vec<LayerCost>) {
        self.gru.costs(out);
        self.lin.costs(out);
        self.conv1.costs(out);
        self.act.costs(out);
        self.conv2.costs(out);
    }
}
