//! Leaf layers. Each one opens a MAC scope named after itself, so an
//! instrumented forward pass attributes work exactly like [`Module::costs`].

use litese_autograd::{gru_step_macs, Conv2dCfg, Tensor, Var};
use rand::Rng;

use super::ctx::{BnUpdate, Ctx};
use super::param::{LayerCost, Module, Param};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

fn scoped<T>(ctx: &Ctx, name: &str, f: impl FnOnce() -> T) -> T {
    ctx.tape.push_scope(name);
    let out = f();
    ctx.tape.pop_scope();
    out
}

fn cost(name: &str, params: usize, macs: usize) -> LayerCost {
    LayerCost {
        name: name.to_string(),
        params: params as u64,
        macs: macs as u64,
    }
}

/// Causal 2-D convolution with bias over `[B, C, T, F]`.
#[derive(Clone, Debug)]
pub struct Conv {
    pub name: String,
    pub w: Param,
    pub b: Param,
    pub cin: usize,
    pub cout: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub groups: usize,
    pub transposed: bool,
    pub f_in: usize,
    pub f_out: usize,
}

pub struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub groups: usize,
    pub transposed: bool,
}

impl Conv {
    pub fn new<R: Rng + ?Sized>(name: &str, s: ConvShape, f_in: usize, rng: &mut R) -> Self {
        let (kt, kf) = s.kernel;
        assert!(kf % 2 == 1, "frequency kernel extent must be odd, got {}", kf);
        assert!(s.cin % s.groups == 0 && s.cout % s.groups == 0);
        let fan_in = s.cin / s.groups * kt * kf;
        let cfg = Conv2dCfg {
            stride: s.stride,
            pad: (kf - 1) / 2,
            time_pad: 0,
            groups: s.groups,
            transposed: s.transposed,
        };
        let f_out = litese_autograd::conv_out_len(f_in, kf, &cfg);
        Self {
            w: Param::fan_in(format!("{}.weight", name), &[s.cout, s.cin / s.groups, kt, kf], fan_in, rng),
            b: Param::fan_in(format!("{}.bias", name), &[s.cout], fan_in, rng),
            name: name.to_string(),
            cin: s.cin,
            cout: s.cout,
            kernel: s.kernel,
            stride: s.stride,
            groups: s.groups,
            transposed: s.transposed,
            f_in,
            f_out,
        }
    }

    fn cfg(&self, time_pad: usize) -> Conv2dCfg {
        Conv2dCfg {
            stride: self.stride,
            pad: (self.kernel.1 - 1) / 2,
            time_pad,
            groups: self.groups,
            transposed: self.transposed,
        }
    }

    pub fn forward(&self, ctx: &Ctx, x: Var) -> Var {
        scoped(ctx, &self.name, || {
            let t = ctx.tape;
            let (w, b) = (ctx.param(&self.w), ctx.param(&self.b));
            let hist = self.kernel.0 - 1;
            if !ctx.is_streaming() || hist == 0 {
                return t.conv2d(x, w, Some(b), self.cfg(hist));
            }
            let shape = t.shape(x);
            let prev = ctx
                .load_state(&self.name)
                .unwrap_or_else(|| Tensor::zeros(&[shape[0], shape[1], hist, shape[3]]));
            let p = t.constant(prev);
            let xin = t.concat(&[p, x], 2);
            let len = t.shape(xin)[2];
            ctx.store_state(&self.name, t.value(xin).narrow(2, len - hist, hist));
            t.conv2d(xin, w, Some(b), self.cfg(0))
        })
    }
}

impl Module for Conv {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        f(&self.w);
        f(&self.b);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.w);
        f(&mut self.b);
    }
    fn costs(&self, out: &mut Vec<LayerCost>) {
        let (kt, kf) = self.kernel;
        let per = self.cin / self.groups * kt * kf + 1;
        out.push(cost(&self.name, self.w.numel() + self.b.numel(), self.cout * self.f_out * per));
    }
}

/// Batch norm over channel axis 1 with running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub name: String,
    pub gamma: Param,
    pub beta: Param,
    pub mean: Param,
    pub var: Param,
    pub f: usize,
}

impl BatchNorm {
    pub fn new(name: &str, c: usize, f: usize) -> Self {
        Self {
            gamma: Param::new(format!("{}.gamma", name), Tensor::ones(&[c])),
            beta: Param::new(format!("{}.beta", name), Tensor::zeros(&[c])),
            mean: Param::buffer(format!("{}.running_mean", name), Tensor::zeros(&[c])),
            var: Param::buffer(format!("{}.running_var", name), Tensor::ones(&[c])),
            name: name.to_string(),
            f,
        }
    }

    /// Identity at inference: unit scale, zero shift, statistics chosen so
    /// that `1/sqrt(var + eps) == 1`.
    pub fn identity(name: &str, c: usize, f: usize) -> Self {
        let mut bn = Self::new(name, c, f);
        bn.var.value = Tensor::full(&[c], 1.0 - BN_EPS);
        bn
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }

    /// Inference-time per-channel `(scale, shift)`.
    pub fn affine(&self) -> (Vec<f64>, Vec<f64>) {
        let c = self.channels();
        let mut scale = vec![0.0; c];
        let mut shift = vec![0.0; c];
        for i in 0..c {
            scale[i] = self.gamma.value.data()[i] / (self.var.value.data()[i] + BN_EPS).sqrt();
            shift[i] = self.beta.value.data()[i] - self.mean.value.data()[i] * scale[i];
        }
        (scale, shift)
    }

    pub fn forward(&self, ctx: &Ctx, x: Var) -> Var {
        scoped(ctx, &self.name, || {
            let (g, b) = (ctx.param(&self.gamma), ctx.param(&self.beta));
            if ctx.is_train() {
                let shape = ctx.tape.shape(x);
                let out = ctx.tape.batch_norm_train(x, g, b, BN_EPS);
                ctx.record_bn(BnUpdate {
                    name: self.name.clone(),
                    mean: out.mean,
                    var: out.var,
                    count: shape.iter().product::<usize>() / shape[1],
                });
                out.y
            } else {
                ctx.tape
                    .batch_norm_eval(x, g, b, &self.mean.value, &self.var.value, BN_EPS)
            }
        })
    }

    pub fn apply_update(&mut self, u: &BnUpdate) {
        let n = u.count as f64;
        let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
        for i in 0..self.channels() {
            let m = &mut self.mean.value.data_mut()[i];
            *m = (1.0 - BN_MOMENTUM) * *m + BN_MOMENTUM * u.mean.data()[i];
            let v = &mut self.var.value.data_mut()[i];
            *v = (1.0 - BN_MOMENTUM) * *v + BN_MOMENTUM * u.var.data()[i] * unbias;
        }
    }
}

impl Module for BatchNorm {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        f(&self.gamma);
        f(&self.beta);
        f(&self.mean);
        f(&self.var);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
        f(&mut self.mean);
        f(&mut self.var);
    }
    fn costs(&self, out: &mut Vec<LayerCost>) {
        let c = self.channels();
        out.push(cost(&self.name, 2 * c, 2 * c * self.f));
    }
}

/// PReLU with a shared or per-channel slope.
#[derive(Clone, Debug)]
pub struct Prelu {
    pub name: String,
    pub alpha: Param,
    pub c: usize,
    pub f: usize,
}

impl Prelu {
    pub fn new(name: &str, slopes: usize, c: usize, f: usize) -> Self {
        Self {
            alpha: Param::new(format!("{}.alpha", name), Tensor::full(&[slopes], 0.25)),
            name: name.to_string(),
            c,
            f,
        }
    }

    pub fn forward(&self, ctx: &Ctx, x: Var) -> Var {
        scoped(ctx, &self.name, || ctx.tape.prelu(x, ctx.param(&self.alpha)))
    }
}

impl Module for Prelu {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        f(&self.alpha);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.alpha);
    }
    fn costs(&self, out: &mut Vec<LayerCost>) {
        out.push(cost(&self.name, self.alpha.numel(), 2 * self.c * self.f));
    }
}

/// Plain affine PReLU on `[C, T, F]` or `[B, C, T, F]`, with `γ, β: [C, F]`
/// and `α: [C]`.
pub fn aprelu(x: &Tensor, gamma: &Tensor, beta: &Tensor, alpha: &Tensor) -> crate::error::Result<Tensor> {
    let s = x.shape();
    if s.len() < 3 {
        return crate::error::invalid(format!("aprelu expects [.., C, T, F], got {:?}", s));
    }
    let (c, t, f) = (s[s.len() - 3], s[s.len() - 2], s[s.len() - 1]);
    if gamma.shape() != [c, f] || beta.shape() != [c, f] || alpha.shape() != [c] {
        return crate::error::invalid(format!(
            "aprelu parameters {:?}/{:?}/{:?} do not match input {:?}",
            gamma.shape(),
            beta.shape(),
            alpha.shape(),
            s
        ));
    }
    let mut out = x.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let fi = i % f;
        let ci = (i / (t * f)) % c;
        let a = if *v > 0.0 { *v } else { alpha.data()[ci] * *v };
        *v = gamma.data()[ci * f + fi] * *v + beta.data()[ci * f + fi] + a;
    }
    Ok(out)
}

/// Affine PReLU: `γ⊙x + β + PReLU_α(x)` with frequency-dependent `γ, β`.
#[derive(Clone, Debug)]
pub struct Aprelu {
    pub name: String,
    pub gamma: Param,
    pub beta: Param,
    pub alpha: Param,
}

impl Aprelu {
    pub fn new(name: &str, c: usize, f: usize) -> Self {
        Self {
            gamma: Param::new(format!("{}.gamma", name), Tensor::ones(&[c, f])),
            beta: Param::new(format!("{}.beta", name), Tensor::zeros(&[c, f])),
            alpha: Param::new(format!("{}.alpha", name), Tensor::full(&[c], 0.25)),
            name: name.to_string(),
        }
    }

    pub fn forward(&self, ctx: &Ctx, x: Var) -> Var {
        scoped(ctx, &self.name, || {
            ctx.tape.aprelu(
                x,
                ctx.param(&self.gamma),
                ctx.param(&self.beta),
                ctx.param(&self.alpha),
            )
        })
    }
}

impl Module for Aprelu {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        f(&self.gamma);
        f(&self.beta);
        f(&self.alpha);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
        f(&mut self.alpha);
    }
    fn costs(&self, out: &mut Vec<LayerCost>) {
        let n = self.gamma.numel() + self.beta.numel() + self.alpha.numel();
        // the affine branch is treated as free, like the slope product
        out.push(cost(&self.name, n, 0));
    }
}

/// Activation slot inside a block.
#[derive(Clone, Debug)]
pub enum Act {
    Prelu(Prelu),
    Aprelu(Aprelu),
    Identity,
}

impl Act {
    /// Scalar-slope PReLU for plain blocks, APReLU for extended ones.
    pub fn build(name: &str, extended: bool, c: usize, f: usize) -> Self {
        if extended {
            Act::Aprelu(Aprelu::new(name, c, f))
        } else {
            Act::Prelu(Prelu::new(name, 1, c, f))
        }
    }

    pub fn forward(&self, ctx: &Ctx, x: Var) -> Var {
        match self {
            Act::Prelu(p) => p.forward(ctx, x),
            Act::Aprelu(p) => p.forward(ctx, x),
            Act::Identity => x,
        }
    }
}

impl Module for Act {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        match self {
            Act::Prelu(p) => p.visit(f),
            Act::Aprelu(p) => p.visit(f),
            Act::Identity => {}
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        match self {
            Act::Prelu(p) => p.visit_mut(f),
            Act::Aprelu(p) => p.visit_mut(f),
            Act::Identity => {}
        }
    }
    fn costs(&self, out: &mut Vec<LayerCost>) {
        match self {
            Act::Prelu(p) => p.costs(out),
            Act::Aprelu(p) => p.costs(out),
            Act::Identity => {}
        }
    }
}

/// Dense layer over the last axis. `rows` is the number of rows it sees per
/// frame, used only for cost reporting.
#[derive(Clone, Debug)]
pub struct Linear {
    pub name: String,
    pub w: Param,
    pub b: Param,
    pub rows: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(name: &str, inp: usize, out: usize, rows: usize, rng: &mut R) -> Self {
        Self {
            w: Param::fan_in(format!("{}.weight", name), &[out, inp], inp, rng),
            b: Param::fan_in(format!("{}.bias", name), &[out], inp, rng),
            name: name.to_string(),
            rows,
        }
    }

    pub fn forward(&self, ctx: &Ctx, x: Var) -> Var {
        scoped(ctx, &self.name, || {
            ctx.tape
                .linear(x, ctx.param(&self.w), Some(ctx.param(&self.b)))
        })
    }
}

impl Module for Linear {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        f(&self.w);
        f(&self.b);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.w);
        f(&mut self.b);
    }
    fn costs(&self, out: &mut Vec<LayerCost>) {
        let (o, i) = (self.w.value.dim(0), self.w.value.dim(1));
        out.push(cost(&self.name, o * i + o, self.rows * (i * o + o)));
    }
}

/// GRU layer. `steps` is the number of recurrence steps it runs per frame.
#[derive(Clone, Debug)]
pub struct Gru {
    pub name: String,
    pub w_ih: Param,
    pub w_hh: Param,
    pub b_ih: Param,
    pub b_hh: Param,
    pub input: usize,
    pub hidden: usize,
    pub reverse: bool,
    pub steps: usize,
}

impl Gru {
    pub fn new<R: Rng + ?Sized>(name: &str, input: usize, hidden: usize, reverse: bool, steps: usize, rng: &mut R) -> Self {
        let p = |n: &str, shape: &[usize], rng: &mut R| Param::fan_in(format!("{}.{}", name, n), shape, hidden, rng);
        Self {
            w_ih: p("w_ih", &[3 * hidden, input], rng),
            w_hh: p("w_hh", &[3 * hidden, hidden], rng),
            b_ih: p("b_ih", &[3 * hidden], rng),
            b_hh: p("b_hh", &[3 * hidden], rng),
            name: name.to_string(),
            input,
            hidden,
            reverse,
            steps,
        }
    }

    /// Runs over `x: [N, L, in]`. A time-recurrent layer (`carry`) keeps its
    /// last hidden state across streaming calls.
    pub fn forward(&self, ctx: &Ctx, x: Var, carry: bool) -> Var {
        scoped(ctx, &self.name, || {
            let t = ctx.tape;
            let stateful = carry && ctx.is_streaming();
            assert!(!(stateful && self.reverse), "a reverse recurrence cannot stream");
            let h0 = if stateful {
                ctx.load_state(&self.name).map(|h| t.constant(h))
            } else {
                None
            };
            let y = t.gru(
                x,
                h0,
                ctx.param(&self.w_ih),
                ctx.param(&self.w_hh),
                ctx.param(&self.b_ih),
                ctx.param(&self.b_hh),
                self.reverse,
            );
            if stateful {
                let s = t.shape(y);
                let last = t.value(y).narrow(1, s[1] - 1, 1).reshape(&[s[0], s[2]]);
                ctx.store_state(&self.name, last);
            }
            y
        })
    }
}

impl Module for Gru {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        f(&self.w_ih);
        f(&self.w_hh);
        f(&self.b_ih);
        f(&self.b_hh);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.w_ih);
        f(&mut self.w_hh);
        f(&mut self.b_ih);
        f(&mut self.b_hh);
    }
    fn costs(&self, out: &mut Vec<LayerCost>) {
        let (i, h) = (self.input, self.hidden);
        out.push(cost(&self.name, 3 * (h * i + h * h + 2 * h), self.steps * gru_step_macs(i, h)));
    }
}

/// Layer norm over trailing axes of the given shape.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub name: String,
    pub gamma: Param,
    pub beta: Param,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(name: &str, shape: &[usize], eps: f64) -> Self {
        Self {
            gamma: Param::new(format!("{}.gamma", name), Tensor::ones(shape)),
            beta: Param::new(format!("{}.beta", name), Tensor::zeros(shape)),
            name: name.to_string(),
            eps,
        }
    }

    pub fn forward(&self, ctx: &Ctx, x: Var) -> Var {
        scoped(ctx, &self.name, || {
            ctx.tape
                .layer_norm(x, ctx.param(&self.gamma), ctx.param(&self.beta), self.eps)
        })
    }
}

impl Module for LayerNorm {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        f(&self.gamma);
        f(&self.beta);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }
    fn costs(&self, out: &mut Vec<LayerCost>) {
        let n = self.gamma.numel();
        out.push(cost(&self.name, 2 * n, 2 * n));
    }
}

/// Fixed band-merge or band-split matrix applied to the last axis. Its
/// entries are reported as parameters although they are not trained.
#[derive(Clone, Debug)]
pub struct Banding {
    pub name: String,
    pub matrix: Param,
    pub merge: bool,
}

impl Banding {
    pub fn new(name: &str, matrix: Tensor, merge: bool) -> Self {
        Self {
            matrix: Param::buffer(format!("{}.matrix", name), matrix),
            name: name.to_string(),
            merge,
        }
    }

    pub fn forward(&self, ctx: &Ctx, x: Var) -> Var {
        scoped(ctx, &self.name, || {
            let m = ctx.param(&self.matrix);
            if self.merge {
                crate::frontend::band_merge(ctx.tape, x, m)
            } else {
                crate::frontend::band_split(ctx.tape, x, m)
            }
        })
    }
}

impl Module for Banding {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        f(&self.matrix);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.matrix);
    }
    fn costs(&self, out: &mut Vec<LayerCost>) {
        let n = self.matrix.numel();
        out.push(cost(&self.name, n, n));
    }
}
