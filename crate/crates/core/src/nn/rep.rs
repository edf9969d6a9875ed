//! Re-parameterizable DWS block.
//!
//! During training each convolution stage is a sum of two conv+BN branches
//! plus a BN-only identity branch when input and output shapes agree. At
//! inference the branches fold into one conv per stage, giving a plain DWS
//! block whose batch norms are identities.

use litese_autograd::{Tensor, Var};
use rand::Rng;

use super::blocks::{BlockSpec, Dws};
use super::ctx::Ctx;
use super::layers::{Act, BatchNorm, Conv, ConvShape};
use super::param::{LayerCost, Module, Param};
use super::shuffle::shuffle_var;

#[derive(Clone, Debug)]
pub struct ConvBn {
    pub conv: Conv,
    pub bn: BatchNorm,
}

impl ConvBn {
    fn forward(&self, ctx: &Ctx, x: Var) -> Var {
        self.bn.forward(ctx, self.conv.forward(ctx, x))
    }

    /// Weight and bias of the conv with the BN folded in.
    fn fold(&self) -> (Tensor, Vec<f64>) {
        let (scale, shift) = self.bn.affine();
        let mut w = self.conv.w.value.clone();
        let per = w.numel() / scale.len();
        for (co, chunk) in w.data_mut().chunks_mut(per).enumerate() {
            chunk.iter_mut().for_each(|v| *v *= scale[co]);
        }
        let b = self
            .conv
            .b
            .value
            .data()
            .iter()
            .enumerate()
            .map(|(co, &b)| b * scale[co] + shift[co])
            .collect();
        (w, b)
    }
}

#[derive(Clone, Debug)]
pub struct RepDws {
    pub name: String,
    pub pw: Vec<ConvBn>,
    pub pw_id: Option<BatchNorm>,
    pub act1: Act,
    pub shuffle: usize,
    pub dw: Vec<ConvBn>,
    pub dw_id: Option<BatchNorm>,
    pub act2: Act,
}

/// Number of parallel conv+BN branches per stage.
pub const BRANCHES: usize = 2;

impl RepDws {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        cin: usize,
        cout: usize,
        spec: &BlockSpec,
        groups: usize,
        f_in: usize,
        gate: bool,
        rng: &mut R,
    ) -> Self {
        let ext = spec.kind.is_extended();
        let pw: Vec<ConvBn> = (0..BRANCHES)
            .map(|i| {
                let conv = Conv::new(
                    &format!("{}.pw.{}.conv", name, i),
                    ConvShape {
                        cin,
                        cout,
                        kernel: (1, 1),
                        stride: 1,
                        groups,
                        transposed: false,
                    },
                    f_in,
                    rng,
                );
                ConvBn {
                    bn: BatchNorm::new(&format!("{}.pw.{}.bn", name, i), cout, f_in),
                    conv,
                }
            })
            .collect();
        let dw: Vec<ConvBn> = (0..BRANCHES)
            .map(|i| {
                let conv = Conv::new(
                    &format!("{}.dw.{}.conv", name, i),
                    ConvShape {
                        cin: cout,
                        cout,
                        kernel: spec.kernel,
                        stride: spec.stride,
                        groups: cout,
                        transposed: spec.transposed,
                    },
                    f_in,
                    rng,
                );
                let f = conv.f_out;
                ConvBn {
                    bn: BatchNorm::new(&format!("{}.dw.{}.bn", name, i), cout, f),
                    conv,
                }
            })
            .collect();
        let f_out = dw[0].conv.f_out;
        Self {
            name: name.to_string(),
            pw_id: (cin == cout).then(|| BatchNorm::new(&format!("{}.pw.id", name), cout, f_in)),
            act1: Act::build(&format!("{}.act1", name), ext, cout, f_in),
            shuffle: groups,
            dw_id: (spec.stride == 1).then(|| BatchNorm::new(&format!("{}.dw.id", name), cout, f_out)),
            act2: if gate {
                Act::Identity
            } else {
                Act::build(&format!("{}.act2", name), ext, cout, f_out)
            },
            pw,
            dw,
        }
    }

    pub fn f_out(&self) -> usize {
        self.dw[0].conv.f_out
    }

    pub fn forward(&self, ctx: &Ctx, x: Var) -> Var {
        let t = ctx.tape;
        let stage = |branches: &[ConvBn], id: &Option<BatchNorm>, x: Var| {
            let mut acc = branches[0].forward(ctx, x);
            for b in &branches[1..] {
                acc = t.add(acc, b.forward(ctx, x));
            }
            if let Some(bn) = id {
                acc = t.add(acc, bn.forward(ctx, x));
            }
            acc
        };
        let y = stage(&self.pw, &self.pw_id, x);
        let y = self.act1.forward(ctx, y);
        let y = shuffle_var(t, y, 1, self.shuffle);
        let y = stage(&self.dw, &self.dw_id, y);
        self.act2.forward(ctx, y)
    }

    /// Folds all branches of one stage into a single conv named `name`.
    fn merge_stage(branches: &[ConvBn], id: &Option<BatchNorm>, name: &str) -> Conv {
        let mut conv = branches[0].conv.clone();
        let (mut w, mut b) = branches[0].fold();
        for br in &branches[1..] {
            let (w2, b2) = br.fold();
            w.add_assign(&w2);
            b.iter_mut().zip(b2).for_each(|(x, y)| *x += y);
        }
        if let Some(bn) = id {
            let (scale, shift) = bn.affine();
            let [cout, cin_g, kt, kf] = w.shape()[..] else { unreachable!() };
            for co in 0..cout {
                let ci = co % cin_g;
                let idx = [co, ci, kt - 1, (kf - 1) / 2];
                let v = w.at(&idx) + scale[co];
                w.set(&idx, v);
                b[co] += shift[co];
            }
        }
        let n = b.len();
        conv.name = name.to_string();
        conv.w = Param::new(format!("{}.weight", name), w);
        conv.b = Param::new(format!("{}.bias", name), Tensor::new(&[n], b));
        conv
    }

    /// Single-branch equivalent, using the running statistics of every BN.
    pub fn merge(&self) -> Dws {
        let pw = Self::merge_stage(&self.pw, &self.pw_id, &format!("{}.pw", self.name));
        let dw = Self::merge_stage(&self.dw, &self.dw_id, &format!("{}.dw", self.name));
        Dws {
            bn1: BatchNorm::identity(&format!("{}.bn1", self.name), pw.cout, pw.f_out),
            bn2: BatchNorm::identity(&format!("{}.bn2", self.name), dw.cout, dw.f_out),
            pw,
            act1: self.act1.clone(),
            shuffle: self.shuffle,
            dw,
            act2: self.act2.clone(),
        }
    }
}

impl Module for RepDws {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        for b in &self.pw {
            b.conv.visit(f);
            b.bn.visit(f);
        }
        if let Some(bn) = &self.pw_id {
            bn.visit(f);
        }
        self.act1.visit(f);
        for b in &self.dw {
            b.conv.visit(f);
            b.bn.visit(f);
        }
        if let Some(bn) = &self.dw_id {
            bn.visit(f);
        }
        self.act2.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for b in &mut self.pw {
            b.conv.visit_mut(f);
            b.bn.visit_mut(f);
        }
        if let Some(bn) = &mut self.pw_id {
            bn.visit_mut(f);
        }
        self.act1.visit_mut(f);
        for b in &mut self.dw {
            b.conv.visit_mut(f);
            b.bn.visit_mut(f);
        }
        if let Some(bn) = &mut self.dw_id {
            bn.visit_mut(f);
        }
        self.act2.visit_mut(f);
    }

    /// Training-form costs; block reports use the merged form instead.
    fn costs(&self, out: &mut Vec<LayerCost>) {
        for b in &self.pw {
            b.conv.costs(out);
            b.bn.costs(out);
        }
        if let Some(bn) = &self.pw_id {
            bn.costs(out);
        }
        self.act1.costs(out);
        for b in &self.dw {
            b.conv.costs(out);
            b.bn.costs(out);
        }
        if let Some(bn) = &self.dw_id {
            bn.costs(out);
        }
        self.act2.costs(out);
    }
}
