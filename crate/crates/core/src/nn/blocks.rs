//! Convolutional blocks used in the encoder and (transposed) in the decoder.

use std::fmt;
use std::str::FromStr;

use litese_autograd::Var;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ctfa::Ctfa;
use super::ctx::Ctx;
use super::layers::{Act, BatchNorm, Conv, ConvShape};
use super::param::{LayerCost, Module, Param};
use super::rep::RepDws;
use super::shuffle::shuffle_var;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BlockType {
    Conv,
    Dws,
    Ghost,
    Rep,
    Mb,
    Star,
    XConv,
    XDws,
    XMb,
}

impl BlockType {
    pub const ALL: [BlockType; 9] = [
        BlockType::Conv,
        BlockType::Dws,
        BlockType::Ghost,
        BlockType::Rep,
        BlockType::Mb,
        BlockType::Star,
        BlockType::XConv,
        BlockType::XDws,
        BlockType::XMb,
    ];

    /// Extended blocks use APReLU activations and end with attention.
    pub fn is_extended(self) -> bool {
        matches!(self, BlockType::XConv | BlockType::XDws | BlockType::XMb)
    }

    /// The plain block an extended one is built on.
    pub fn base(self) -> BlockType {
        match self {
            BlockType::XConv => BlockType::Conv,
            BlockType::XDws => BlockType::Dws,
            BlockType::XMb => BlockType::Mb,
            t => t,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BlockType::Conv => "Conv",
            BlockType::Dws => "DWS",
            BlockType::Ghost => "Ghost",
            BlockType::Rep => "Rep",
            BlockType::Mb => "MB",
            BlockType::Star => "Star",
            BlockType::XConv => "XConv",
            BlockType::XDws => "XDWS",
            BlockType::XMb => "XMB",
        }
    }
}

impl fmt::Display for BlockType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BlockType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BlockType::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidInput(format!("unknown block type `{}`", s.trim())))
    }
}

/// One encoder stage: type, frequency stride, groups, output channels and
/// `(time, frequency)` kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockSpec {
    pub kind: BlockType,
    pub stride: usize,
    pub groups: usize,
    pub channels: usize,
    pub kernel: (usize, usize),
    pub transposed: bool,
}

impl BlockSpec {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(1..=2).contains(&self.stride) {
            return Err(format!("stride {} not in {{1, 2}}", self.stride));
        }
        if !(1..=2).contains(&self.groups) {
            return Err(format!("groups {} not in {{1, 2}}", self.groups));
        }
        if self.channels == 0 || self.channels % self.groups != 0 {
            return Err(format!("channels {} not divisible by groups {}", self.channels, self.groups));
        }
        let (kt, kf) = self.kernel;
        if kt == 0 || kf == 0 {
            return Err("kernel extents must be at least 1".into());
        }
        if kf % 2 == 0 {
            return Err(format!("frequency kernel extent {} must be odd", kf));
        }
        Ok(())
    }
}

/// Group count actually used: falls back to 1 when either side is not
/// divisible (single-channel network input and mask output).
pub fn effective_groups(cin: usize, cout: usize, groups: usize) -> usize {
    if cin % groups == 0 && cout % groups == 0 {
        groups
    } else {
        1
    }
}

/// Pointwise, then BN and activation, then a channel shuffle, then the
/// depthwise spatial conv with BN and activation.
#[derive(Clone, Debug)]
pub struct Dws {
    pub pw: Conv,
    pub bn1: BatchNorm,
    pub act1: Act,
    pub shuffle: usize,
    pub dw: Conv,
    pub bn2: BatchNorm,
    pub act2: Act,
}

impl Dws {
    pub fn forward(&self, ctx: &Ctx, x: Var) -> Var {
        let y = self.pw.forward(ctx, x);
        let y = self.bn1.forward(ctx, y);
        let y = self.act1.forward(ctx, y);
        let y = shuffle_var(ctx.tape, y, 1, self.shuffle);
        let y = self.dw.forward(ctx, y);
        let y = self.bn2.forward(ctx, y);
        self.act2.forward(ctx, y)
    }
}

impl Module for Dws {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        self.pw.visit(f);
        self.bn1.visit(f);
        self.act1.visit(f);
        self.dw.visit(f);
        self.bn2.visit(f);
        self.act2.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.pw.visit_mut(f);
        self.bn1.visit_mut(f);
        self.act1.visit_mut(f);
        self.dw.visit_mut(f);
        self.bn2.visit_mut(f);
        self.act2.visit_mut(f);
    }
    fn costs(&self, out: &mut Vec<LayerCost>) {
        self.pw.costs(out);
        self.bn1.costs(out);
        self.act1.costs(out);
        self.dw.costs(out);
        self.bn2.costs(out);
        self.act2.costs(out);
    }
}

#[derive(Clone, Debug)]
pub enum Body {
    Conv {
        conv: Conv,
        bn: BatchNorm,
        act: Act,
        shuffle: usize,
    },
    Dws(Dws),
    Ghost {
        primary: Conv,
        bn1: BatchNorm,
        act1: Act,
        cheap: Conv,
        bn2: BatchNorm,
        act2: Act,
        cout: usize,
    },
    Rep(RepDws),
    Mb {
        dws: Dws,
        pw2: Conv,
        bn3: BatchNorm,
        residual: bool,
    },
    Star {
        f1: Conv,
        f2: Conv,
        act: Act,
        g: Conv,
        dw: Conv,
        bn: BatchNorm,
        residual: bool,
    },
}

/// A built block. When `gate` is set the block produces the mask: its final
/// activation is dropped and a logistic gate is applied to its output.
#[derive(Clone, Debug)]
pub struct Block {
    pub name: String,
    pub spec: BlockSpec,
    pub cin: usize,
    pub f_in: usize,
    pub f_out: usize,
    pub body: Body,
    pub gate: bool,
    pub attn: Option<Ctfa>,
}

pub struct BlockPlacement<'a> {
    pub name: &'a str,
    pub cin: usize,
    pub f_in: usize,
    pub gate: bool,
}

fn shape(cin: usize, cout: usize, kernel: (usize, usize), stride: usize, groups: usize, transposed: bool) -> ConvShape {
    ConvShape {
        cin,
        cout,
        kernel,
        stride,
        groups,
        transposed,
    }
}

pub fn build_block<R: Rng + ?Sized>(spec: &BlockSpec, at: BlockPlacement, rng: &mut R) -> std::result::Result<Block, String> {
    spec.validate()?;
    let BlockPlacement { name, cin, f_in, gate } = at;
    let cout = spec.channels;
    let ext = spec.kind.is_extended();
    let g = effective_groups(cin, cout, spec.groups);
    let (k, s, tr) = (spec.kernel, spec.stride, spec.transposed);
    let n = |suffix: &str| format!("{}.{}", name, suffix);
    let last_act = |label: &str, c: usize, f: usize| if gate { Act::Identity } else { Act::build(&n(label), ext, c, f) };

    let dws = |rng: &mut R, final_act: bool| {
        let pw = Conv::new(&n("pw"), shape(cin, cout, (1, 1), 1, g, false), f_in, rng);
        let dw = Conv::new(&n("dw"), shape(cout, cout, k, s, cout, tr), f_in, rng);
        let f_out = dw.f_out;
        Dws {
            pw,
            bn1: BatchNorm::new(&n("bn1"), cout, f_in),
            act1: Act::build(&n("act1"), ext, cout, f_in),
            shuffle: g,
            dw,
            bn2: BatchNorm::new(&n("bn2"), cout, f_out),
            act2: if final_act { last_act("act2", cout, f_out) } else { Act::build(&n("act2"), ext, cout, f_out) },
        }
    };

    let (body, f_out) = match spec.kind.base() {
        BlockType::Conv => {
            let conv = Conv::new(&n("conv"), shape(cin, cout, k, s, g, tr), f_in, rng);
            let f = conv.f_out;
            let body = Body::Conv {
                conv,
                bn: BatchNorm::new(&n("bn"), cout, f),
                act: last_act("act", cout, f),
                shuffle: g,
            };
            (body, f)
        }
        BlockType::Dws => {
            let d = dws(rng, true);
            let f = d.dw.f_out;
            (Body::Dws(d), f)
        }
        BlockType::Rep => {
            let r = RepDws::new(name, cin, cout, spec, g, f_in, gate, rng);
            let f = r.f_out();
            (Body::Rep(r), f)
        }
        BlockType::Mb => {
            let d = dws(rng, false);
            let f = d.dw.f_out;
            let body = Body::Mb {
                dws: d,
                pw2: Conv::new(&n("pw2"), shape(cout, cout, (1, 1), 1, g, false), f, rng),
                bn3: BatchNorm::new(&n("bn3"), cout, f),
                residual: cin == cout && s == 1,
            };
            (body, f)
        }
        BlockType::Ghost => {
            let h = cout.div_ceil(2);
            let primary = Conv::new(&n("primary"), shape(cin, h, k, s, effective_groups(cin, h, spec.groups), tr), f_in, rng);
            let f = primary.f_out;
            let body = Body::Ghost {
                primary,
                bn1: BatchNorm::new(&n("bn1"), h, f),
                act1: last_act("act1", h, f),
                cheap: Conv::new(&n("cheap"), shape(h, h, (3, 3), 1, h, false), f, rng),
                bn2: BatchNorm::new(&n("bn2"), h, f),
                act2: last_act("act2", h, f),
                cout,
            };
            (body, f)
        }
        BlockType::Star => {
            let e = cin.min(cout);
            let f1 = Conv::new(&n("f1"), shape(cin, e, (1, 1), 1, g, false), f_in, rng);
            let f2 = Conv::new(&n("f2"), shape(cin, e, (1, 1), 1, g, false), f_in, rng);
            let gconv = Conv::new(&n("g"), shape(e, cout, (1, 1), 1, effective_groups(e, cout, spec.groups), false), f_in, rng);
            let dw = Conv::new(&n("dw"), shape(cout, cout, k, s, cout, tr), f_in, rng);
            let f = dw.f_out;
            let body = Body::Star {
                f1,
                f2,
                act: Act::build(&n("act"), ext, e, f_in),
                g: gconv,
                dw,
                bn: BatchNorm::new(&n("bn"), cout, f),
                residual: cin == cout && s == 1,
            };
            (body, f)
        }
        _ => unreachable!("base() only returns plain types"),
    };
    let attn = ext.then(|| Ctfa::new(&n("attn"), cout, f_out, rng));
    Ok(Block {
        name: name.to_string(),
        spec: *spec,
        cin,
        f_in,
        f_out,
        body,
        gate,
        attn,
    })
}

impl Block {
    pub fn cout(&self) -> usize {
        self.spec.channels
    }

    pub fn forward(&self, ctx: &Ctx, x: Var) -> Var {
        let t = ctx.tape;
        let mut y = match &self.body {
            Body::Conv { conv, bn, act, shuffle } => {
                let y = act.forward(ctx, bn.forward(ctx, conv.forward(ctx, x)));
                shuffle_var(t, y, 1, *shuffle)
            }
            Body::Dws(d) => d.forward(ctx, x),
            Body::Rep(r) => r.forward(ctx, x),
            Body::Mb { dws, pw2, bn3, residual } => {
                let y = dws.forward(ctx, x);
                let y = bn3.forward(ctx, pw2.forward(ctx, y));
                if *residual {
                    t.add(y, x)
                } else {
                    y
                }
            }
            Body::Ghost {
                primary,
                bn1,
                act1,
                cheap,
                bn2,
                act2,
                cout,
            } => {
                let p = act1.forward(ctx, bn1.forward(ctx, primary.forward(ctx, x)));
                let q = act2.forward(ctx, bn2.forward(ctx, cheap.forward(ctx, p)));
                let both = t.concat(&[p, q], 1);
                t.narrow(both, 1, 0, *cout)
            }
            Body::Star {
                f1,
                f2,
                act,
                g,
                dw,
                bn,
                residual,
            } => {
                let a = act.forward(ctx, f1.forward(ctx, x));
                let b = f2.forward(ctx, x);
                let y = g.forward(ctx, t.mul(a, b));
                let y = bn.forward(ctx, dw.forward(ctx, y));
                if *residual {
                    t.add(y, x)
                } else {
                    y
                }
            }
        };
        if self.gate {
            y = t.sigmoid(y);
        }
        if let Some(a) = &self.attn {
            y = a.forward(ctx, y);
        }
        y
    }

    /// Rep blocks folded to their single-branch form; other blocks unchanged.
    pub fn merged(&self) -> Block {
        match &self.body {
            Body::Rep(r) => Block {
                body: Body::Dws(r.merge()),
                ..self.clone()
            },
            _ => self.clone(),
        }
    }
}

impl Module for Body {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        match self {
            Body::Conv { conv, bn, act, .. } => {
                conv.visit(f);
                bn.visit(f);
                act.visit(f);
            }
            Body::Dws(d) => d.visit(f),
            Body::Rep(r) => r.visit(f),
            Body::Mb { dws, pw2, bn3, .. } => {
                dws.visit(f);
                pw2.visit(f);
                bn3.visit(f);
            }
            Body::Ghost {
                primary,
                bn1,
                act1,
                cheap,
                bn2,
                act2,
                ..
            } => {
                primary.visit(f);
                bn1.visit(f);
                act1.visit(f);
                cheap.visit(f);
                bn2.visit(f);
                act2.visit(f);
            }
            Body::Star { f1, f2, act, g, dw, bn, .. } => {
                f1.visit(f);
                f2.visit(f);
                act.visit(f);
                g.visit(f);
                dw.visit(f);
                bn.visit(f);
            }
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        match self {
            Body::Conv { conv, bn, act, .. } => {
                conv.visit_mut(f);
                bn.visit_mut(f);
                act.visit_mut(f);
            }
            Body::Dws(d) => d.visit_mut(f),
            Body::Rep(r) => r.visit_mut(f),
            Body::Mb { dws, pw2, bn3, .. } => {
                dws.visit_mut(f);
                pw2.visit_mut(f);
                bn3.visit_mut(f);
            }
            Body::Ghost {
                primary,
                bn1,
                act1,
                cheap,
                bn2,
                act2,
                ..
            } => {
                primary.visit_mut(f);
                bn1.visit_mut(f);
                act1.visit_mut(f);
                cheap.visit_mut(f);
                bn2.visit_mut(f);
                act2.visit_mut(f);
            }
            Body::Star { f1, f2, act, g, dw, bn, .. } => {
                f1.visit_mut(f);
                f2.visit_mut(f);
                act.visit_mut(f);
                g.visit_mut(f);
                dw.visit_mut(f);
                bn.visit_mut(f);
            }
        }
    }

    fn costs(&self, out: &mut Vec<LayerCost>) {
        match self {
            // reported in inference form, identical to the DWS block
            Body::Rep(r) => r.merge().costs(out),
            Body::Conv { conv, bn, act, .. } => {
                conv.costs(out);
                bn.costs(out);
                act.costs(out);
            }
            Body::Dws(d) => d.costs(out),
            Body::Mb { dws, pw2, bn3, .. } => {
                dws.costs(out);
                pw2.costs(out);
                bn3.costs(out);
            }
            Body::Ghost {
                primary,
                bn1,
                act1,
                cheap,
                bn2,
                act2,
                ..
            } => {
                primary.costs(out);
                bn1.costs(out);
                act1.costs(out);
                cheap.costs(out);
                bn2.costs(out);
                act2.costs(out);
            }
            Body::Star { f1, f2, act, g, dw, bn, .. } => {
                f1.costs(out);
                f2.costs(out);
                act.costs(out);
                g.costs(out);
                dw.costs(out);
                bn.costs(out);
            }
        }
    }
}

impl Module for Block {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        self.body.visit(f);
        if let Some(a) = &self.attn {
            a.visit(f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.body.visit_mut(f);
        if let Some(a) = &mut self.attn {
            a.visit_mut(f);
        }
    }
    fn costs(&self, out: &mut Vec<LayerCost>) {
        self.body.costs(out);
        if let Some(a) = &self.attn {
            a.costs(out);
        }
    }
}
