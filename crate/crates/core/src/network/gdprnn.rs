//! Grouped dual-path recurrent bottleneck.
//!
//! Works on `[B, C, T, W]` maps. The intra path runs a bidirectional
//! recurrence across the `W` frequency positions of each frame; the inter
//! path runs a forward recurrence across time for each frequency position.
//! In both paths the channels are split into groups with their own
//! recurrences, re-mixed by a channel shuffle, projected by a dense layer,
//! layer-normalized over `(W, C)` and added back to the path input.

use litese_autograd::Var;
use rand::Rng;

use crate::nn::{shuffle_var, Ctx, Gru, LayerCost, LayerNorm, Linear, Module, Param};

pub const LN_EPS: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct Gdprnn {
    pub intra_fwd: Vec<Gru>,
    pub intra_bwd: Vec<Gru>,
    pub intra_fc: Linear,
    pub intra_ln: LayerNorm,
    pub inter: Vec<Gru>,
    pub inter_fc: Linear,
    pub inter_ln: LayerNorm,
    pub c: usize,
    pub w: usize,
    pub groups: usize,
}

impl Gdprnn {
    /// Fails unless `c` splits into `groups` groups with an even width.
    pub fn new<R: Rng + ?Sized>(name: &str, c: usize, w: usize, groups: usize, rng: &mut R) -> Result<Self, String> {
        if groups == 0 || c % (2 * groups) != 0 {
            return Err(format!("bottleneck channels {} must split into {} groups of even width", c, groups));
        }
        let cg = c / groups;
        let n = |s: String| format!("{}.{}", name, s);
        Ok(Self {
            intra_fwd: (0..groups)
                .map(|g| Gru::new(&n(format!("intra.g{}.fwd", g)), cg, cg / 2, false, w, rng))
                .collect(),
            intra_bwd: (0..groups)
                .map(|g| Gru::new(&n(format!("intra.g{}.bwd", g)), cg, cg / 2, true, w, rng))
                .collect(),
            intra_fc: Linear::new(&n("intra.fc".into()), c, c, w, rng),
            intra_ln: LayerNorm::new(&n("intra.ln".into()), &[w, c], LN_EPS),
            inter: (0..groups)
                .map(|g| Gru::new(&n(format!("inter.g{}", g)), cg, cg, false, w, rng))
                .collect(),
            inter_fc: Linear::new(&n("inter.fc".into()), c, c, w, rng),
            inter_ln: LayerNorm::new(&n("inter.ln".into()), &[w, c], LN_EPS),
            c,
            w,
            groups,
        })
    }

    pub fn forward(&self, ctx: &Ctx, x: Var) -> Var {
        let t = ctx.tape;
        let [b, c, n, w] = t.shape(x)[..] else { unreachable!() };
        let cg = c / self.groups;
        // [B, T, W, C]
        let u = t.permute(x, &[0, 2, 3, 1]);

        let parts: Vec<Var> = (0..self.groups)
            .map(|g| {
                let xg = t.reshape(t.narrow(u, 3, g * cg, cg), &[b * n, w, cg]);
                let f = self.intra_fwd[g].forward(ctx, xg, false);
                let r = self.intra_bwd[g].forward(ctx, xg, false);
                t.concat(&[f, r], 2)
            })
            .collect();
        let y = t.reshape(t.concat(&parts, 2), &[b, n, w, c]);
        let y = shuffle_var(t, y, 3, self.groups);
        let y = self.intra_ln.forward(ctx, self.intra_fc.forward(ctx, y));
        let u1 = t.add(u, y);

        // [B, W, T, C]
        let v = t.permute(u1, &[0, 2, 1, 3]);
        let parts: Vec<Var> = (0..self.groups)
            .map(|g| {
                let xg = t.reshape(t.narrow(v, 3, g * cg, cg), &[b * w, n, cg]);
                self.inter[g].forward(ctx, xg, true)
            })
            .collect();
        let y = t.reshape(t.concat(&parts, 2), &[b, w, n, c]);
        let y = shuffle_var(t, y, 3, self.groups);
        let y = t.permute(self.inter_fc.forward(ctx, y), &[0, 2, 1, 3]);
        let y = self.inter_ln.forward(ctx, y);
        let u2 = t.add(u1, y);
        t.permute(u2, &[0, 3, 1, 2])
    }
}

impl Module for Gdprnn {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        for (a, b) in self.intra_fwd.iter().zip(&self.intra_bwd) {
            a.visit(f);
            b.visit(f);
        }
        self.intra_fc.visit(f);
        self.intra_ln.visit(f);
        for g in &self.inter {
            g.visit(f);
        }
        self.inter_fc.visit(f);
        self.inter_ln.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for (a, b) in self.intra_fwd.iter_mut().zip(&mut self.intra_bwd) {
            a.visit_mut(f);
            b.visit_mut(f);
        }
        self.intra_fc.visit_mut(f);
        self.intra_ln.visit_mut(f);
        for g in &mut self.inter {
            g.visit_mut(f);
        }
        self.inter_fc.visit_mut(f);
        self.inter_ln.visit_mut(f);
    }
    fn costs(&self, out: &mut Vec<LayerCost>) {
        for (a, b) in self.intra_fwd.iter().zip(&self.intra_bwd) {
            a.costs(out);
            b.costs(out);
        }
        self.intra_fc.costs(out);
        self.intra_ln.costs(out);
        for g in &self.inter {
            g.costs(out);
        }
        self.inter_fc.costs(out);
        self.inter_ln.costs(out);
    }
}
