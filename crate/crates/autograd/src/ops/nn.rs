//! Dense layers, normalization and parametric activations.

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Shape split of a channel-second tensor `[B, C, rest..]`.
fn channel_layout(shape: &[usize]) -> (usize, usize, usize) {
    assert!(shape.len() >= 2, "expected [B, C, ..], got {:?}", shape);
    (shape[0], shape[1], shape[2..].iter().product())
}

/// Row-major `a[m, k] · b[k, n]`.
fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut t = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            t[j * m + i] = a[i * n + j];
        }
    }
    t
}

/// Result of a training-mode batch norm: output plus the batch statistics
/// (mean and biased variance per channel).
pub struct BatchNormOut {
    pub y: Var,
    pub mean: Tensor,
    pub var: Tensor,
}

impl Tape {
    /// `x[.., in] · W^T + b` with `W: [out, in]`.
    pub fn linear(&self, x: Var, w: Var, bias: Option<Var>) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        let (out_f, in_f) = (wv.dim(0), wv.dim(1));
        let xs = xv.shape().to_vec();
        assert_eq!(*xs.last().unwrap(), in_f, "linear expects {} input features, got {:?}", in_f, xs);
        let rows = xv.numel() / in_f;
        self.count_macs((rows * (in_f * out_f + if bias.is_some() { out_f } else { 0 })) as u64);
        let wt = transpose(wv.data(), out_f, in_f);
        let mut y = matmul(xv.data(), &wt, rows, in_f, out_f);
        let bv = bias.map(|b| self.value(b));
        if let Some(bv) = &bv {
            for row in y.chunks_mut(out_f) {
                for (o, &b) in row.iter_mut().zip(bv.data()) {
                    *o += b;
                }
            }
        }
        let mut ys = xs.clone();
        *ys.last_mut().unwrap() = out_f;
        let mut parents = vec![x, w];
        parents.extend(bias);
        let has_bias = bias.is_some();
        let (rx, rw) = (self.requires_grad(x), self.requires_grad(w));
        self.push_op(Tensor::new(&ys, y), &parents, move |g| {
            let gd = g.data();
            let gx = rx.then(|| Tensor::new(&xs, matmul(gd, wv.data(), rows, out_f, in_f)));
            let gw = rw.then(|| {
                let gt = transpose(gd, rows, out_f);
                Tensor::new(&[out_f, in_f], matmul(&gt, xv.data(), out_f, rows, in_f))
            });
            let mut grads = vec![gx, gw];
            if has_bias {
                let mut gb = vec![0.0; out_f];
                for row in gd.chunks(out_f) {
                    for (b, &v) in gb.iter_mut().zip(row) {
                        *b += v;
                    }
                }
                grads.push(Some(Tensor::new(&[out_f], gb)));
            }
            grads
        })
    }

    /// `x[.., k] · m[k, n]`, counted as `k·n` MACs per row.
    pub fn matmul_last(&self, x: Var, m: Var) -> Var {
        let (xv, mv) = (self.value(x), self.value(m));
        let (k, n) = (mv.dim(0), mv.dim(1));
        let xs = xv.shape().to_vec();
        assert_eq!(*xs.last().unwrap(), k, "matmul_last inner dimension mismatch");
        let rows = xv.numel() / k;
        self.count_macs((rows * k * n) as u64);
        let y = matmul(xv.data(), mv.data(), rows, k, n);
        let mut ys = xs.clone();
        *ys.last_mut().unwrap() = n;
        let (rx, rm) = (self.requires_grad(x), self.requires_grad(m));
        self.push_op(Tensor::new(&ys, y), &[x, m], move |g| {
            let gd = g.data();
            let gx = rx.then(|| {
                let mt = transpose(mv.data(), k, n);
                Tensor::new(&xs, matmul(gd, &mt, rows, n, k))
            });
            let gm = rm.then(|| {
                let xt = transpose(xv.data(), rows, k);
                Tensor::new(&[k, n], matmul(&xt, gd, k, rows, n))
            });
            vec![gx, gm]
        })
    }

    /// Batch norm with batch statistics over every axis except 1.
    pub fn batch_norm_train(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> BatchNormOut {
        let xv = self.value(x);
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let shape = xv.shape().to_vec();
        let (b, c, inner) = channel_layout(&shape);
        self.count_macs((2 * xv.numel()) as u64);
        let n = (b * inner) as f64;
        let xd = xv.data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for bi in 0..b {
            for ci in 0..c {
                mean[ci] += xd[(bi * c + ci) * inner..][..inner].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        for bi in 0..b {
            for ci in 0..c {
                var[ci] += xd[(bi * c + ci) * inner..][..inner]
                    .iter()
                    .map(|v| (v - mean[ci]).powi(2))
                    .sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= n);
        let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; xd.len()];
        let mut y = vec![0.0; xd.len()];
        for bi in 0..b {
            for ci in 0..c {
                let off = (bi * c + ci) * inner;
                for i in off..off + inner {
                    xhat[i] = (xd[i] - mean[ci]) * inv[ci];
                    y[i] = gv.data()[ci] * xhat[i] + bv.data()[ci];
                }
            }
        }
        let y = self.push_op(Tensor::new(&shape, y), &[x, gamma, beta], move |g| {
            let gd = g.data();
            let mut sg = vec![0.0; c];
            let mut sgx = vec![0.0; c];
            for bi in 0..b {
                for ci in 0..c {
                    let off = (bi * c + ci) * inner;
                    for i in off..off + inner {
                        sg[ci] += gd[i];
                        sgx[ci] += gd[i] * xhat[i];
                    }
                }
            }
            let mut gx = vec![0.0; gd.len()];
            for bi in 0..b {
                for ci in 0..c {
                    let k = gv.data()[ci] * inv[ci] / n;
                    let off = (bi * c + ci) * inner;
                    for i in off..off + inner {
                        gx[i] = k * (n * gd[i] - sg[ci] - xhat[i] * sgx[ci]);
                    }
                }
            }
            vec![
                Some(Tensor::new(&shape, gx)),
                Some(Tensor::new(&[c], sgx)),
                Some(Tensor::new(&[c], sg)),
            ]
        });
        BatchNormOut {
            y,
            mean: Tensor::new(&[c], mean),
            var: Tensor::new(&[c], var),
        }
    }

    /// Batch norm with fixed statistics: a per-channel affine map.
    pub fn batch_norm_eval(&self, x: Var, gamma: Var, beta: Var, mean: &Tensor, var: &Tensor, eps: f64) -> Var {
        let xv = self.value(x);
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let shape = xv.shape().to_vec();
        let (b, c, inner) = channel_layout(&shape);
        self.count_macs((2 * xv.numel()) as u64);
        let inv: Vec<f64> = var.data().iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let scale: Vec<f64> = (0..c).map(|ci| gv.data()[ci] * inv[ci]).collect();
        let mut xhat = vec![0.0; xv.numel()];
        let mut y = vec![0.0; xv.numel()];
        for bi in 0..b {
            for ci in 0..c {
                let off = (bi * c + ci) * inner;
                for i in off..off + inner {
                    xhat[i] = (xv.data()[i] - mean.data()[ci]) * inv[ci];
                    y[i] = gv.data()[ci] * xhat[i] + bv.data()[ci];
                }
            }
        }
        self.push_op(Tensor::new(&shape, y), &[x, gamma, beta], move |g| {
            let gd = g.data();
            let mut gx = vec![0.0; gd.len()];
            let mut gg = vec![0.0; c];
            let mut gb = vec![0.0; c];
            for bi in 0..b {
                for ci in 0..c {
                    let off = (bi * c + ci) * inner;
                    for i in off..off + inner {
                        gx[i] = gd[i] * scale[ci];
                        gg[ci] += gd[i] * xhat[i];
                        gb[ci] += gd[i];
                    }
                }
            }
            vec![
                Some(Tensor::new(&shape, gx)),
                Some(Tensor::new(&[c], gg)),
                Some(Tensor::new(&[c], gb)),
            ]
        })
    }

    /// PReLU with `alpha` of shape `[1]` (shared) or `[C]` (per channel, axis 1).
    pub fn prelu(&self, x: Var, alpha: Var) -> Var {
        let (xv, av) = (self.value(x), self.value(alpha));
        let shape = xv.shape().to_vec();
        let (_, c, inner) = channel_layout(&shape);
        let na = av.numel();
        assert!(na == 1 || na == c, "prelu alpha must have 1 or {} entries, got {}", c, na);
        self.count_macs((2 * xv.numel()) as u64);
        let ch = move |i: usize| if na == 1 { 0 } else { (i / inner) % c };
        let y: Vec<f64> = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| if v > 0.0 { v } else { av.data()[ch(i)] * v })
            .collect();
        self.push_op(Tensor::new(&shape, y), &[x, alpha], move |g| {
            let mut gx = vec![0.0; g.numel()];
            let mut ga = vec![0.0; na];
            for (i, (&gv, &v)) in g.data().iter().zip(xv.data()).enumerate() {
                if v > 0.0 {
                    gx[i] = gv;
                } else {
                    gx[i] = gv * av.data()[ch(i)];
                    ga[ch(i)] += gv * v;
                }
            }
            vec![Some(Tensor::new(&shape, gx)), Some(Tensor::new(&[na], ga))]
        })
    }

    /// Affine PReLU on `[B, C, T, F]`: `γ⊙x + β + max(0,x) + α·min(0,x)` with
    /// `γ, β: [C, F]` and `α: [C]`. Not counted as MACs.
    pub fn aprelu(&self, x: Var, gamma: Var, beta: Var, alpha: Var) -> Var {
        let xv = self.value(x);
        let (gv, bv, av) = (self.value(gamma), self.value(beta), self.value(alpha));
        let (_, c, t, f) = xv.dims4();
        assert_eq!(gv.shape(), &[c, f], "aprelu gamma must be [C, F]");
        assert_eq!(bv.shape(), &[c, f], "aprelu beta must be [C, F]");
        assert_eq!(av.shape(), &[c], "aprelu alpha must be [C]");
        let cf = move |i: usize| ((i / (t * f)) % c, i % f);
        let y: Vec<f64> = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let (ci, fi) = cf(i);
                let k = ci * f + fi;
                gv.data()[k] * v + bv.data()[k] + if v > 0.0 { v } else { av.data()[ci] * v }
            })
            .collect();
        let shape = xv.shape().to_vec();
        self.push_op(Tensor::new(&shape, y), &[x, gamma, beta, alpha], move |g| {
            let mut gx = vec![0.0; g.numel()];
            let mut gg = vec![0.0; c * f];
            let mut gb = vec![0.0; c * f];
            let mut ga = vec![0.0; c];
            for (i, (&gr, &v)) in g.data().iter().zip(xv.data()).enumerate() {
                let (ci, fi) = cf(i);
                let k = ci * f + fi;
                let slope = if v > 0.0 { 1.0 } else { av.data()[ci] };
                gx[i] = gr * (gv.data()[k] + slope);
                gg[k] += gr * v;
                gb[k] += gr;
                if v <= 0.0 {
                    ga[ci] += gr * v;
                }
            }
            vec![
                Some(Tensor::new(&shape, gx)),
                Some(Tensor::new(&[c, f], gg)),
                Some(Tensor::new(&[c, f], gb)),
                Some(Tensor::new(&[c], ga)),
            ]
        })
    }

    /// Layer norm over the trailing axes covered by `gamma`'s shape.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let shape = xv.shape().to_vec();
        let d = gv.numel();
        assert!(
            shape.ends_with(gv.shape()) && bv.shape() == gv.shape(),
            "layer_norm params {:?} do not match trailing axes of {:?}",
            gv.shape(),
            shape
        );
        self.count_macs((2 * xv.numel()) as u64);
        let rows = xv.numel() / d;
        let mut xhat = vec![0.0; xv.numel()];
        let mut inv = vec![0.0; rows];
        let mut y = vec![0.0; xv.numel()];
        for r in 0..rows {
            let row = &xv.data()[r * d..(r + 1) * d];
            let m = row.iter().sum::<f64>() / d as f64;
            let v = row.iter().map(|x| (x - m).powi(2)).sum::<f64>() / d as f64;
            inv[r] = 1.0 / (v + eps).sqrt();
            for j in 0..d {
                let h = (row[j] - m) * inv[r];
                xhat[r * d + j] = h;
                y[r * d + j] = gv.data()[j] * h + bv.data()[j];
            }
        }
        let pshape = gv.shape().to_vec();
        self.push_op(Tensor::new(&shape, y), &[x, gamma, beta], move |g| {
            let gd = g.data();
            let mut gx = vec![0.0; gd.len()];
            let mut gg = vec![0.0; d];
            let mut gb = vec![0.0; d];
            let n = d as f64;
            for r in 0..rows {
                let mut s1 = 0.0;
                let mut s2 = 0.0;
                for j in 0..d {
                    let i = r * d + j;
                    let gh = gd[i] * gv.data()[j];
                    s1 += gh;
                    s2 += gh * xhat[i];
                    gg[j] += gd[i] * xhat[i];
                    gb[j] += gd[i];
                }
                for j in 0..d {
                    let i = r * d + j;
                    let gh = gd[i] * gv.data()[j];
                    gx[i] = inv[r] / n * (n * gh - s1 - xhat[i] * s2);
                }
            }
            vec![
                Some(Tensor::new(&shape, gx)),
                Some(Tensor::new(&pshape, gg)),
                Some(Tensor::new(&pshape, gb)),
            ]
        })
    }
}
