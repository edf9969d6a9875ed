//! Reductions and shape manipulation.

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

fn inverse_perm(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

/// Splits a shape around `axis` into (outer, len, inner).
fn split3(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tape {
    /// Sum of all elements, shape `[1]`.
    pub fn sum_all(&self, x: Var) -> Var {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        self.push_op(Tensor::scalar(xv.sum()), &[x], move |g| {
            vec![Some(Tensor::full(&shape, g.item()))]
        })
    }

    pub fn mean_all(&self, x: Var) -> Var {
        let n = self.value(x).numel() as f64;
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n)
    }

    /// Sum over `axis`, keeping it as size 1.
    pub fn sum_axis(&self, x: Var, axis: usize) -> Var {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        let (outer, len, inner) = split3(&shape, axis);
        let mut out = vec![0.0; outer * inner];
        let d = xv.data();
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for i in 0..inner {
                    out[o * inner + i] += d[base + i];
                }
            }
        }
        let mut oshape = shape.clone();
        oshape[axis] = 1;
        self.push_op(Tensor::new(&oshape, out), &[x], move |g| {
            let gd = g.data();
            let mut gx = vec![0.0; outer * len * inner];
            for o in 0..outer {
                for l in 0..len {
                    let base = (o * len + l) * inner;
                    gx[base..base + inner].copy_from_slice(&gd[o * inner..(o + 1) * inner]);
                }
            }
            vec![Some(Tensor::new(&shape, gx))]
        })
    }

    pub fn mean_axis(&self, x: Var, axis: usize) -> Var {
        let n = self.shape(x)[axis] as f64;
        let s = self.sum_axis(x, axis);
        self.scale(s, 1.0 / n)
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Var {
        let xv = self.value(x);
        let old = xv.shape().to_vec();
        let y = (*xv).clone().reshape(shape);
        self.push_op(y, &[x], move |g| vec![Some(g.clone().reshape(&old))])
    }

    pub fn permute(&self, x: Var, axes: &[usize]) -> Var {
        let y = self.value(x).permute(axes);
        let inv = inverse_perm(axes);
        self.push_op(y, &[x], move |g| vec![Some(g.permute(&inv))])
    }

    pub fn narrow(&self, x: Var, axis: usize, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        let y = xv.narrow(axis, start, len);
        self.push_op(y, &[x], move |g| {
            let (outer, full, inner) = split3(&shape, axis);
            let mut gx = vec![0.0; outer * full * inner];
            let gd = g.data();
            for o in 0..outer {
                let src = &gd[o * len * inner..(o + 1) * len * inner];
                let dst = (o * full + start) * inner;
                gx[dst..dst + len * inner].copy_from_slice(src);
            }
            vec![Some(Tensor::new(&shape, gx))]
        })
    }

    pub fn concat(&self, parts: &[Var], axis: usize) -> Var {
        let values: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let refs: Vec<&Tensor> = values.iter().map(|v| v.as_ref()).collect();
        let y = Tensor::concat(&refs, axis);
        let lens: Vec<usize> = values.iter().map(|v| v.dim(axis)).collect();
        self.push_op(y, parts, move |g| {
            let mut start = 0;
            lens.iter()
                .map(|&l| {
                    let part = g.narrow(axis, start, l);
                    start += l;
                    Some(part)
                })
                .collect()
        })
    }

    /// Gathers slices along `axis`; indices may repeat.
    pub fn index_select(&self, x: Var, axis: usize, indices: &[usize]) -> Var {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        let y = xv.index_select(axis, indices);
        let idx = indices.to_vec();
        self.push_op(y, &[x], move |g| {
            let (outer, full, inner) = split3(&shape, axis);
            let n = idx.len();
            let mut gx = vec![0.0; outer * full * inner];
            let gd = g.data();
            for o in 0..outer {
                for (k, &j) in idx.iter().enumerate() {
                    let src = (o * n + k) * inner;
                    let dst = (o * full + j) * inner;
                    for i in 0..inner {
                        gx[dst + i] += gd[src + i];
                    }
                }
            }
            vec![Some(Tensor::new(&shape, gx))]
        })
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&self, x: Var) -> Var {
        let xv = self.value(x);
        let k = *xv.shape().last().unwrap();
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(k) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let y = Tensor::new(xv.shape(), out);
        let yv = y.clone();
        self.push_op(y, &[x], move |g| {
            let mut gx = g.data().to_vec();
            for (grow, yrow) in gx.chunks_mut(k).zip(yv.data().chunks(k)) {
                let s: f64 = grow.iter().sum();
                for (gv, &yv) in grow.iter_mut().zip(yrow) {
                    *gv -= yv.exp() * s;
                }
            }
            vec![Some(Tensor::new(yv.shape(), gx))]
        })
    }

    /// Picks `x[.., idx[r]]` from each row of the last axis; output shape is
    /// the input shape without its last axis (or `[1]` for a single row).
    pub fn gather_last(&self, x: Var, idx: &[usize]) -> Var {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        let k = *shape.last().unwrap();
        let rows = xv.numel() / k;
        assert_eq!(rows, idx.len(), "gather_last needs one index per row");
        let out: Vec<f64> = (0..rows).map(|r| xv.data()[r * k + idx[r]]).collect();
        let oshape = if shape.len() > 1 {
            shape[..shape.len() - 1].to_vec()
        } else {
            vec![1]
        };
        let idx = idx.to_vec();
        self.push_op(Tensor::new(&oshape, out), &[x], move |g| {
            let mut gx = Tensor::zeros(&shape);
            for (r, &j) in idx.iter().enumerate() {
                gx.data_mut()[r * k + j] = g.data()[r];
            }
            vec![Some(gx)]
        })
    }
}
