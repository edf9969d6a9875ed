//! Elementwise unary and broadcasting binary ops.

use crate::tape::{Tape, Var};
use crate::tensor::{strides, Tensor};

/// Output shape of a same-rank broadcast (each axis equal, or 1 on one side).
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    assert_eq!(a.len(), b.len(), "broadcast needs equal ranks: {:?} vs {:?}", a, b);
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            assert!(
                x == y || x == 1 || y == 1,
                "shapes {:?} and {:?} do not broadcast",
                a,
                b
            );
            x.max(y)
        })
        .collect()
}

fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let st = strides(shape);
    shape
        .iter()
        .zip(out)
        .zip(st)
        .map(|((&d, &o), s)| if d == o { s } else { 0 })
        .collect()
}

/// Applies `f` over the broadcast of `a` and `b`.
pub fn broadcast_zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let out_shape = broadcast_shape(a.shape(), b.shape());
    let sa = broadcast_strides(a.shape(), &out_shape);
    let sb = broadcast_strides(b.shape(), &out_shape);
    let n: usize = out_shape.iter().product();
    let rank = out_shape.len();
    let inner = out_shape[rank - 1];
    let (ia, ib) = (sa[rank - 1], sb[rank - 1]);
    let (ad, bd) = (a.data(), b.data());
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    let rows = n / inner;
    for _ in 0..rows {
        for k in 0..inner {
            out.push(f(ad[oa + k * ia], bd[ob + k * ib]));
        }
        // advance the outer odometer (all axes but the last)
        for ax in (0..rank - 1).rev() {
            idx[ax] += 1;
            oa += sa[ax];
            ob += sb[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            oa -= sa[ax] * out_shape[ax];
            ob -= sb[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    Tensor::new(&out_shape, out)
}

/// Sums `g` over the axes where `shape` was broadcast.
pub fn reduce_to_shape(g: &Tensor, shape: &[usize]) -> Tensor {
    if g.shape() == shape {
        return g.clone();
    }
    let gs = g.shape().to_vec();
    let st = broadcast_strides(shape, &gs);
    let mut out = Tensor::zeros(shape);
    let rank = gs.len();
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    let od = out.data_mut();
    for &v in g.data() {
        od[off] += v;
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += st[ax];
            if idx[ax] < gs[ax] {
                break;
            }
            off -= st[ax] * gs[ax];
            idx[ax] = 0;
        }
    }
    out
}

impl Tape {
    fn unary(&self, x: Var, f: impl Fn(f64) -> f64, df: impl Fn(f64, f64) -> f64 + 'static) -> Var {
        // df(x, y) is dy/dx evaluated at input x with output y
        let xv = self.value(x);
        let y = xv.map(f);
        let yv = std::rc::Rc::new(y.clone());
        self.push_op(y, &[x], move |g| {
            let d = Tensor::new(
                g.shape(),
                g.data()
                    .iter()
                    .zip(xv.data())
                    .zip(yv.data())
                    .map(|((&g, &x), &y)| g * df(x, y))
                    .collect(),
            );
            vec![Some(d)]
        })
    }

    pub fn neg(&self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn scale(&self, x: Var, c: f64) -> Var {
        self.unary(x, move |v| v * c, move |_, _| c)
    }

    pub fn add_scalar(&self, x: Var, c: f64) -> Var {
        self.unary(x, move |v| v + c, |_, _| 1.0)
    }

    pub fn square(&self, x: Var) -> Var {
        self.unary(x, |v| v * v, |x, _| 2.0 * x)
    }

    pub fn sqrt(&self, x: Var) -> Var {
        self.unary(x, f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn exp(&self, x: Var) -> Var {
        self.unary(x, f64::exp, |_, y| y)
    }

    pub fn ln(&self, x: Var) -> Var {
        self.unary(x, f64::ln, |x, _| 1.0 / x)
    }

    pub fn log10(&self, x: Var) -> Var {
        self.unary(x, f64::log10, |x, _| 1.0 / (x * std::f64::consts::LN_10))
    }

    /// `x^p`; inputs must be positive unless `p` is an integer.
    pub fn powf(&self, x: Var, p: f64) -> Var {
        self.unary(x, move |v| v.powf(p), move |x, _| p * x.powf(p - 1.0))
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        self.unary(x, sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn tanh(&self, x: Var) -> Var {
        self.unary(x, f64::tanh, |_, y| 1.0 - y * y)
    }

    /// Clamp with zero gradient outside `[lo, hi]`.
    pub fn clamp(&self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(
            x,
            move |v| v.clamp(lo, hi),
            move |x, _| if x < lo || x > hi { 0.0 } else { 1.0 },
        )
    }

    /// `max(x, floor)`; gradient flows only where `x > floor`.
    pub fn floor_at(&self, x: Var, floor: f64) -> Var {
        self.unary(
            x,
            move |v| v.max(floor),
            move |x, _| if x > floor { 1.0 } else { 0.0 },
        )
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let y = broadcast_zip(&av, &bv, |x, y| x + y);
        let (sa, sb) = (av.shape().to_vec(), bv.shape().to_vec());
        self.push_op(y, &[a, b], move |g| {
            vec![Some(reduce_to_shape(g, &sa)), Some(reduce_to_shape(g, &sb))]
        })
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let y = broadcast_zip(&av, &bv, |x, y| x - y);
        let (sa, sb) = (av.shape().to_vec(), bv.shape().to_vec());
        self.push_op(y, &[a, b], move |g| {
            vec![
                Some(reduce_to_shape(g, &sa)),
                Some(reduce_to_shape(&g.scale(-1.0), &sb)),
            ]
        })
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let y = broadcast_zip(&av, &bv, |x, y| x * y);
        let (ra, rb) = (self.requires_grad(a), self.requires_grad(b));
        self.push_op(y, &[a, b], move |g| {
            let ga = ra.then(|| reduce_to_shape(&broadcast_zip(g, &bv, |g, b| g * b), av.shape()));
            let gb = rb.then(|| reduce_to_shape(&broadcast_zip(g, &av, |g, a| g * a), bv.shape()));
            vec![ga, gb]
        })
    }

    pub fn div(&self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let y = broadcast_zip(&av, &bv, |x, y| x / y);
        let yv = std::rc::Rc::new(y.clone());
        let (ra, rb) = (self.requires_grad(a), self.requires_grad(b));
        self.push_op(y, &[a, b], move |g| {
            let ga = ra.then(|| reduce_to_shape(&broadcast_zip(g, &bv, |g, b| g / b), av.shape()));
            let gb = rb.then(|| {
                let gy = broadcast_zip(g, &yv, |g, y| g * y);
                reduce_to_shape(&broadcast_zip(&gy, &bv, |gy, b| -gy / b), bv.shape())
            });
            vec![ga, gb]
        })
    }

    /// Elementwise minimum of two same-shape tensors; ties route to `a`.
    pub fn minimum(&self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let y = av.zip_map(&bv, f64::min);
        self.push_op(y, &[a, b], move |g| {
            let mut ga = g.clone();
            let mut gb = g.clone();
            for i in 0..g.numel() {
                if av.data()[i] <= bv.data()[i] {
                    gb.data_mut()[i] = 0.0;
                } else {
                    ga.data_mut()[i] = 0.0;
                }
            }
            vec![Some(ga), Some(gb)]
        })
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_zip_matches_manual() {
        let a = Tensor::from_fn(&[2, 3, 4], |i| i as f64);
        let b = Tensor::from_fn(&[2, 1, 4], |i| 10.0 * i as f64);
        let c = broadcast_zip(&a, &b, |x, y| x + y);
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..4 {
                    assert_eq!(c.at(&[i, j, k]), a.at(&[i, j, k]) + b.at(&[i, 0, k]));
                }
            }
        }
        let r = reduce_to_shape(&c, &[2, 1, 4]);
        for i in 0..2 {
            for k in 0..4 {
                let want: f64 = (0..3).map(|j| c.at(&[i, j, k])).sum();
                assert_eq!(r.at(&[i, 0, k]), want);
            }
        }
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }
}
