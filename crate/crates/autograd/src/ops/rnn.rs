//! Gated recurrent unit with backpropagation through time.

use rayon::prelude::*;

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

use super::elementwise::sigmoid;

/// Sequences per work item; fixed so gradient sums are order-stable.
const SEQ_CHUNK: usize = 16;

#[derive(Clone, Copy)]
struct Dims {
    l: usize,
    i: usize,
    h: usize,
    reverse: bool,
}

impl Dims {
    fn step(&self, s: usize) -> usize {
        if self.reverse {
            self.l - 1 - s
        } else {
            s
        }
    }
}

/// MACs of one GRU step: gate products plus biases and gate arithmetic.
pub fn gru_step_macs(input: usize, hidden: usize) -> usize {
    3 * hidden * (input + hidden) + 13 * hidden
}

struct SeqCache {
    /// per processed step: r, z, n, W_hn h + b_hn, h_prev
    r: Vec<f64>,
    z: Vec<f64>,
    nn: Vec<f64>,
    ghn: Vec<f64>,
    hprev: Vec<f64>,
}

fn matvec(w: &[f64], x: &[f64], rows: usize, cols: usize, out: &mut [f64]) {
    for r in 0..rows {
        let wr = &w[r * cols..(r + 1) * cols];
        out[r] += wr.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

struct Weights<'a> {
    wih: &'a [f64],
    whh: &'a [f64],
    bih: &'a [f64],
    bhh: &'a [f64],
}

fn run_seq(d: &Dims, w: &Weights, x: &[f64], h0: &[f64], out: &mut [f64]) -> SeqCache {
    let (h, i) = (d.h, d.i);
    let mut c = SeqCache {
        r: vec![0.0; d.l * h],
        z: vec![0.0; d.l * h],
        nn: vec![0.0; d.l * h],
        ghn: vec![0.0; d.l * h],
        hprev: vec![0.0; d.l * h],
    };
    let mut hcur = h0.to_vec();
    let mut gi = vec![0.0; 3 * h];
    let mut gh = vec![0.0; 3 * h];
    for s in 0..d.l {
        let t = d.step(s);
        gi.copy_from_slice(w.bih);
        gh.copy_from_slice(w.bhh);
        matvec(w.wih, &x[t * i..(t + 1) * i], 3 * h, i, &mut gi);
        matvec(w.whh, &hcur, 3 * h, h, &mut gh);
        let o = s * h;
        c.hprev[o..o + h].copy_from_slice(&hcur);
        for k in 0..h {
            let r = sigmoid(gi[k] + gh[k]);
            let z = sigmoid(gi[h + k] + gh[h + k]);
            let n = (gi[2 * h + k] + r * gh[2 * h + k]).tanh();
            c.r[o + k] = r;
            c.z[o + k] = z;
            c.nn[o + k] = n;
            c.ghn[o + k] = gh[2 * h + k];
            hcur[k] = (1.0 - z) * n + z * hcur[k];
        }
        out[t * h..(t + 1) * h].copy_from_slice(&hcur);
    }
    c
}

#[derive(Clone)]
struct Grads {
    wih: Vec<f64>,
    whh: Vec<f64>,
    bih: Vec<f64>,
    bhh: Vec<f64>,
}

impl Grads {
    fn zeros(d: &Dims) -> Self {
        Self {
            wih: vec![0.0; 3 * d.h * d.i],
            whh: vec![0.0; 3 * d.h * d.h],
            bih: vec![0.0; 3 * d.h],
            bhh: vec![0.0; 3 * d.h],
        }
    }

    fn add(&mut self, o: &Grads) {
        for (a, b) in [
            (&mut self.wih, &o.wih),
            (&mut self.whh, &o.whh),
            (&mut self.bih, &o.bih),
            (&mut self.bhh, &o.bhh),
        ] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

/// Backward of one sequence; writes dx and returns dh0.
fn back_seq(d: &Dims, w: &Weights, c: &SeqCache, x: &[f64], gout: &[f64], dx: &mut [f64], acc: &mut Grads) -> Vec<f64> {
    let (h, i) = (d.h, d.i);
    let mut dh = vec![0.0; h];
    let mut dgi = vec![0.0; 3 * h];
    let mut dgh = vec![0.0; 3 * h];
    for s in (0..d.l).rev() {
        let t = d.step(s);
        let o = s * h;
        for k in 0..h {
            dh[k] += gout[t * h + k];
        }
        let mut dprev = vec![0.0; h];
        for k in 0..h {
            let (r, z, n) = (c.r[o + k], c.z[o + k], c.nn[o + k]);
            let hp = c.hprev[o + k];
            let dz = dh[k] * (hp - n);
            let dn = dh[k] * (1.0 - z);
            dprev[k] = dh[k] * z;
            let dan = dn * (1.0 - n * n);
            let dr = dan * c.ghn[o + k];
            let dar = dr * r * (1.0 - r);
            let daz = dz * z * (1.0 - z);
            dgi[k] = dar;
            dgi[h + k] = daz;
            dgi[2 * h + k] = dan;
            dgh[k] = dar;
            dgh[h + k] = daz;
            dgh[2 * h + k] = dan * r;
        }
        let xt = &x[t * i..(t + 1) * i];
        let hp = &c.hprev[o..o + h];
        for row in 0..3 * h {
            let (a, b) = (dgi[row], dgh[row]);
            acc.bih[row] += a;
            acc.bhh[row] += b;
            if a != 0.0 {
                let wr = &mut acc.wih[row * i..(row + 1) * i];
                wr.iter_mut().zip(xt).for_each(|(g, &xv)| *g += a * xv);
                let dxt = &mut dx[t * i..(t + 1) * i];
                dxt.iter_mut()
                    .zip(&w.wih[row * i..(row + 1) * i])
                    .for_each(|(g, &wv)| *g += a * wv);
            }
            if b != 0.0 {
                let wr = &mut acc.whh[row * h..(row + 1) * h];
                wr.iter_mut().zip(hp).for_each(|(g, &hv)| *g += b * hv);
                dprev
                    .iter_mut()
                    .zip(&w.whh[row * h..(row + 1) * h])
                    .for_each(|(g, &wv)| *g += b * wv);
            }
        }
        dh = dprev;
    }
    dh
}

impl Tape {
    /// Runs a GRU over `x: [N, L, in]` and returns all hidden states `[N, L, h]`.
    ///
    /// Gates follow the usual reset/update/new layout (`w_ih: [3h, in]`,
    /// `w_hh: [3h, h]`). With `reverse` the sequence is consumed from the
    /// end, and output position `t` holds the state after reading `x[t..]`.
    #[allow(clippy::too_many_arguments)]
    pub fn gru(&self, x: Var, h0: Option<Var>, w_ih: Var, w_hh: Var, b_ih: Var, b_hh: Var, reverse: bool) -> Var {
        let xv = self.value(x);
        let [n, l, i] = xv.shape()[..] else {
            panic!("gru input must be [N, L, in], got {:?}", xv.shape())
        };
        let (wih, whh, bih, bhh) = (self.value(w_ih), self.value(w_hh), self.value(b_ih), self.value(b_hh));
        let h = whh.dim(1);
        assert_eq!(wih.shape(), &[3 * h, i], "gru w_ih shape");
        assert_eq!(whh.shape(), &[3 * h, h], "gru w_hh shape");
        let d = Dims { l, i, h, reverse };
        let h0v = match h0 {
            Some(v) => {
                let t = self.value(v);
                assert_eq!(t.shape(), &[n, h], "gru h0 must be [N, h]");
                (*t).clone()
            }
            None => Tensor::zeros(&[n, h]),
        };
        self.count_macs((n * l * gru_step_macs(i, h)) as u64);
        let mut out = vec![0.0; n * l * h];
        let caches: Vec<SeqCache> = {
            let w = Weights {
                wih: wih.data(),
                whh: whh.data(),
                bih: bih.data(),
                bhh: bhh.data(),
            };
            let xd = xv.data();
            let hd = h0v.data();
            let work = |(j, o): (usize, &mut [f64])| run_seq(&d, &w, &xd[j * l * i..(j + 1) * l * i], &hd[j * h..(j + 1) * h], o);
            if n * l * gru_step_macs(i, h) >= 1 << 16 {
                out.par_chunks_mut(l * h).enumerate().map(work).collect()
            } else {
                out.chunks_mut(l * h).enumerate().map(work).collect()
            }
        };
        let mut parents = vec![x, w_ih, w_hh, b_ih, b_hh];
        parents.extend(h0);
        let has_h0 = h0.is_some();
        self.push_op(Tensor::new(&[n, l, h], out), &parents, move |g| {
            let w = Weights {
                wih: wih.data(),
                whh: whh.data(),
                bih: bih.data(),
                bhh: bhh.data(),
            };
            let xd = xv.data();
            let gd = g.data();
            let mut dx = vec![0.0; n * l * i];
            let mut dh0 = vec![0.0; n * h];
            let partials: Vec<Grads> = dx
                .par_chunks_mut(SEQ_CHUNK * l * i)
                .zip(dh0.par_chunks_mut(SEQ_CHUNK * h))
                .enumerate()
                .map(|(ci, (dxc, dhc))| {
                    let mut acc = Grads::zeros(&d);
                    for k in 0..dhc.len() / h {
                        let j = ci * SEQ_CHUNK + k;
                        let dh = back_seq(
                            &d,
                            &w,
                            &caches[j],
                            &xd[j * l * i..(j + 1) * l * i],
                            &gd[j * l * h..(j + 1) * l * h],
                            &mut dxc[k * l * i..(k + 1) * l * i],
                            &mut acc,
                        );
                        dhc[k * h..(k + 1) * h].copy_from_slice(&dh);
                    }
                    acc
                })
                .collect();
            let mut total = Grads::zeros(&d);
            for p in &partials {
                total.add(p);
            }
            let mut grads = vec![
                Some(Tensor::new(&[n, l, i], dx)),
                Some(Tensor::new(&[3 * h, i], total.wih)),
                Some(Tensor::new(&[3 * h, h], total.whh)),
                Some(Tensor::new(&[3 * h], total.bih)),
                Some(Tensor::new(&[3 * h], total.bhh)),
            ];
            if has_h0 {
                grads.push(Some(Tensor::new(&[n, h], dh0)));
            }
            grads
        })
    }
}
