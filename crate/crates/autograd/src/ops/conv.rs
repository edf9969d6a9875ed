//! 2-D convolution over `[B, C, T, F]` maps.
//!
//! Time is always a stride-1 correlation; `time_pad` zero frames are placed
//! on the past side only, so frame `t` of the output sees input frames
//! `t + time_pad - (kt - 1) ..= t` after padding. Frequency supports stride,
//! symmetric padding and a transposed mode implemented as zero insertion
//! followed by a stride-1 correlation.

use rayon::prelude::*;

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Work size (MACs) below which kernels stay on the calling thread.
const PAR_THRESHOLD: usize = 1 << 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dCfg {
    pub stride: usize,
    pub pad: usize,
    pub time_pad: usize,
    pub groups: usize,
    pub transposed: bool,
}

impl Default for Conv2dCfg {
    fn default() -> Self {
        Self {
            stride: 1,
            pad: 0,
            time_pad: 0,
            groups: 1,
            transposed: false,
        }
    }
}

/// Geometry of one convolution call.
#[derive(Clone, Copy, Debug)]
struct Geom {
    b: usize,
    cin: usize,
    cout: usize,
    cin_g: usize,
    cout_g: usize,
    t: usize,
    f: usize,
    kt: usize,
    kf: usize,
    tp: usize,
    fp: usize,
    t_out: usize,
    f_out: usize,
    /// stride of the correlation over the padded map
    s: usize,
    /// frequency offset and step of input bins inside the padded map
    f_off: usize,
    f_step: usize,
    time_pad: usize,
}

impl Geom {
    fn new(x: &[usize], w: &[usize], cfg: &Conv2dCfg) -> Self {
        assert_eq!(x.len(), 4, "conv2d input must be [B, C, T, F], got {:?}", x);
        assert_eq!(w.len(), 4, "conv2d weight must be [Cout, Cin/G, kt, kf], got {:?}", w);
        let (b, cin, t, f) = (x[0], x[1], x[2], x[3]);
        let (cout, cin_g, kt, kf) = (w[0], w[1], w[2], w[3]);
        let g = cfg.groups;
        assert!(g >= 1 && cin % g == 0 && cout % g == 0, "groups {} do not divide {}->{}", g, cin, cout);
        assert_eq!(cin / g, cin_g, "weight expects {} input channels per group", cin_g);
        assert!(cfg.stride >= 1);
        let tp = t + cfg.time_pad;
        assert!(tp >= kt, "time extent {} exceeds padded length {}", kt, tp);
        let (fp, s, f_off, f_step) = if cfg.transposed {
            assert!(cfg.pad < kf, "transposed pad must be below the kernel extent");
            let pad = kf - 1 - cfg.pad;
            ((f - 1) * cfg.stride + 1 + 2 * pad, 1, pad, cfg.stride)
        } else {
            (f + 2 * cfg.pad, cfg.stride, cfg.pad, 1)
        };
        assert!(fp >= kf, "frequency extent {} exceeds padded width {}", kf, fp);
        Self {
            b,
            cin,
            cout,
            cin_g,
            cout_g: cout / g,
            t,
            f,
            kt,
            kf,
            tp,
            fp,
            t_out: tp - kt + 1,
            f_out: (fp - kf) / s + 1,
            s,
            f_off,
            f_step,
            time_pad: cfg.time_pad,
        }
    }

    fn macs(&self, bias: bool) -> usize {
        self.b * self.cout * self.t_out * self.f_out * (self.cin_g * self.kt * self.kf + bias as usize)
    }

    fn pad_input(&self, x: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.b * self.cin * self.tp * self.fp];
        for bc in 0..self.b * self.cin {
            for t in 0..self.t {
                let src = &x[(bc * self.t + t) * self.f..][..self.f];
                let row = (bc * self.tp + t + self.time_pad) * self.fp + self.f_off;
                for (k, &v) in src.iter().enumerate() {
                    p[row + k * self.f_step] = v;
                }
            }
        }
        p
    }

    fn unpad_grad(&self, gp: &[f64]) -> Vec<f64> {
        let mut gx = vec![0.0; self.b * self.cin * self.t * self.f];
        for bc in 0..self.b * self.cin {
            for t in 0..self.t {
                let dst = &mut gx[(bc * self.t + t) * self.f..][..self.f];
                let row = (bc * self.tp + t + self.time_pad) * self.fp + self.f_off;
                for (k, d) in dst.iter_mut().enumerate() {
                    *d = gp[row + k * self.f_step];
                }
            }
        }
        gx
    }
}

fn maybe_par<T: Send>(items: &mut [T], chunk: usize, par: bool, f: impl Fn(usize, &mut [T]) + Sync + Send) {
    if par {
        items.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    } else {
        items.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
}

fn forward(g: &Geom, p: &[f64], w: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let plane = g.t_out * g.f_out;
    let mut out = vec![0.0; g.b * g.cout * plane];
    let par = g.macs(false) >= PAR_THRESHOLD;
    maybe_par(&mut out, plane, par, |idx, o| {
        let (b, co) = (idx / g.cout, idx % g.cout);
        if let Some(bias) = bias {
            o.iter_mut().for_each(|v| *v = bias[co]);
        }
        let grp = co / g.cout_g;
        for cig in 0..g.cin_g {
            let ci = grp * g.cin_g + cig;
            let pin = &p[(b * g.cin + ci) * g.tp * g.fp..][..g.tp * g.fp];
            let wk = &w[(co * g.cin_g + cig) * g.kt * g.kf..][..g.kt * g.kf];
            for dt in 0..g.kt {
                for df in 0..g.kf {
                    let wv = wk[dt * g.kf + df];
                    if wv == 0.0 {
                        continue;
                    }
                    for t in 0..g.t_out {
                        let row = &pin[(t + dt) * g.fp + df..];
                        let orow = &mut o[t * g.f_out..(t + 1) * g.f_out];
                        if g.s == 1 {
                            for (ov, &pv) in orow.iter_mut().zip(row) {
                                *ov += wv * pv;
                            }
                        } else {
                            for (f, ov) in orow.iter_mut().enumerate() {
                                *ov += wv * row[f * g.s];
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

fn grad_weight(g: &Geom, p: &[f64], go: &[f64]) -> Vec<f64> {
    let wsz = g.cin_g * g.kt * g.kf;
    let mut gw = vec![0.0; g.cout * wsz];
    let par = g.macs(false) >= PAR_THRESHOLD;
    maybe_par(&mut gw, wsz, par, |co, gwc| {
        let grp = co / g.cout_g;
        for b in 0..g.b {
            let gplane = &go[(b * g.cout + co) * g.t_out * g.f_out..][..g.t_out * g.f_out];
            for cig in 0..g.cin_g {
                let ci = grp * g.cin_g + cig;
                let pin = &p[(b * g.cin + ci) * g.tp * g.fp..][..g.tp * g.fp];
                for dt in 0..g.kt {
                    for df in 0..g.kf {
                        let mut acc = 0.0;
                        for t in 0..g.t_out {
                            let row = &pin[(t + dt) * g.fp + df..];
                            let grow = &gplane[t * g.f_out..(t + 1) * g.f_out];
                            for (f, &gv) in grow.iter().enumerate() {
                                acc += gv * row[f * g.s];
                            }
                        }
                        gwc[(cig * g.kt + dt) * g.kf + df] += acc;
                    }
                }
            }
        }
    });
    gw
}

fn grad_padded_input(g: &Geom, w: &[f64], go: &[f64]) -> Vec<f64> {
    let plane = g.tp * g.fp;
    let mut gp = vec![0.0; g.b * g.cin * plane];
    let par = g.macs(false) >= PAR_THRESHOLD;
    maybe_par(&mut gp, plane, par, |idx, gpc| {
        let (b, ci) = (idx / g.cin, idx % g.cin);
        let grp = ci / g.cin_g;
        let cig = ci % g.cin_g;
        for cog in 0..g.cout_g {
            let co = grp * g.cout_g + cog;
            let gplane = &go[(b * g.cout + co) * g.t_out * g.f_out..][..g.t_out * g.f_out];
            let wk = &w[(co * g.cin_g + cig) * g.kt * g.kf..][..g.kt * g.kf];
            for dt in 0..g.kt {
                for df in 0..g.kf {
                    let wv = wk[dt * g.kf + df];
                    if wv == 0.0 {
                        continue;
                    }
                    for t in 0..g.t_out {
                        let base = (t + dt) * g.fp + df;
                        let grow = &gplane[t * g.f_out..(t + 1) * g.f_out];
                        for (f, &gv) in grow.iter().enumerate() {
                            gpc[base + f * g.s] += wv * gv;
                        }
                    }
                }
            }
        }
    });
    gp
}

/// Output frequency size of a conv with the given settings.
pub fn conv_out_len(f: usize, kf: usize, cfg: &Conv2dCfg) -> usize {
    if cfg.transposed {
        (f - 1) * cfg.stride + kf - 2 * cfg.pad
    } else {
        (f + 2 * cfg.pad - kf) / cfg.stride + 1
    }
}

impl Tape {
    /// Grouped 2-D convolution; see the module docs for the padding rules.
    pub fn conv2d(&self, x: Var, w: Var, bias: Option<Var>, cfg: Conv2dCfg) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        let g = Geom::new(xv.shape(), wv.shape(), &cfg);
        let bv = bias.map(|b| self.value(b));
        if let Some(bv) = &bv {
            assert_eq!(bv.shape(), &[g.cout], "conv2d bias must be [Cout]");
        }
        self.count_macs(g.macs(bias.is_some()) as u64);
        let p = g.pad_input(xv.data());
        let out = forward(&g, &p, wv.data(), bv.as_ref().map(|b| b.data()));
        let y = Tensor::new(&[g.b, g.cout, g.t_out, g.f_out], out);
        let mut parents = vec![x, w];
        parents.extend(bias);
        let (rx, rw) = (self.requires_grad(x), self.requires_grad(w));
        let has_bias = bias.is_some();
        let wshape = wv.shape().to_vec();
        self.push_op(y, &parents, move |go| {
            let god = go.data();
            let gx = rx.then(|| {
                let gp = grad_padded_input(&g, wv.data(), god);
                Tensor::new(&[g.b, g.cin, g.t, g.f], g.unpad_grad(&gp))
            });
            let gw = rw.then(|| Tensor::new(&wshape, grad_weight(&g, &p, god)));
            let mut grads = vec![gx, gw];
            if has_bias {
                let plane = g.t_out * g.f_out;
                let mut gb = vec![0.0; g.cout];
                for (i, chunk) in god.chunks(plane).enumerate() {
                    gb[i % g.cout] += chunk.iter().sum::<f64>();
                }
                grads.push(Some(Tensor::new(&[g.cout], gb)));
            }
            grads
        })
    }
}
