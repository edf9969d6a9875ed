//! The assembled enhancement network: band merge, mirrored encoder and
//! decoder around the dual-path bottleneck, band split back to 257 bins.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use litese_autograd::{Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::gdprnn::Gdprnn;
use super::spec::ArchitectureSpec;
use crate::error::{invalid, Error, Result};
use crate::frontend::{self, ErbFilterbank, Spectrogram, BINS, HOP, LOG_EPS, MERGED};
use crate::nn::layers::{Banding, BN_MOMENTUM};
use crate::nn::{build_block, effective_groups, Block, BlockPlacement, BlockSpec, BnUpdate, Ctx, LayerCost, Module, Param};

#[derive(Clone, Debug)]
pub struct Model {
    pub spec: ArchitectureSpec,
    pub merge: Banding,
    pub encoder: Vec<Block>,
    pub bottleneck: Vec<Gdprnn>,
    /// Ordered from the deepest block outwards; `decoder[j]` mirrors
    /// encoder block `4 - j`.
    pub decoder: Vec<Block>,
    pub split: Banding,
}

impl Model {
    /// Builds the network. Errors identify the offending encoder block.
    pub fn assemble(spec: &ArchitectureSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fb = ErbFilterbank::new();
        let n = spec.blocks.len();

        let mut fs = vec![MERGED];
        let mut encoder = Vec::with_capacity(n);
        for (i, b) in spec.blocks.iter().enumerate() {
            let placement = BlockPlacement {
                name: &format!("enc.{}", i),
                cin: spec.block_input(i),
                f_in: fs[i],
                gate: false,
            };
            let block = build_block(b, placement, &mut rng).map_err(|msg| Error::Construction { index: i, msg })?;
            if block.f_out == 0 {
                return Err(Error::Construction {
                    index: i,
                    msg: "frequency axis collapsed to zero bins".into(),
                });
            }
            fs.push(block.f_out);
            encoder.push(block);
        }

        let c = spec.blocks[n - 1].channels;
        let w = fs[n];
        let bottleneck = (0..spec.bottleneck.modules)
            .map(|m| Gdprnn::new(&format!("mid.{}", m), c, w, spec.bottleneck.groups, &mut rng))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|msg| Error::Construction { index: n - 1, msg })?;

        let mut decoder = Vec::with_capacity(n);
        for i in (0..n).rev() {
            let mirror = BlockSpec {
                channels: spec.block_input(i),
                groups: effective_groups(spec.blocks[i].channels, spec.block_input(i), spec.blocks[i].groups),
                transposed: true,
                ..spec.blocks[i]
            };
            let placement = BlockPlacement {
                name: &format!("dec.{}", i),
                cin: spec.blocks[i].channels,
                f_in: fs[i + 1],
                gate: i == 0,
            };
            let block = build_block(&mirror, placement, &mut rng).map_err(|msg| Error::Construction { index: i, msg })?;
            if block.f_out != fs[i] {
                return Err(Error::Construction {
                    index: i,
                    msg: format!("decoder restores {} bins instead of {}", block.f_out, fs[i]),
                });
            }
            decoder.push(block);
        }

        Ok(Self {
            spec: spec.clone(),
            merge: Banding::new("bm", fb.merge_high.clone(), true),
            encoder,
            bottleneck,
            decoder,
            split: Banding::new("bs", fb.split_high.clone(), false),
        })
    }

    /// Frequency widths after each encoder block, starting with the merged input.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(MERGED).chain(self.encoder.iter().map(|b| b.f_out)).collect()
    }

    /// `feat: [B, 1, T, 257]` log-power to a `[B, 1, T, 257]` mask in (0, 1).
    pub fn forward(&self, ctx: &Ctx, feat: Var) -> Var {
        let t = ctx.tape;
        let mut x = self.merge.forward(ctx, feat);
        let mut skips = Vec::with_capacity(self.encoder.len());
        for b in &self.encoder {
            x = b.forward(ctx, x);
            skips.push(x);
        }
        for m in &self.bottleneck {
            x = m.forward(ctx, x);
        }
        for (b, e) in self.decoder.iter().zip(skips.iter().rev()) {
            x = b.forward(ctx, t.add(x, *e));
        }
        self.split.forward(ctx, x)
    }

    /// Log-power features from a `[B, 2, T, 257]` real/imaginary spectrogram.
    pub fn features_var(tape: &Tape, spec: Var) -> Var {
        let s = tape.shape(spec);
        let re = tape.narrow(spec, 1, 0, 1);
        let im = tape.narrow(spec, 1, 1, 1);
        let p = tape.add(tape.square(re), tape.square(im));
        debug_assert_eq!(s[3], BINS);
        tape.ln(tape.add_scalar(p, LOG_EPS))
    }

    /// Inference mask for a whole spectrogram, `[T, 257]`.
    pub fn mask(&self, spec: &Spectrogram) -> Tensor {
        let tape = Tape::no_grad();
        let ctx = Ctx::eval(&tape);
        let feat = frontend::log_power(spec).reshape(&[1, 1, spec.frames, BINS]);
        let x = tape.constant(feat);
        let m = self.forward(&ctx, x);
        (*tape.value(m)).clone().reshape(&[spec.frames, BINS])
    }

    /// Offline enhancement of a 16 kHz waveform; output has the input length.
    pub fn enhance(&self, noisy: &[f64]) -> Result<Vec<f64>> {
        if noisy.is_empty() {
            return Ok(Vec::new());
        }
        if noisy.iter().any(|v| !v.is_finite()) {
            return invalid("waveform contains non-finite samples");
        }
        let n = noisy.len();
        let hops = n.div_ceil(HOP);
        let mut padded = vec![0.0; HOP + hops * HOP + HOP];
        padded[HOP..HOP + n].copy_from_slice(noisy);
        let spec = frontend::stft(&padded)?;
        let mask = self.mask(&spec);
        let mut est = spec.clone();
        for (c, m) in est.bins.iter_mut().zip(mask.data()) {
            *c *= *m;
        }
        let y = frontend::istft(&est)?;
        Ok(y[HOP..HOP + n].to_vec())
    }

    /// Copy with every reparameterized block folded to its inference form.
    pub fn merged(&self) -> Self {
        Self {
            encoder: self.encoder.iter().map(Block::merged).collect(),
            decoder: self.decoder.iter().map(Block::merged).collect(),
            ..self.clone()
        }
    }

    /// Folds batch statistics into the running estimates of the named norms.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate]) {
        let by_name: HashMap<&str, &BnUpdate> = updates.iter().map(|u| (u.name.as_str(), u)).collect();
        self.visit_mut(&mut |p| {
            let (base, is_mean) = if let Some(b) = p.name.strip_suffix(".running_mean") {
                (b, true)
            } else if let Some(b) = p.name.strip_suffix(".running_var") {
                (b, false)
            } else {
                return;
            };
            let Some(u) = by_name.get(base) else { return };
            let n = u.count as f64;
            let unbias = if is_mean || n <= 1.0 { 1.0 } else { n / (n - 1.0) };
            let obs = if is_mean { &u.mean } else { &u.var };
            for (r, o) in p.value.data_mut().iter_mut().zip(obs.data()) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * o * unbias;
            }
        });
    }

    /// Hash of the architecture and every stored value; identifies the
    /// model a streaming state belongs to.
    pub fn fingerprint(&self) -> String {
        let mut h = DefaultHasher::new();
        self.spec.hash(&mut h);
        self.visit(&mut |p| {
            p.name.hash(&mut h);
            for v in p.value.data() {
                v.to_bits().hash(&mut h);
            }
        });
        format!("{:016x}", h.finish())
    }

    pub fn trainable_count(&self) -> usize {
        self.params().iter().filter(|p| p.trainable).map(|p| p.numel()).sum()
    }
}

impl Module for Model {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        self.merge.visit(f);
        for b in &self.encoder {
            b.visit(f);
        }
        for m in &self.bottleneck {
            m.visit(f);
        }
        for b in &self.decoder {
            b.visit(f);
        }
        self.split.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.merge.visit_mut(f);
        for b in &mut self.encoder {
            b.visit_mut(f);
        }
        for m in &mut self.bottleneck {
            m.visit_mut(f);
        }
        for b in &mut self.decoder {
            b.visit_mut(f);
        }
        self.split.visit_mut(f);
    }
    fn costs(&self, out: &mut Vec<LayerCost>) {
        self.merge.costs(out);
        for b in &self.encoder {
            b.costs(out);
        }
        for m in &self.bottleneck {
            m.costs(out);
        }
        for b in &self.decoder {
            b.costs(out);
        }
        self.split.costs(out);
    }
}
