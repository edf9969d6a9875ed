//! Adam training loop with periodic held-out SISNR validation.

use std::collections::HashMap;
use std::io::Write;
use std::time::{Duration, Instant};

use litese_autograd::{Adam, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::Pair;
use super::loss::{hybrid_loss_var, sisnr_db, LossWeights};
use super::schedule::{Plateau, ScheduleConfig, ScheduleKind};
use crate::error::{invalid, Error, Result};
use crate::frontend::{stft_var, istft_var, HOP, WIN};
use crate::network::Model;
use crate::nn::{Ctx, Module};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch: usize,
    /// Training crop in samples; a multiple of the hop.
    pub segment: usize,
    pub schedule: ScheduleConfig,
    /// Overrides the schedule with a fixed rate.
    pub constant_lr: Option<f64>,
    pub weights: LossWeights,
    /// Global gradient-norm clip.
    pub clip_norm: Option<f64>,
    /// Steps per validation (one "epoch" for the plateau schedule).
    pub valid_every: u64,
    pub seed: u64,
    /// Wall-clock limit; training stops after the step that crosses it.
    pub time_budget_s: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch: 4,
            segment: 32 * HOP,
            schedule: ScheduleConfig::default(),
            constant_lr: None,
            weights: LossWeights::default(),
            clip_norm: Some(5.0),
            valid_every: 100,
            seed: 0,
            time_budget_s: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.steps == 0 || self.valid_every == 0 {
            return invalid("steps, batch and valid_every must be positive");
        }
        if self.segment < WIN || self.segment % HOP != 0 {
            return invalid(format!("segment must be a multiple of {} and at least {}", HOP, WIN));
        }
        self.weights.validate()?;
        self.schedule.validate()
    }
}

/// One line of the metric log.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub valid: Option<Validation>,
    pub elapsed_s: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Validation {
    /// Mean SISNR (dB) of the enhanced held-out signals.
    pub sisnr_db: f64,
    /// Mean SISNR (dB) of the unprocessed noisy inputs.
    pub noisy_sisnr_db: f64,
    pub improvement_db: f64,
}

pub struct Trainer {
    pub model: Model,
    pub cfg: TrainConfig,
    pub step: u64,
    pub log: Vec<LogEntry>,
    adam: Adam,
    plateau: Plateau,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model: Model, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            model,
            adam: Adam::new(cfg.schedule.lr_peak),
            plateau: Plateau::new(&cfg.schedule),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            step: 0,
            log: Vec::new(),
        })
    }

    pub fn lr(&self) -> f64 {
        match (self.cfg.constant_lr, self.cfg.schedule.kind) {
            (Some(lr), _) => lr,
            (None, ScheduleKind::WarmupCosine) => self.cfg.schedule.lr_at_step(self.step),
            (None, ScheduleKind::PlateauHalving) => self.plateau.lr,
        }
    }

    /// Random aligned crops, one per batch slot.
    fn sample(&mut self, pairs: &[Pair]) -> Result<(Vec<f64>, Vec<f64>)> {
        let seg = self.cfg.segment;
        let mut noisy = Vec::with_capacity(self.cfg.batch * seg);
        let mut clean = Vec::with_capacity(self.cfg.batch * seg);
        for _ in 0..self.cfg.batch {
            let p = &pairs[self.rng.gen_range(0..pairs.len())];
            if p.noisy.len() < seg || p.clean.len() != p.noisy.len() {
                return invalid(format!("training pairs must hold at least {} aligned samples", seg));
            }
            let start = self.rng.gen_range(0..=p.noisy.len() - seg);
            noisy.extend_from_slice(&p.noisy[start..start + seg]);
            clean.extend_from_slice(&p.clean[start..start + seg]);
        }
        Ok((noisy, clean))
    }

    /// Loss and trainable-parameter gradients (in visit order) on one batch.
    pub fn loss_and_grads(&self, noisy: &[f64], clean: &[f64]) -> Result<(f64, Vec<Option<Tensor>>, Vec<crate::nn::BnUpdate>)> {
        let b = noisy.len() / self.cfg.segment;
        let n = self.cfg.segment;
        let tape = Tape::new();
        let ctx = Ctx::train(&tape);
        let x = tape.constant(Tensor::new(&[b, n], noisy.to_vec()));
        let s = tape.constant(Tensor::new(&[b, n], clean.to_vec()));
        let spec = stft_var(&tape, x);
        let feat = Model::features_var(&tape, spec);
        let mask = self.model.forward(&ctx, feat);
        let est_wave = istft_var(&tape, tape.mul(spec, mask));
        let est_spec = stft_var(&tape, est_wave);
        let ref_spec = stft_var(&tape, s);
        let loss = hybrid_loss_var(&tape, est_wave, s, est_spec, ref_spec, &self.cfg.weights);
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Diverged(format!("loss {} at step {}", value, self.step)));
        }
        let grads = tape.backward(loss);
        let leaves: HashMap<String, _> = ctx.leaves();
        let mut out = Vec::new();
        self.model.visit(&mut |p| {
            if p.trainable {
                out.push(leaves.get(&p.name).and_then(|v| grads.get(*v)).cloned());
            }
        });
        Ok((value, out, ctx.take_bn_updates()))
    }

    /// One optimizer step on a given batch of `[batch * segment]` samples.
    pub fn step_on(&mut self, noisy: &[f64], clean: &[f64]) -> Result<f64> {
        let (loss, mut grads, bn) = self.loss_and_grads(noisy, clean)?;
        if let Some(max) = self.cfg.clip_norm {
            let norm = grads.iter().flatten().map(|g| g.sq_norm()).sum::<f64>().sqrt();
            if !norm.is_finite() {
                return Err(Error::Diverged(format!("gradient norm {} at step {}", norm, self.step)));
            }
            if norm > max {
                for g in grads.iter_mut().flatten() {
                    g.scale(max / norm);
                }
            }
        }
        self.adam.lr = self.lr();
        let mut values = Vec::new();
        self.model.visit_mut(&mut |p| {
            if p.trainable {
                values.push(std::mem::replace(&mut p.value, Tensor::zeros(&[0])));
            }
        });
        self.adam.step(values.iter_mut().zip(grads.iter().map(|g| g.as_ref())));
        let mut it = values.into_iter();
        self.model.visit_mut(&mut |p| {
            if p.trainable {
                p.value = it.next().expect("same parameter order");
            }
        });
        self.model.apply_bn_updates(&bn);
        self.step += 1;
        Ok(loss)
    }

    pub fn train_step(&mut self, pairs: &[Pair]) -> Result<f64> {
        let (noisy, clean) = self.sample(pairs)?;
        self.step_on(&noisy, &clean)
    }

    /// Offline enhancement of each held-out pair, scored by SISNR in dB.
    pub fn validate(&self, pairs: &[Pair]) -> Result<Validation> {
        if pairs.is_empty() {
            return invalid("empty validation set");
        }
        let (mut enh, mut raw) = (0.0, 0.0);
        for p in pairs {
            let y = self.model.enhance(&p.noisy)?;
            enh += sisnr_db(&y, &p.clean)?;
            raw += sisnr_db(&p.noisy, &p.clean)?;
        }
        let k = pairs.len() as f64;
        Ok(Validation {
            sisnr_db: enh / k,
            noisy_sisnr_db: raw / k,
            improvement_db: (enh - raw) / k,
        })
    }

    /// Runs the configured number of steps, validating every `valid_every`
    /// steps and at the end. Log lines are also written to `sink` as JSON.
    pub fn fit(&mut self, train: &[Pair], valid: &[Pair], mut sink: Option<&mut dyn Write>) -> Result<Validation> {
        if train.is_empty() {
            return invalid("empty training set");
        }
        let start = Instant::now();
        let budget = self.cfg.time_budget_s.map(Duration::from_secs_f64);
        let mut last = None;
        while self.step < self.cfg.steps {
            let lr = self.lr();
            let loss = self.train_step(train)?;
            let out_of_time = budget.is_some_and(|b| start.elapsed() >= b);
            let due = self.step % self.cfg.valid_every == 0 || self.step == self.cfg.steps || out_of_time;
            let valid_result = if due && !valid.is_empty() {
                let v = self.validate(valid)?;
                if self.cfg.schedule.kind == ScheduleKind::PlateauHalving {
                    self.plateau.observe(-v.sisnr_db);
                }
                last = Some(v);
                Some(v)
            } else {
                None
            };
            let entry = LogEntry {
                step: self.step,
                lr,
                loss,
                valid: valid_result,
                elapsed_s: start.elapsed().as_secs_f64(),
            };
            if let Some(w) = sink.as_deref_mut() {
                let line = serde_json::to_string(&entry).map_err(|e| Error::InvalidInput(e.to_string()))?;
                writeln!(w, "{}", line)?;
            }
            if due {
                log::info!("step {} loss {:.5} lr {:.2e} {:?}", entry.step, loss, lr, valid_result);
            }
            self.log.push(entry);
            if out_of_time {
                break;
            }
        }
        match last {
            Some(v) => Ok(v),
            None => self.validate(valid),
        }
    }
}
