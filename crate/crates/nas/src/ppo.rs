//! Clipped-surrogate policy updates for the controller.

use litese_autograd::{Adam, Tape, Tensor};
use serde::{Deserialize, Serialize};

use crate::controller::Controller;
use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub lr: f64,
    pub clip: f64,
    /// Surrogate optimization passes per episode.
    pub epochs: usize,
    /// Decay of the moving-average reward baseline.
    pub baseline_decay: f64,
    /// Episodes without a new best reward before the learning rate drops.
    pub patience: usize,
    pub lr_factor: f64,
    /// Weight of the policy-entropy bonus in the objective.
    pub entropy: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            clip: 0.2,
            epochs: 4,
            baseline_decay: 0.9,
            patience: 5,
            lr_factor: 0.5,
            entropy: 0.05,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return invalid(format!("ppo lr must be positive, got {}", self.lr));
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return invalid(format!("ppo clip must lie in (0, 1), got {}", self.clip));
        }
        if self.epochs == 0 {
            return invalid("ppo needs at least one epoch");
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return invalid("baseline decay must lie in [0, 1)");
        }
        if !(self.lr_factor > 0.0 && self.lr_factor <= 1.0) {
            return invalid("lr factor must lie in (0, 1]");
        }
        if !(self.entropy >= 0.0 && self.entropy.is_finite()) {
            return invalid("entropy weight must be non-negative");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateStats {
    pub baseline: f64,
    pub mean_reward: f64,
    /// Surrogate objective of the last epoch.
    pub objective: f64,
    /// Epochs skipped because of non-finite gradients.
    pub skipped: usize,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct Ppo {
    pub cfg: PpoConfig,
    pub adam: Adam,
    /// Moving average of episode mean rewards; set from the first episode.
    pub baseline: Option<f64>,
    best: f64,
    stale: usize,
}

impl Ppo {
    pub fn new(cfg: PpoConfig) -> Self {
        Self {
            adam: Adam::new(cfg.lr),
            cfg,
            baseline: None,
            best: f64::NEG_INFINITY,
            stale: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.adam.lr
    }

    /// One episode's update. `old_log_probs` are the sampling-time
    /// log-probabilities of `sequences`.
    pub fn update(
        &mut self,
        ctrl: &mut Controller,
        sequences: &[Vec<usize>],
        old_log_probs: &[f64],
        rewards: &[f64],
    ) -> Result<UpdateStats> {
        let n = sequences.len();
        if n == 0 || old_log_probs.len() != n || rewards.len() != n {
            return invalid("episode needs matching, non-empty sequences, log-probs and rewards");
        }
        if rewards.iter().any(|r| !r.is_finite()) {
            return invalid("rewards must be finite");
        }
        let mean = rewards.iter().sum::<f64>() / n as f64;
        let baseline = *self.baseline.get_or_insert(mean);
        let adv = Tensor::new(&[n], rewards.iter().map(|r| r - baseline).collect());
        let old = Tensor::new(&[n], old_log_probs.to_vec());
        let (lo, hi) = (1.0 - self.cfg.clip, 1.0 + self.cfg.clip);

        let mut objective = 0.0;
        let mut skipped = 0;
        for _ in 0..self.cfg.epochs {
            let tape = Tape::new();
            let vars = ctrl.vars(&tape, true);
            let (logp, ent, _) = ctrl.unroll(&tape, &vars, n, |i, _| sequences.iter().map(|s| s[i]).collect());
            let ratio = tape.exp(tape.sub(logp, tape.constant(old.clone())));
            let a = tape.constant(adv.clone());
            let surrogate = tape.minimum(tape.mul(ratio, a), tape.mul(tape.clamp(ratio, lo, hi), a));
            let mut obj = tape.mean_all(surrogate);
            if self.cfg.entropy > 0.0 {
                obj = tape.add(obj, tape.scale(tape.mean_all(ent), self.cfg.entropy));
            }
            objective = tape.value(obj).data()[0];
            let grads = tape.backward(tape.neg(obj));
            let g: Vec<Option<Tensor>> = vars.iter().map(|&v| grads.get(v).cloned()).collect();
            if g.iter().flatten().any(|t| t.data().iter().any(|x| !x.is_finite())) {
                log::warn!("non-finite controller gradient; update skipped");
                skipped += 1;
                continue;
            }
            self.adam.step(ctrl.params_mut().into_iter().zip(g.iter().map(|t| t.as_ref())));
        }

        let d = self.cfg.baseline_decay;
        self.baseline = Some(d * baseline + (1.0 - d) * mean);
        let best = rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if best > self.best {
            self.best = best;
            self.stale = 0;
        } else {
            self.stale += 1;
            if self.stale >= self.cfg.patience {
                self.adam.lr *= self.cfg.lr_factor;
                self.stale = 0;
                log::info!("best reward stalled; controller lr now {:.3e}", self.adam.lr);
            }
        }
        Ok(UpdateStats {
            baseline,
            mean_reward: mean,
            objective,
            skipped,
            lr: self.adam.lr,
        })
    }
}
