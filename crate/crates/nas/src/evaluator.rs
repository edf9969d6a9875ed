//! Candidate scoring: a quality `Q` and a complexity `M` per architecture.

use std::path::PathBuf;
use std::process::Command;

use litese_core::complexity;
use litese_core::frontend::{write_wav, FRAME_RATE};
use litese_core::nn::BlockType;
use litese_core::training::{synthetic_set, Pair, SyntheticConfig, TrainConfig, Trainer};
use litese_core::{ArchitectureSpec, Model};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NasError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub q: f64,
    /// MACs per second.
    pub macs: f64,
}

/// Scores one candidate. Implementations must be deterministic in
/// `(spec, seed)` so results do not depend on worker scheduling.
pub trait Evaluator: Send + Sync {
    fn evaluate(&self, spec: &ArchitectureSpec, seed: u64) -> Result<Score>;

    fn name(&self) -> &'static str;
}

/// Closed-form quality and cost, for checking the search itself.
///
/// Block `i` has `c_i` channels and `f_i` frequency bins after its stride.
/// Cost is `rate * sum f_i * c_in * c_i * cost(type)` and quality is
/// `1 + 2 * (1 - exp(-sum quality(type) * c_i * f_i / norm))`, so quality
/// saturates while cost keeps growing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyEvaluator {
    pub frame_rate: f64,
    pub bins: usize,
    pub input_channels: usize,
    /// Per-type multipliers, in the order XConv, XDWS, XMB; other types
    /// use the XConv values.
    pub cost: [f64; 3],
    pub quality: [f64; 3],
    pub norm: f64,
}

impl Default for ToyEvaluator {
    fn default() -> Self {
        Self {
            frame_rate: FRAME_RATE,
            bins: 129,
            input_channels: 4,
            cost: [9.0, 2.0, 4.0],
            quality: [1.0, 0.6, 0.8],
            norm: 3000.0,
        }
    }
}

impl ToyEvaluator {
    fn slot(kind: BlockType) -> usize {
        match kind {
            BlockType::XDws | BlockType::Dws | BlockType::Rep => 1,
            BlockType::XMb | BlockType::Mb | BlockType::Star => 2,
            _ => 0,
        }
    }

    pub fn score(&self, spec: &ArchitectureSpec) -> Score {
        let (mut f, mut cin) = (self.bins, self.input_channels);
        let (mut m, mut s) = (0.0, 0.0);
        for b in &spec.blocks {
            if b.stride == 2 {
                f = f.div_ceil(2);
            }
            let k = Self::slot(b.kind);
            m += (f * cin * b.channels) as f64 * self.cost[k];
            s += self.quality[k] * (b.channels * f) as f64;
            cin = b.channels;
        }
        Score {
            q: 1.0 + 2.0 * (1.0 - (-s / self.norm).exp()),
            macs: self.frame_rate * m,
        }
    }
}

impl Evaluator for ToyEvaluator {
    fn evaluate(&self, spec: &ArchitectureSpec, _seed: u64) -> Result<Score> {
        Ok(self.score(spec))
    }

    fn name(&self) -> &'static str {
        "toy"
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingEvalConfig {
    pub train: TrainConfig,
    pub data: SyntheticConfig,
    pub valid_pairs: usize,
    /// Seed of the shared synthetic data; model seeds vary per candidate.
    pub data_seed: u64,
    /// Trailing validation rounds averaged into `Q`.
    pub rounds: usize,
    /// SISNR gain in dB that maps to the top score.
    pub full_gain_db: f64,
}

impl Default for TrainingEvalConfig {
    fn default() -> Self {
        let train = TrainConfig {
            steps: 150,
            batch: 4,
            segment: 8192,
            constant_lr: Some(5e-3),
            valid_every: 50,
            ..TrainConfig::default()
        };
        Self {
            train,
            data: SyntheticConfig {
                pairs: 32,
                length: 16384,
                snr_db: (-5.0, 5.0),
            },
            valid_pairs: 4,
            data_seed: 7,
            rounds: 3,
            full_gain_db: 10.0,
        }
    }
}

/// Short training on synthetic data; `Q = 1 + 2 * clamp(gain / full, 0, 1)`
/// where `gain` is the mean SISNR improvement over the trailing rounds.
#[derive(Clone, Debug, Default)]
pub struct TrainingEvaluator {
    pub cfg: TrainingEvalConfig,
}

impl TrainingEvaluator {
    pub fn new(cfg: TrainingEvalConfig) -> Self {
        Self { cfg }
    }

    fn data(&self) -> Result<(Vec<Pair>, Vec<Pair>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.data_seed);
        let train = synthetic_set(&self.cfg.data, &mut rng)?;
        let valid_cfg = SyntheticConfig {
            pairs: self.cfg.valid_pairs.max(1),
            ..self.cfg.data
        };
        let valid = synthetic_set(&valid_cfg, &mut rng)?;
        Ok((train, valid))
    }

    /// Trains a fresh model and returns it with the held-out pairs, its
    /// complexity and the mean trailing SISNR gain.
    pub fn train(&self, spec: &ArchitectureSpec, seed: u64) -> Result<(Model, Vec<Pair>, f64, f64)> {
        let model = Model::assemble(spec, seed)?;
        let macs = complexity::report(&model).macs;
        let (train, valid) = self.data()?;
        let mut trainer = Trainer::new(model, TrainConfig { seed, ..self.cfg.train.clone() })?;
        let last = trainer.fit(&train, &valid, None)?;
        let gains: Vec<f64> = trainer.log.iter().filter_map(|e| e.valid.map(|v| v.improvement_db)).collect();
        let k = self.cfg.rounds.max(1).min(gains.len());
        let gain = if k == 0 {
            last.improvement_db
        } else {
            gains[gains.len() - k..].iter().sum::<f64>() / k as f64
        };
        Ok((trainer.model, valid, macs, gain))
    }
}

impl Evaluator for TrainingEvaluator {
    fn evaluate(&self, spec: &ArchitectureSpec, seed: u64) -> Result<Score> {
        let (_, _, macs, gain) = self.train(spec, seed)?;
        if !gain.is_finite() {
            return Err(NasError::Evaluation(format!("non-finite validation gain {}", gain)));
        }
        Ok(Score {
            q: 1.0 + 2.0 * (gain / self.cfg.full_gain_db).clamp(0.0, 1.0),
            macs,
        })
    }

    fn name(&self) -> &'static str {
        "training"
    }
}

/// Trains like [`TrainingEvaluator`], then scores held-out enhancements
/// with an external tool invoked as `command.. <reference.wav> <degraded.wav>`.
/// The last number printed on stdout is taken as that pair's score and the
/// mean over pairs becomes `Q`.
#[derive(Clone, Debug)]
pub struct PesqEvaluator {
    pub inner: TrainingEvaluator,
    pub command: Vec<String>,
    pub scratch: Option<PathBuf>,
}

impl PesqEvaluator {
    pub fn new(inner: TrainingEvaluator, command: &str) -> Result<Self> {
        let command: Vec<String> = command.split_whitespace().map(String::from).collect();
        if command.is_empty() {
            return Err(NasError::Config("empty quality-tool command".into()));
        }
        Ok(Self {
            inner,
            command,
            scratch: None,
        })
    }

    fn score_pair(&self, dir: &std::path::Path, k: usize, clean: &[f64], enhanced: &[f64]) -> Result<f64> {
        let (r, d) = (dir.join(format!("ref{}.wav", k)), dir.join(format!("deg{}.wav", k)));
        write_wav(&r, clean)?;
        write_wav(&d, enhanced)?;
        let out = Command::new(&self.command[0]).args(&self.command[1..]).arg(&r).arg(&d).output()?;
        if !out.status.success() {
            return Err(NasError::Evaluation(format!(
                "`{}` exited with {}: {}",
                self.command.join(" "),
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        let text = String::from_utf8_lossy(&out.stdout);
        text.split(|c: char| c.is_whitespace() || c == '=' || c == ':' || c == ',')
            .filter_map(|t| t.parse::<f64>().ok())
            .next_back()
            .filter(|v| v.is_finite())
            .ok_or_else(|| NasError::Evaluation(format!("no score in tool output `{}`", text.trim())))
    }
}

impl Evaluator for PesqEvaluator {
    fn evaluate(&self, spec: &ArchitectureSpec, seed: u64) -> Result<Score> {
        let (model, valid, macs, _) = self.inner.train(spec, seed)?;
        let dir = match &self.scratch {
            Some(p) => tempfile::tempdir_in(p)?,
            None => tempfile::tempdir()?,
        };
        let mut total = 0.0;
        for (k, p) in valid.iter().enumerate() {
            let y = model.enhance(&p.noisy)?;
            total += self.score_pair(dir.path(), k, &p.clean, &y)?;
        }
        Ok(Score {
            q: total / valid.len() as f64,
            macs,
        })
    }

    fn name(&self) -> &'static str {
        "pesq"
    }
}
