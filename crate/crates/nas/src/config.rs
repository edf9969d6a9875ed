//! TOML search configuration.
//!
//! ```toml
//! episodes = 50
//! batch = 8
//! seed = 0
//! workers = 1
//!
//! [space]
//! blocks = 2
//! types = ["XConv", "XDWS", "XMB"]
//! strides = [1, 2]
//! groups = [1]
//! channels = [12, 24, 36]
//! kernels = [[1, 5]]
//!
//! [reward]
//! m_target = 30e6
//!
//! [evaluator]
//! kind = "toy"
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NasError, Result};
use crate::evaluator::{Evaluator, PesqEvaluator, ToyEvaluator, TrainingEvalConfig, TrainingEvaluator};
use crate::ppo::PpoConfig;
use crate::reward::RewardConfig;
use crate::space::SearchSpace;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub space: SearchSpace,
    pub reward: RewardConfig,
    pub ppo: PpoConfig,
    pub episodes: usize,
    /// Architectures sampled per episode.
    pub batch: usize,
    pub seed: u64,
    /// Parallel candidate evaluations.
    pub workers: usize,
    /// Stop once the best reward has not improved for this many episodes.
    pub patience: Option<usize>,
    pub evaluator: EvaluatorConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            space: SearchSpace::full(),
            reward: RewardConfig::default(),
            ppo: PpoConfig::default(),
            episodes: 20,
            batch: 40,
            seed: 0,
            workers: 1,
            patience: None,
            evaluator: EvaluatorConfig::Training(TrainingEvalConfig::default()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EvaluatorConfig {
    Toy(ToyEvaluator),
    Training(TrainingEvalConfig),
    Pesq(PesqConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PesqConfig {
    /// Program and leading arguments; the reference and degraded WAV paths
    /// are appended.
    pub command: String,
    #[serde(default)]
    pub training: TrainingEvalConfig,
}

impl SearchConfig {
    /// The enumerable toy setup used to check the search against brute force.
    pub fn toy() -> Self {
        Self {
            space: SearchSpace::toy(),
            episodes: 50,
            batch: 8,
            evaluator: EvaluatorConfig::Toy(ToyEvaluator::default()),
            ..Self::default()
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| NasError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("search config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.space.validate()?;
        self.reward.validate()?;
        self.ppo.validate()?;
        if self.episodes == 0 || self.batch == 0 {
            return Err(NasError::Config("episodes and batch must be positive".into()));
        }
        if self.workers == 0 {
            return Err(NasError::Config("workers must be positive".into()));
        }
        Ok(())
    }

    pub fn build_evaluator(&self) -> Result<Box<dyn Evaluator>> {
        Ok(match &self.evaluator {
            EvaluatorConfig::Toy(t) => Box::new(t.clone()),
            EvaluatorConfig::Training(t) => {
                t.train.validate()?;
                Box::new(TrainingEvaluator::new(t.clone()))
            }
            EvaluatorConfig::Pesq(p) => {
                p.training.train.validate()?;
                Box::new(PesqEvaluator::new(TrainingEvaluator::new(p.training.clone()), &p.command)?)
            }
        })
    }
}
