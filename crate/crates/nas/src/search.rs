//! The search loop and the exhaustive oracle.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt::Write as _;

use litese_core::ArchitectureSpec;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SearchConfig;
use crate::controller::Controller;
use crate::error::{NasError, Result};
use crate::evaluator::Evaluator;
use crate::ppo::Ppo;
use crate::reward::{reward, RewardConfig};
use crate::space::SearchSpace;

/// Largest space [`brute_force`] will enumerate.
pub const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub actions: Vec<usize>,
    pub spec: ArchitectureSpec,
    pub q: f64,
    /// MACs per second; absent when the candidate could not be scored.
    pub macs: Option<f64>,
    pub reward: f64,
    /// Why scoring failed, if it did. Failed candidates get `Q = Q0`.
    pub failure: Option<String>,
}

/// Better candidates sort first: higher reward, then lower complexity,
/// then lexicographically smaller actions.
pub fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    b.reward
        .total_cmp(&a.reward)
        .then_with(|| a.macs.unwrap_or(f64::INFINITY).total_cmp(&b.macs.unwrap_or(f64::INFINITY)))
        .then_with(|| a.actions.cmp(&b.actions))
}

/// Scores one action sequence; failures become zero-reward candidates.
pub fn score(space: &SearchSpace, actions: &[usize], evaluator: &dyn Evaluator, cfg: &RewardConfig, seed: u64) -> Result<Candidate> {
    let spec = space.decode(actions)?;
    let scored = evaluator
        .evaluate(&spec, seed)
        .and_then(|s| reward(s.q, s.macs, cfg).map(|r| (s, r)));
    Ok(match scored {
        Ok((s, r)) => Candidate {
            actions: actions.to_vec(),
            spec,
            q: s.q,
            macs: Some(s.macs),
            reward: r,
            failure: None,
        },
        Err(e) => {
            log::warn!("candidate {:?} failed: {}", actions, e);
            Candidate {
                actions: actions.to_vec(),
                spec,
                q: cfg.q0,
                macs: None,
                reward: 0.0,
                failure: Some(e.to_string()),
            }
        }
    })
}

/// Seed for one candidate, independent of when or where it is evaluated.
pub fn candidate_seed(seed: u64, actions: &[usize]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for &a in actions {
        for b in (a as u64).to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// Mean reward of the best `k` distinct candidates seen so far. Undefined
/// until `k` candidates exist; nondecreasing afterwards.
#[derive(Clone, Debug)]
pub struct TopK {
    pub k: usize,
    best: Vec<f64>,
}

impl TopK {
    pub fn new(k: usize) -> Self {
        assert!(k > 0);
        Self { k, best: Vec::with_capacity(k + 1) }
    }

    pub fn push(&mut self, r: f64) {
        let at = self.best.partition_point(|&b| b >= r);
        if at < self.k {
            self.best.insert(at, r);
            self.best.truncate(self.k);
        }
    }

    pub fn value(&self) -> Option<f64> {
        (self.best.len() == self.k).then(|| self.best.iter().sum::<f64>() / self.k as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendRow {
    pub episode: usize,
    /// Models sampled so far, counting repeats.
    pub sampled: usize,
    /// Distinct models evaluated so far.
    pub distinct: usize,
    pub mean_reward: f64,
    pub top1: Option<f64>,
    pub top5: Option<f64>,
    pub top25: Option<f64>,
    pub lr: f64,
}

pub const TREND_HEADER: &str = "episode\tsampled\tdistinct\tmean_reward\ttop1\ttop5\ttop25\tlr";

impl TrendRow {
    fn cell(v: Option<f64>) -> String {
        v.map_or_else(|| "-".to_string(), |x| format!("{:.9}", x))
    }

    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{:.9}\t{}\t{}\t{}\t{:.6e}",
            self.episode,
            self.sampled,
            self.distinct,
            self.mean_reward,
            Self::cell(self.top1),
            Self::cell(self.top5),
            Self::cell(self.top25),
            self.lr
        )
    }

    /// Parses a table written by [`SearchResult::trend_table`].
    pub fn parse_table(text: &str) -> Result<Vec<TrendRow>> {
        let bad = |n: usize, why: &str| NasError::InvalidInput(format!("trend line {}: {}", n + 1, why));
        let mut rows = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("episode") {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 8 {
                return Err(bad(n, "expected 8 tab-separated fields"));
            }
            let int = |s: &str| s.parse::<usize>().map_err(|_| bad(n, "bad integer"));
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(n, "bad number"));
            let opt = |s: &str| if s == "-" { Ok(None) } else { num(s).map(Some) };
            rows.push(TrendRow {
                episode: int(f[0])?,
                sampled: int(f[1])?,
                distinct: int(f[2])?,
                mean_reward: num(f[3])?,
                top1: opt(f[4])?,
                top5: opt(f[5])?,
                top25: opt(f[6])?,
                lr: num(f[7])?,
            });
        }
        Ok(rows)
    }
}

#[derive(Clone, Debug)]
pub struct SearchResult {
    /// Every distinct candidate, best first.
    pub ranked: Vec<Candidate>,
    pub trend: Vec<TrendRow>,
    pub controller: Controller,
}

impl SearchResult {
    pub fn best(&self) -> &Candidate {
        &self.ranked[0]
    }

    pub fn trend_table(&self) -> String {
        let mut s = String::from(TREND_HEADER);
        s.push('\n');
        for r in &self.trend {
            s.push_str(&r.to_line());
            s.push('\n');
        }
        s
    }

    /// The best `n` candidates as architecture configs, each preceded by a
    /// comment line with its rank and scores.
    pub fn ranked_configs(&self, n: usize) -> String {
        let mut s = String::new();
        for (i, c) in self.ranked.iter().take(n).enumerate() {
            let macs = c.macs.map_or_else(|| "-".to_string(), |m| format!("{:.0}", m));
            let _ = writeln!(s, "# rank {} reward {:.9} q {:.6} macs {}", i + 1, c.reward, c.q, macs);
            if let Some(f) = &c.failure {
                let _ = writeln!(s, "# failed: {}", f);
            }
            s.push_str(&c.spec.to_config());
            s.push('\n');
        }
        s
    }
}

/// Runs sample, evaluate, reward and update for the configured number of
/// episodes, or until the best reward has not moved for `patience` episodes.
pub fn search(cfg: &SearchConfig, evaluator: &dyn Evaluator) -> Result<SearchResult> {
    cfg.validate()?;
    let space = &cfg.space;
    let mut ctrl = Controller::new(&space.options(), cfg.seed);
    let mut ppo = Ppo::new(cfg.ppo);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| NasError::Config(format!("worker pool: {}", e)))?;

    let mut cache: HashMap<Vec<usize>, Candidate> = HashMap::new();
    let mut tops = [TopK::new(1), TopK::new(5), TopK::new(25)];
    let mut trend = Vec::with_capacity(cfg.episodes);
    let mut sampled = 0;
    let mut still = 0;
    for episode in 0..cfg.episodes {
        let samples = ctrl.sample(cfg.batch, &mut rng);
        sampled += samples.len();

        let mut fresh: Vec<Vec<usize>> = Vec::new();
        for s in &samples {
            if !cache.contains_key(&s.actions) && !fresh.contains(&s.actions) {
                fresh.push(s.actions.clone());
            }
        }
        let scored: Vec<Result<Candidate>> = pool.install(|| {
            fresh
                .par_iter()
                .map(|a| score(space, a, evaluator, &cfg.reward, candidate_seed(cfg.seed, a)))
                .collect()
        });
        let before = tops[0].value();
        for c in scored {
            let c = c?;
            for t in &mut tops {
                t.push(c.reward);
            }
            cache.insert(c.actions.clone(), c);
        }

        let sequences: Vec<Vec<usize>> = samples.iter().map(|s| s.actions.clone()).collect();
        let old: Vec<f64> = samples.iter().map(|s| s.log_prob).collect();
        let rewards: Vec<f64> = sequences.iter().map(|a| cache[a].reward).collect();
        let stats = ppo.update(&mut ctrl, &sequences, &old, &rewards)?;

        let row = TrendRow {
            episode: episode + 1,
            sampled,
            distinct: cache.len(),
            mean_reward: stats.mean_reward,
            top1: tops[0].value(),
            top5: tops[1].value(),
            top25: tops[2].value(),
            lr: stats.lr,
        };
        log::info!("episode {}: {}", row.episode, row.to_line());
        trend.push(row);

        still = if tops[0].value() == before { still + 1 } else { 0 };
        if cfg.patience.is_some_and(|p| still >= p) {
            log::info!("best reward unchanged for {} episodes; stopping", still);
            break;
        }
    }

    let mut ranked: Vec<Candidate> = cache.into_values().collect();
    ranked.sort_by(rank);
    Ok(SearchResult {
        ranked,
        trend,
        controller: ctrl,
    })
}

/// Scores every configuration and returns the best under [`rank`].
pub fn brute_force(space: &SearchSpace, evaluator: &dyn Evaluator, cfg: &RewardConfig) -> Result<Candidate> {
    space.validate()?;
    cfg.validate()?;
    let size = space.size();
    if size > BRUTE_FORCE_LIMIT {
        return Err(NasError::TooLarge {
            size,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let mut best: Option<Candidate> = None;
    for actions in space.enumerate() {
        let c = score(space, &actions, evaluator, cfg, 0)?;
        if best.as_ref().is_none_or(|b| rank(&c, b) == Ordering::Less) {
            best = Some(c);
        }
    }
    Ok(best.expect("a validated space is non-empty"))
}
