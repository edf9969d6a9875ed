//! TOML description of a training run.
//!
//! ```toml
//! arch = "ul_unas.cfg"              # or a [prototype] table
//! [train]
//! steps = 2000
//! constant_lr = 5e-3
//! [data]
//! kind = "synthetic"
//! pairs = 48
//! [valid]
//! kind = "manifest"
//! path = "valid.txt"
//! ```
//!
//! Relative `arch` paths resolve against the config file. Relative manifest
//! paths resolve against `LITESE_DATA_DIR` when set, else the config file.

use std::path::{Path, PathBuf};

use litese_core::nn::BlockType;
use litese_core::training::{
    load_manifest, manifest_pairs, synthetic_set, Pair, SyntheticConfig, TrainConfig,
};
use litese_core::ArchitectureSpec;
use rand::Rng;
use serde::Deserialize;

use crate::exit::{Failure, Outcome};

pub const DATA_DIR_ENV: &str = "LITESE_DATA_DIR";

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    pub arch: Option<PathBuf>,
    pub prototype: Option<Prototype>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_train_data")]
    pub data: DataSource,
    #[serde(default = "default_valid_data")]
    pub valid: DataSource,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prototype {
    pub kind: String,
    pub channels: usize,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    Synthetic {
        pairs: usize,
        length: usize,
        #[serde(default = "default_snr")]
        snr_db: (f64, f64),
    },
    Manifest {
        path: PathBuf,
        #[serde(default = "default_snr")]
        snr_db: (f64, f64),
    },
}

fn default_snr() -> (f64, f64) {
    (-5.0, 5.0)
}

fn default_train_data() -> DataSource {
    let d = SyntheticConfig::default();
    DataSource::Synthetic {
        pairs: d.pairs,
        length: d.length,
        snr_db: d.snr_db,
    }
}

fn default_valid_data() -> DataSource {
    let d = SyntheticConfig::default();
    DataSource::Synthetic {
        pairs: 8,
        length: d.length,
        snr_db: d.snr_db,
    }
}

pub struct TrainRun {
    pub spec: ArchitectureSpec,
    pub cfg: TrainConfig,
    pub data: DataSource,
    pub valid: DataSource,
    base: PathBuf,
}

impl TrainRun {
    pub fn load(path: &Path) -> Outcome<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Failure::from(e).context(path.display()))?;
        let file: TrainFile = toml::from_str(&text)
            .map_err(|e| Failure::input(format!("{}: {}", path.display(), e)))?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let spec = match (&file.arch, &file.prototype) {
            (Some(a), None) => ArchitectureSpec::load(&base.join(a))
                .map_err(|e| Failure::from(e).context(a.display()))?,
            (None, Some(p)) => {
                let kind: BlockType = p.kind.parse()?;
                ArchitectureSpec::prototype(kind, p.channels)
            }
            _ => {
                return Err(Failure::input(format!(
                    "{}: give exactly one of `arch` or `[prototype]`",
                    path.display()
                )))
            }
        };
        spec.validate()?;
        file.train.validate()?;
        Ok(Self {
            spec,
            cfg: file.train,
            data: file.data,
            valid: file.valid,
            base,
        })
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            return p.to_path_buf();
        }
        match std::env::var_os(DATA_DIR_ENV) {
            Some(dir) => Path::new(&dir).join(p),
            None => self.base.join(p),
        }
    }

    pub fn pairs<R: Rng + ?Sized>(&self, src: &DataSource, rng: &mut R) -> Outcome<Vec<Pair>> {
        Ok(match src {
            DataSource::Synthetic {
                pairs,
                length,
                snr_db,
            } => synthetic_set(
                &SyntheticConfig {
                    pairs: *pairs,
                    length: *length,
                    snr_db: *snr_db,
                },
                rng,
            )?,
            DataSource::Manifest { path, snr_db } => {
                let p = self.resolve(path);
                let entries =
                    load_manifest(&p).map_err(|e| Failure::from(e).context(p.display()))?;
                manifest_pairs(&entries, *snr_db, rng)?
            }
        })
    }
}
