//! Dataset manifests: one `clean noise` pair of WAV paths per line.
//!
//! ```text
//! # clean                 noise
//! speech/p232_001.wav     noise/cafe.wav
//! speech/p232_002.wav     noise/street.wav
//! ```
//!
//! Relative paths resolve against a base directory, normally the manifest's
//! own directory. Blank lines and `#` comments are ignored.

use std::path::{Path, PathBuf};

use rand::Rng;

use super::data::{mix, MixSpec, Pair, SNR_RANGE};
use crate::error::{Error, Result};
use crate::frontend::read_wav;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub clean: PathBuf,
    pub noise: PathBuf,
}

pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let resolve = |p: &str| {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    };
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [clean, noise] = fields[..] else {
            return Err(Error::Config {
                key: format!("manifest line {}", n + 1),
                msg: format!("expected `clean noise`, got {} fields", fields.len()),
            });
        };
        out.push(ManifestEntry {
            clean: resolve(clean),
            noise: resolve(noise),
        });
    }
    if out.is_empty() {
        return Err(Error::InvalidInput("manifest lists no pairs".into()));
    }
    Ok(out)
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path)?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")))
}

/// Reads and mixes every entry at an SNR drawn from `snr_db`. Noise longer
/// than the clean signal is cropped at a random offset; shorter noise is
/// repeated.
pub fn manifest_pairs<R: Rng + ?Sized>(entries: &[ManifestEntry], snr_db: (f64, f64), rng: &mut R) -> Result<Vec<Pair>> {
    let (lo, hi) = snr_db;
    if !(SNR_RANGE.0 <= lo && lo <= hi && hi <= SNR_RANGE.1) {
        return Err(Error::InvalidInput(format!(
            "snr range ({}, {}) outside [{}, {}]",
            lo, hi, SNR_RANGE.0, SNR_RANGE.1
        )));
    }
    entries
        .iter()
        .map(|e| {
            let clean = read_wav(&e.clean)?;
            let raw = read_wav(&e.noise)?;
            if raw.is_empty() {
                return Err(Error::InvalidInput(format!("{}: empty noise file", e.noise.display())));
            }
            let noise: Vec<f64> = if raw.len() > clean.len() {
                let off = rng.gen_range(0..=raw.len() - clean.len());
                raw[off..off + clean.len()].to_vec()
            } else {
                raw.iter().cycle().take(clean.len()).copied().collect()
            };
            let snr = rng.gen_range(lo..=hi);
            let (noisy, clean) = mix(&MixSpec {
                snr_db: snr,
                clean: &clean,
                noise: &noise,
            })
            .map_err(|err| Error::InvalidInput(format!("{}: {}", e.clean.display(), err)))?;
            Ok(Pair { noisy, clean, snr_db: snr })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_resolves() {
        let m = parse_manifest("# c n\n a.wav  /abs/n.wav\n\nb.wav n2.wav # tail\n", Path::new("/data")).unwrap();
        assert_eq!(
            m,
            vec![
                ManifestEntry {
                    clean: "/data/a.wav".into(),
                    noise: "/abs/n.wav".into()
                },
                ManifestEntry {
                    clean: "/data/b.wav".into(),
                    noise: "/data/n2.wav".into()
                },
            ]
        );
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(matches!(parse_manifest("a.wav\n", Path::new(".")), Err(Error::Config { .. })));
        assert!(parse_manifest("# only comments\n", Path::new(".")).is_err());
    }
}
