//! Architecture description and its text config format.
//!
//! ```text
//! types    = [XConv, XMB, XDWS, XMB, XDWS]
//! strides  = [2, 2, 1, 1, 1]
//! groups   = [1, 2, 2, 2, 2]
//! channels = [12, 24, 24, 32, 16]
//! kernels  = [(3,3), (2,3), (2,3), (1,5), (1,5)]
//! ```

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{BlockSpec, BlockType};

pub const ENCODER_BLOCKS: usize = 5;
pub const KEYS: [&str; 5] = ["types", "strides", "groups", "channels", "kernels"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BottleneckConfig {
    /// Independent recurrent groups per path.
    pub groups: usize,
    /// Stacked dual-path modules.
    pub modules: usize,
}

impl Default for BottleneckConfig {
    fn default() -> Self {
        Self { groups: 2, modules: 2 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub blocks: Vec<BlockSpec>,
    pub input_channels: usize,
    pub bottleneck: BottleneckConfig,
}

impl ArchitectureSpec {
    pub fn new(blocks: Vec<BlockSpec>) -> Self {
        Self {
            blocks,
            input_channels: 1,
            bottleneck: BottleneckConfig::default(),
        }
    }

    /// Five identical blocks: the prototype used to compare block types.
    pub fn prototype(kind: BlockType, channels: usize) -> Self {
        let strides = [2, 2, 1, 1, 1];
        Self::new(
            strides
                .iter()
                .map(|&stride| BlockSpec {
                    kind,
                    stride,
                    groups: 1,
                    channels,
                    kernel: (3, 3),
                    transposed: false,
                })
                .collect(),
        )
    }

    pub fn types(&self) -> Vec<BlockType> {
        self.blocks.iter().map(|b| b.kind).collect()
    }

    /// Input channel count of encoder block `i`.
    pub fn block_input(&self, i: usize) -> usize {
        if i == 0 {
            self.input_channels
        } else {
            self.blocks[i - 1].channels
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut fields: [Option<(usize, String)>; 5] = Default::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config {
                    key: line.to_string(),
                    msg: format!("line {}: expected `key = [..]`", lineno + 1),
                });
            };
            let key = key.trim().to_ascii_lowercase();
            let Some(slot) = KEYS.iter().position(|k| *k == key) else {
                return Err(Error::Config {
                    key,
                    msg: format!("line {}: unknown key", lineno + 1),
                });
            };
            if fields[slot].is_some() {
                return Err(Error::Config {
                    key,
                    msg: format!("line {}: given twice", lineno + 1),
                });
            }
            fields[slot] = Some((lineno + 1, value.trim().to_string()));
        }
        let get = |i: usize| {
            fields[i].clone().ok_or_else(|| Error::Config {
                key: KEYS[i].to_string(),
                msg: "missing".into(),
            })
        };
        let types: Vec<BlockType> = parse_list(KEYS[0], &get(0)?.1)?
            .iter()
            .map(|s| {
                s.parse().map_err(|e: Error| Error::Config {
                    key: KEYS[0].into(),
                    msg: e.to_string(),
                })
            })
            .collect::<Result<_>>()?;
        let ints = |i: usize| -> Result<Vec<usize>> {
            parse_list(KEYS[i], &get(i)?.1)?
                .iter()
                .map(|s| {
                    s.parse::<usize>().map_err(|_| Error::Config {
                        key: KEYS[i].into(),
                        msg: format!("`{}` is not a non-negative integer", s),
                    })
                })
                .collect()
        };
        let strides = ints(1)?;
        let groups = ints(2)?;
        let channels = ints(3)?;
        let kernels: Vec<(usize, usize)> = parse_list(KEYS[4], &get(4)?.1)?
            .iter()
            .map(|s| parse_pair(s).ok_or_else(|| Error::Config {
                key: KEYS[4].into(),
                msg: format!("`{}` is not a (time, freq) pair", s),
            }))
            .collect::<Result<_>>()?;
        let lens = [types.len(), strides.len(), groups.len(), channels.len(), kernels.len()];
        for (k, &n) in KEYS.iter().zip(&lens) {
            if n != ENCODER_BLOCKS {
                return Err(Error::Config {
                    key: k.to_string(),
                    msg: format!("expected {} entries, found {}", ENCODER_BLOCKS, n),
                });
            }
        }
        let blocks = (0..ENCODER_BLOCKS)
            .map(|i| BlockSpec {
                kind: types[i],
                stride: strides[i],
                groups: groups[i],
                channels: channels[i],
                kernel: kernels[i],
                transposed: false,
            })
            .collect();
        let spec = Self::new(blocks);
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Checks per-block invariants; errors name the block index.
    pub fn validate(&self) -> Result<()> {
        if self.blocks.len() != ENCODER_BLOCKS {
            return Err(Error::Construction {
                index: self.blocks.len(),
                msg: format!("expected {} encoder blocks, found {}", ENCODER_BLOCKS, self.blocks.len()),
            });
        }
        for (i, b) in self.blocks.iter().enumerate() {
            b.validate().map_err(|msg| Error::Construction { index: i, msg })?;
        }
        Ok(())
    }

    pub fn to_config(&self) -> String {
        let mut s = String::new();
        let join = |v: Vec<String>| format!("[{}]", v.join(", "));
        let _ = writeln!(s, "types    = {}", join(self.blocks.iter().map(|b| b.kind.to_string()).collect()));
        let _ = writeln!(s, "strides  = {}", join(self.blocks.iter().map(|b| b.stride.to_string()).collect()));
        let _ = writeln!(s, "groups   = {}", join(self.blocks.iter().map(|b| b.groups.to_string()).collect()));
        let _ = writeln!(s, "channels = {}", join(self.blocks.iter().map(|b| b.channels.to_string()).collect()));
        let _ = writeln!(
            s,
            "kernels  = {}",
            join(self.blocks.iter().map(|b| format!("({},{})", b.kernel.0, b.kernel.1)).collect())
        );
        s
    }
}

/// Splits `[a, b, (c, d)]` into top-level items.
fn parse_list(key: &str, value: &str) -> Result<Vec<String>> {
    let v = value.trim();
    let inner = v
        .strip_prefix('[')
        .and_then(|r| r.strip_suffix(']'))
        .ok_or_else(|| Error::Config {
            key: key.to_string(),
            msg: format!("`{}` is not a bracketed list", v),
        })?;
    let mut items = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for ch in inner.chars() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                items.push(std::mem::take(&mut cur).trim().to_string());
                continue;
            }
            _ => {}
        }
        if depth < 0 {
            return Err(Error::Config {
                key: key.to_string(),
                msg: "unbalanced parentheses".into(),
            });
        }
        cur.push(ch);
    }
    if depth != 0 {
        return Err(Error::Config {
            key: key.to_string(),
            msg: "unbalanced parentheses".into(),
        });
    }
    if !cur.trim().is_empty() {
        items.push(cur.trim().to_string());
    }
    if items.iter().any(|s| s.is_empty()) {
        return Err(Error::Config {
            key: key.to_string(),
            msg: "empty list entry".into(),
        });
    }
    Ok(items)
}

fn parse_pair(s: &str) -> Option<(usize, usize)> {
    let inner = s.trim().strip_prefix('(')?.strip_suffix(')')?;
    let (a, b) = inner.split_once(',')?;
    Some((a.trim().parse().ok()?, b.trim().parse().ok()?))
}
