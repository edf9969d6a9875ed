//! Factorized search space and the action encoding.
//!
//! Each encoder block contributes five decision nodes, in the order type,
//! stride, groups, channels, kernel. An action is the index of the chosen
//! option at its node, so a full architecture is one index per node.

use litese_core::nn::{BlockSpec, BlockType};
use litese_core::ArchitectureSpec;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, NasError, Result};

pub const NODES_PER_BLOCK: usize = 5;
pub const NODE_NAMES: [&str; NODES_PER_BLOCK] = ["type", "stride", "groups", "channels", "kernel"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub blocks: usize,
    #[serde(with = "type_names")]
    pub types: Vec<BlockType>,
    pub strides: Vec<usize>,
    pub groups: Vec<usize>,
    pub channels: Vec<usize>,
    pub kernels: Vec<(usize, usize)>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self::full()
    }
}

impl SearchSpace {
    /// The five-block space searched for the shipped model.
    pub fn full() -> Self {
        Self {
            blocks: 5,
            types: vec![BlockType::XConv, BlockType::XDws, BlockType::XMb],
            strides: vec![1, 2],
            groups: vec![1, 2],
            channels: vec![12, 16, 20, 24, 28, 32, 36],
            kernels: vec![(1, 5), (1, 7), (2, 5), (3, 3)],
        }
    }

    /// Two blocks, 324 configurations: small enough to enumerate.
    pub fn toy() -> Self {
        Self {
            blocks: 2,
            types: vec![BlockType::XConv, BlockType::XDws, BlockType::XMb],
            strides: vec![1, 2],
            groups: vec![1],
            channels: vec![12, 24, 36],
            kernels: vec![(1, 5)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 {
            return Err(NasError::Config("space needs at least one block".into()));
        }
        for (name, n) in NODE_NAMES.iter().zip(self.per_block()) {
            if n == 0 {
                return Err(NasError::Config(format!("option list `{}` is empty", name)));
            }
        }
        if self.strides.iter().any(|s| !(1..=2).contains(s)) {
            return Err(NasError::Config("strides must be 1 or 2".into()));
        }
        if self.groups.contains(&0) || self.channels.contains(&0) {
            return Err(NasError::Config("groups and channels must be positive".into()));
        }
        if self.kernels.iter().any(|&(kt, kf)| kt == 0 || kf % 2 == 0) {
            return Err(NasError::Config("kernels need kt >= 1 and odd kf".into()));
        }
        Ok(())
    }

    fn per_block(&self) -> [usize; NODES_PER_BLOCK] {
        [
            self.types.len(),
            self.strides.len(),
            self.groups.len(),
            self.channels.len(),
            self.kernels.len(),
        ]
    }

    pub fn nodes(&self) -> usize {
        self.blocks * NODES_PER_BLOCK
    }

    /// Option count at every node, in action order.
    pub fn options(&self) -> Vec<usize> {
        let per = self.per_block();
        (0..self.nodes()).map(|i| per[i % NODES_PER_BLOCK]).collect()
    }

    /// Number of distinct action sequences (saturating).
    pub fn size(&self) -> u128 {
        self.options()
            .iter()
            .fold(1u128, |acc, &n| acc.saturating_mul(n as u128))
    }

    pub fn decode(&self, actions: &[usize]) -> Result<ArchitectureSpec> {
        if actions.len() != self.nodes() {
            return invalid(format!("expected {} actions, got {}", self.nodes(), actions.len()));
        }
        for (i, (&a, n)) in actions.iter().zip(self.options()).enumerate() {
            if a >= n {
                return invalid(format!(
                    "action {} at node {} ({} of block {}) exceeds {} options",
                    a,
                    i,
                    NODE_NAMES[i % NODES_PER_BLOCK],
                    i / NODES_PER_BLOCK,
                    n
                ));
            }
        }
        let blocks = actions
            .chunks(NODES_PER_BLOCK)
            .map(|a| BlockSpec {
                kind: self.types[a[0]],
                stride: self.strides[a[1]],
                groups: self.groups[a[2]],
                channels: self.channels[a[3]],
                kernel: self.kernels[a[4]],
                transposed: false,
            })
            .collect();
        Ok(ArchitectureSpec::new(blocks))
    }

    pub fn encode(&self, spec: &ArchitectureSpec) -> Result<Vec<usize>> {
        if spec.blocks.len() != self.blocks {
            return invalid(format!("space has {} blocks, spec has {}", self.blocks, spec.blocks.len()));
        }
        let default = ArchitectureSpec::new(Vec::new());
        if spec.input_channels != default.input_channels || spec.bottleneck != default.bottleneck {
            return invalid("only the default input and bottleneck are searchable");
        }
        fn find<T: PartialEq + std::fmt::Debug>(opts: &[T], v: &T, what: &str, block: usize) -> Result<usize> {
            opts.iter()
                .position(|o| o == v)
                .ok_or_else(|| NasError::InvalidInput(format!("block {}: {} {:?} is not in the space", block, what, v)))
        }
        let mut out = Vec::with_capacity(self.nodes());
        for (i, b) in spec.blocks.iter().enumerate() {
            if b.transposed {
                return invalid(format!("block {}: encoder blocks are not transposed", i));
            }
            out.push(find(&self.types, &b.kind, "type", i)?);
            out.push(find(&self.strides, &b.stride, "stride", i)?);
            out.push(find(&self.groups, &b.groups, "groups", i)?);
            out.push(find(&self.channels, &b.channels, "channels", i)?);
            out.push(find(&self.kernels, &b.kernel, "kernel", i)?);
        }
        Ok(out)
    }

    /// Every action sequence in lexicographic order.
    pub fn enumerate(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        let opts = self.options();
        let mut next = Some(vec![0; opts.len()]);
        std::iter::from_fn(move || {
            let cur = next.take()?;
            let mut succ = cur.clone();
            for i in (0..succ.len()).rev() {
                succ[i] += 1;
                if succ[i] < opts[i] {
                    next = Some(succ);
                    break;
                }
                succ[i] = 0;
            }
            Some(cur)
        })
    }
}

mod type_names {
    use litese_core::nn::BlockType;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[BlockType], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|t| t.as_str()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<BlockType>, D::Error> {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|s| s.parse().map_err(D::Error::custom))
            .collect()
    }
}
