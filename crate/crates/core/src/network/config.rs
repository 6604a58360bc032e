//! Declarative architecture descriptions and the shipped presets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the input is turned into the first coupled pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SplitKind {
    /// Space-to-depth by `factor`; a pure permutation.
    Bijective { factor: usize },
    /// Space-to-depth by `factor`, then zero-pad the channels to `pad_to`.
    Injective { factor: usize, pad_to: usize },
}

impl SplitKind {
    pub fn factor(&self) -> usize {
        match *self {
            SplitKind::Bijective { factor } | SplitKind::Injective { factor, .. } => factor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    Identity,
    /// Space-to-depth by 2 on both streams before the coupling.
    Downsample,
}

/// One coupling block. `channels` counts both streams after the block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// `(C, H, W)` of one input sample.
    pub input: [usize; 3],
    pub split: SplitKind,
    pub blocks: Vec<BlockSpec>,
    pub num_classes: usize,
    #[serde(default = "default_ratio")]
    pub bottleneck_ratio: usize,
}

fn default_ratio() -> usize {
    4
}

/// Spatial factor of a downsampling block.
pub const DOWNSAMPLE_FACTOR: usize = 2;

impl NetConfig {
    /// Builds the block list for `num_blocks` blocks, downsampling at the
    /// 1-based block indices in `downsample_at`.
    pub fn with_schedule(
        input: [usize; 3],
        split: SplitKind,
        num_blocks: usize,
        downsample_at: &[usize],
        num_classes: usize,
    ) -> Self {
        let f = split.factor();
        let mut channels = match split {
            SplitKind::Bijective { .. } => input[0] * f * f,
            SplitKind::Injective { pad_to, .. } => pad_to,
        };
        let blocks = (1..=num_blocks)
            .map(|j| {
                let kind = if downsample_at.contains(&j) {
                    channels *= DOWNSAMPLE_FACTOR * DOWNSAMPLE_FACTOR;
                    BlockKind::Downsample
                } else {
                    BlockKind::Identity
                };
                BlockSpec { kind, channels }
            })
            .collect();
        Self {
            input,
            split,
            blocks,
            num_classes,
            bottleneck_ratio: default_ratio(),
        }
    }

    /// Bijective desk-scale model: 3x32x32 input, 16 blocks, channels
    /// 12 -> 48 -> 192 -> 768.
    pub fn tiny_b() -> Self {
        Self::with_schedule(
            [3, 32, 32],
            SplitKind::Bijective { factor: 2 },
            16,
            &[5, 9, 13],
            10,
        )
    }

    /// Injective desk-scale model: as [`NetConfig::tiny_b`] but the split pads
    /// 12 channels to 24.
    pub fn tiny_a() -> Self {
        Self::with_schedule(
            [3, 32, 32],
            SplitKind::Injective {
                factor: 2,
                pad_to: 24,
            },
            16,
            &[5, 9, 13],
            10,
        )
    }

    /// ImageNet bijective model: 100 blocks, split 3 -> 12 channels,
    /// downsampling at blocks 1, 7, 23, 95 (stream widths 24, 96, 384, 1536).
    pub fn paper_b() -> Self {
        Self::with_schedule(
            [3, 224, 224],
            SplitKind::Bijective { factor: 2 },
            100,
            &[1, 7, 23, 95],
            1000,
        )
    }

    /// ImageNet injective model: split by 4 (48 channels) padded to 96,
    /// downsampling at blocks 5, 9, 15 (stream widths 48, 192, 768, 3072).
    pub fn paper_a() -> Self {
        Self::with_schedule(
            [3, 224, 224],
            SplitKind::Injective {
                factor: 4,
                pad_to: 96,
            },
            18,
            &[5, 9, 15],
            1000,
        )
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "tiny-b" => Some(Self::tiny_b()),
            "tiny-a" => Some(Self::tiny_a()),
            "paper-a" => Some(Self::paper_a()),
            "paper-b" => Some(Self::paper_b()),
            _ => None,
        }
    }

    pub const PRESETS: [&'static str; 4] = ["tiny-b", "tiny-a", "paper-a", "paper-b"];

    pub fn is_bijective(&self) -> bool {
        matches!(self.split, SplitKind::Bijective { .. })
    }

    pub fn input_len(&self) -> usize {
        self.input.iter().product()
    }

    /// Merged `(C, H, W)` after the split.
    pub fn split_shape(&self) -> [usize; 3] {
        let [c, h, w] = self.input;
        let f = self.split.factor();
        let c = match self.split {
            SplitKind::Bijective { .. } => c * f * f,
            SplitKind::Injective { pad_to, .. } => pad_to,
        };
        [c, h / f.max(1), w / f.max(1)]
    }

    /// Merged `(C, H, W)` after each depth `0..=J` (0 is the split output).
    pub fn depth_shapes(&self) -> Vec<[usize; 3]> {
        let mut shapes = vec![self.split_shape()];
        let mut cur = self.split_shape();
        for b in &self.blocks {
            if b.kind == BlockKind::Downsample {
                cur = [cur[0] * 4, cur[1] / 2, cur[2] / 2];
            }
            shapes.push(cur);
        }
        shapes
    }

    /// Width of the classifier input.
    pub fn feature_dim(&self) -> usize {
        self.depth_shapes().last().map_or(0, |s| s[0])
    }

    /// Checks shape consistency and coefficient conservation, naming the
    /// first offending block.
    pub fn validate(&self) -> Result<()> {
        let [c, h, w] = self.input;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::Config(format!(
                "input shape {:?} has an empty axis",
                self.input
            )));
        }
        if self.num_classes == 0 {
            return Err(Error::Config("num_classes must be positive".into()));
        }
        if self.bottleneck_ratio == 0 {
            return Err(Error::Config("bottleneck_ratio must be positive".into()));
        }
        let f = self.split.factor();
        if f == 0 || h % f != 0 || w % f != 0 {
            return Err(Error::Config(format!(
                "split factor {f} does not divide input {h}x{w}"
            )));
        }
        if let SplitKind::Injective { pad_to, .. } = self.split {
            if pad_to < c * f * f {
                return Err(Error::Config(format!(
                    "injective split pads to {pad_to} channels, fewer than the {} it receives",
                    c * f * f
                )));
            }
        }
        let input_len = self.input_len();
        let mut cur = self.split_shape();
        if !cur[0].is_multiple_of(2) {
            return Err(Error::Config(format!(
                "split output has odd channel count {}",
                cur[0]
            )));
        }
        let mut len = cur.iter().product::<usize>();
        for (i, b) in self.blocks.iter().enumerate() {
            let j = i + 1;
            if b.kind == BlockKind::Downsample {
                if !cur[1].is_multiple_of(2) || !cur[2].is_multiple_of(2) {
                    return Err(Error::Config(format!(
                        "block {j}: cannot downsample {}x{} by 2",
                        cur[1], cur[2]
                    )));
                }
                cur = [cur[0] * 4, cur[1] / 2, cur[2] / 2];
            }
            if b.channels != cur[0] {
                return Err(Error::Config(format!(
                    "block {j}: declares {} channels but receives {}",
                    b.channels, cur[0]
                )));
            }
            let block_len = cur.iter().product::<usize>();
            if block_len != len {
                return Err(Error::Config(format!(
                    "block {j}: coefficient count changes from {len} to {block_len}"
                )));
            }
            len = block_len;
        }
        if self.is_bijective() && len != input_len {
            return Err(Error::Config(format!(
                "bijective network keeps {len} coefficients but the input has {input_len}"
            )));
        }
        if len < input_len {
            return Err(Error::Config(format!(
                "network discards coefficients ({len} < {input_len})"
            )));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: NetConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_b_conserves_coefficients() {
        let cfg = NetConfig::tiny_b();
        cfg.validate().unwrap();
        assert_eq!(cfg.split_shape(), [12, 16, 16]);
        let channels: Vec<usize> = cfg.depth_shapes().iter().map(|s| s[0]).collect();
        let mut distinct = channels.clone();
        distinct.dedup();
        assert_eq!(distinct, vec![12, 48, 192, 768]);
        assert_eq!(cfg.blocks[4].kind, BlockKind::Downsample);
        assert!(cfg
            .depth_shapes()
            .iter()
            .all(|s| s.iter().product::<usize>() == 3072));
    }

    #[test]
    fn paper_b_matches_published_widths() {
        let cfg = NetConfig::paper_b();
        cfg.validate().unwrap();
        assert_eq!(cfg.blocks.len(), 100);
        assert_eq!(cfg.split_shape()[0], 12);
        let stream: Vec<usize> = cfg
            .blocks
            .iter()
            .filter(|b| b.kind == BlockKind::Downsample)
            .map(|b| b.channels / 2)
            .collect();
        assert_eq!(stream, vec![24, 96, 384, 1536]);
        assert!(cfg
            .depth_shapes()
            .iter()
            .all(|s| s.iter().product::<usize>() == 3 * 224 * 224));
        assert_eq!(*cfg.depth_shapes().last().unwrap(), [3072, 7, 7]);
    }

    #[test]
    fn paper_a_matches_published_widths() {
        let cfg = NetConfig::paper_a();
        cfg.validate().unwrap();
        let widths: Vec<usize> = cfg.depth_shapes().iter().map(|s| s[0] / 2).collect();
        let mut distinct = widths.clone();
        distinct.dedup();
        assert_eq!(distinct, vec![48, 192, 768, 3072]);
        let down: Vec<usize> = (1..=cfg.blocks.len())
            .filter(|&j| cfg.blocks[j - 1].kind == BlockKind::Downsample)
            .collect();
        assert_eq!(
            down.iter().map(|j| 3 * j).collect::<Vec<_>>(),
            vec![15, 27, 45]
        );
        assert!(!cfg.is_bijective());
    }

    #[test]
    fn inconsistent_block_is_named() {
        let mut cfg = NetConfig::tiny_b();
        cfg.blocks[6].channels = 50;
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("block 7"), "{msg}");
    }

    #[test]
    fn toml_round_trip() {
        for name in NetConfig::PRESETS {
            let cfg = NetConfig::preset(name).unwrap();
            assert_eq!(NetConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        }
    }
}
