//! The full invertible network `Phi`: input split, a cascade of coupling
//! blocks, merge, and the (non-invertible) classifier head.

mod bottleneck;
mod config;

pub use bottleneck::{bottleneck_width, Activation, Bottleneck, OUTPUT_INIT_GAIN};
pub use config::{BlockKind, BlockSpec, NetConfig, SplitKind, DOWNSAMPLE_FACTOR};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::invertible::{
    channel_merge, channel_split, injective_pad, injective_pad_adjoint, pad_pseudo_inverse,
    psi_downsample, psi_inverse, CouplingBlock, Pass, Residual, SplitPair,
};
use crate::nn::{global_avg_pool, relu, BnBatchStats, Linear};
use crate::tensor::{Scalar, Tensor};

pub type Block<T> = CouplingBlock<Bottleneck<T>>;

/// BN statistics captured by one train-mode pass, per block.
pub type ReplayStats<T> = Vec<Vec<BnBatchStats<T>>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Minibatch BN statistics, captured for replay.
    Train,
    /// Running BN statistics.
    Eval,
}

/// How [`Network::inverse`] evaluates the residual branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InverseMode {
    Eval,
    /// Reproduce the train-mode forward using the captured statistics.
    Replay,
}

/// Output of the convolutional part, `Phi x = (x_J, x~_J)`.
#[derive(Debug, Clone)]
pub struct Features<T: Scalar> {
    pub pair: SplitPair<T>,
    pub merged: Tensor<T>,
    pub bn_replay: Option<ReplayStats<T>>,
}

impl<T: Scalar> Features<T> {
    /// Wraps an arbitrary merged feature tensor (e.g. an interpolated one).
    pub fn from_merged(merged: Tensor<T>) -> Result<Self> {
        Ok(Self {
            pair: channel_split(&merged)?,
            merged,
            bn_replay: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T: Scalar> {
    config: NetConfig,
    pub blocks: Vec<Block<T>>,
    pub head: Linear<T>,
}

impl<T: Scalar> Network<T> {
    /// Initializes a network deterministically from `seed`: convolutions
    /// N(0, 2/fan_in) (the last one per branch scaled down), BN gamma=1
    /// beta=0, head weights N(0, 1/fan_in) with a zero bias.
    pub fn build(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = config
            .blocks
            .iter()
            .map(|b| {
                let down = (b.kind == BlockKind::Downsample).then_some(DOWNSAMPLE_FACTOR);
                CouplingBlock::new(
                    Bottleneck::new(b.channels / 2, config.bottleneck_ratio, &mut rng),
                    down,
                )
            })
            .collect();
        let d = config.feature_dim();
        let normal = Normal::new(0.0, (1.0 / d as f64).sqrt()).expect("positive std");
        let weight = (0..d * config.num_classes)
            .map(|_| T::from_f64_lossy(normal.sample(&mut rng)))
            .collect();
        let head = Linear::new(
            weight,
            vec![T::zero(); config.num_classes],
            d,
            config.num_classes,
        )?;
        Ok(Self {
            config,
            blocks,
            head,
        })
    }

    /// Assembles a network from existing parts (checkpoint loading).
    pub fn from_parts(config: NetConfig, blocks: Vec<Block<T>>, head: Linear<T>) -> Result<Self> {
        config.validate()?;
        if blocks.len() != config.blocks.len() {
            return Err(Error::Config(format!(
                "config lists {} blocks, got {}",
                config.blocks.len(),
                blocks.len()
            )));
        }
        for (i, (b, spec)) in blocks.iter().zip(&config.blocks).enumerate() {
            if b.residual.channels() * 2 != spec.channels {
                return Err(Error::Config(format!(
                    "block {}: parameter width does not match config",
                    i + 1
                )));
            }
        }
        if head.in_dim != config.feature_dim() || head.out_dim != config.num_classes {
            return Err(Error::Config("head dimensions do not match config".into()));
        }
        Ok(Self {
            config,
            blocks,
            head,
        })
    }

    /// Converts every parameter and statistic to another element type.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let c = |v: &[T]| v.iter().map(|x| U::from_f64_lossy(x.as_f64())).collect();
        Network {
            config: self.config.clone(),
            blocks: self
                .blocks
                .iter()
                .map(|b| CouplingBlock::new(b.residual.cast(), b.downsample))
                .collect(),
            head: Linear {
                weight: c(&self.head.weight),
                bias: c(&self.head.bias),
                in_dim: self.head.in_dim,
                out_dim: self.head.out_dim,
            },
        }
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    /// Sets every residual branch to zero, leaving a pure permutation (plus
    /// padding) network.
    pub fn zero_residuals(&mut self) {
        for b in &mut self.blocks {
            b.residual.zero_output();
        }
    }

    pub fn set_activation(&mut self, act: Activation) {
        for b in &mut self.blocks {
            b.residual.activation = act;
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let [c, h, w] = self.config.input;
        let s = x.shape();
        if s[1..] != [c, h, w] {
            return Err(Error::shape("network input", &s, &[s[0], c, h, w]));
        }
        Ok(())
    }

    /// The input splitting operator (merged form, before the channel split).
    pub fn split_input(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let y = psi_downsample(x, self.config.split.factor())?;
        match self.config.split {
            SplitKind::Bijective { .. } => Ok(y),
            SplitKind::Injective { pad_to, .. } => injective_pad(&y, pad_to),
        }
    }

    /// Inverse (or left inverse, for injective splits) of [`Network::split_input`].
    pub fn unsplit(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        let f = self.config.split.factor();
        match self.config.split {
            SplitKind::Bijective { .. } => psi_inverse(y, f),
            SplitKind::Injective { .. } => {
                psi_inverse(&pad_pseudo_inverse(y, self.config.input[0] * f * f)?, f)
            }
        }
    }

    /// Adjoint of [`Network::split_input`]: maps a gradient on the merged
    /// split output back to the input.
    pub fn split_input_adjoint(&self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let f = self.config.split.factor();
        match self.config.split {
            SplitKind::Bijective { .. } => psi_inverse(dy, f),
            SplitKind::Injective { .. } => {
                psi_inverse(&injective_pad_adjoint(dy, self.config.input[0] * f * f)?, f)
            }
        }
    }

    /// Runs `Phi`. `taps` lists depths `j` in `0..=J` whose merged features
    /// `Phi_j x` are returned in the given order. Train mode uses minibatch
    /// BN statistics and captures them in [`Features::bn_replay`]; it does not
    /// update running statistics (see [`Network::update_running_stats`]).
    pub fn forward(
        &self,
        x: &Tensor<T>,
        mode: Mode,
        taps: &[usize],
    ) -> Result<(Features<T>, Vec<Tensor<T>>)> {
        if let Some(&bad) = taps.iter().find(|&&j| j > self.depth()) {
            return Err(Error::InvalidArgument(format!(
                "tap depth {bad} exceeds network depth {}",
                self.depth()
            )));
        }
        let mut tapped: Vec<Option<Tensor<T>>> = vec![None; taps.len()];
        let mut record = |j: usize, pair: &SplitPair<T>| -> Result<()> {
            if taps.contains(&j) {
                let merged = channel_merge(pair)?;
                for (slot, _) in tapped.iter_mut().zip(taps).filter(|(_, &t)| t == j) {
                    *slot = Some(merged.clone());
                }
            }
            Ok(())
        };
        let mut pair = channel_split(&self.split_input(x)?)?;
        record(0, &pair)?;
        let mut replay = (mode == Mode::Train).then(|| Vec::with_capacity(self.depth()));
        for (i, block) in self.blocks.iter().enumerate() {
            let pass = match mode {
                Mode::Train => Pass::Train,
                Mode::Eval => Pass::Eval,
            };
            let (next, stats) = block.forward(&pair, pass)?;
            if let Some(r) = &mut replay {
                r.push(stats);
            }
            pair = next;
            record(i + 1, &pair)?;
        }
        let merged = channel_merge(&pair)?;
        let taps = tapped
            .into_iter()
            .map(|t| t.expect("every tap recorded"))
            .collect();
        Ok((
            Features {
                pair,
                merged,
                bn_replay: replay,
            },
            taps,
        ))
    }

    /// Maps features back to the input: `Phi^{-1}` for bijective configs, the
    /// left inverse `Phi^+` for injective ones. For features outside the range
    /// of an injective `Phi` this returns the pseudo-inverse value.
    pub fn inverse(&self, feats: &Features<T>, mode: InverseMode) -> Result<Tensor<T>> {
        let replay = match mode {
            InverseMode::Eval => None,
            InverseMode::Replay => Some(feats.bn_replay.as_ref().ok_or_else(|| {
                Error::MissingReplay("features carry no captured statistics".into())
            })?),
        };
        if let Some(r) = replay {
            if r.len() != self.depth() {
                return Err(Error::MissingReplay(format!(
                    "{} blocks but {} statistics entries",
                    self.depth(),
                    r.len()
                )));
            }
        }
        let mut pair = feats.pair.clone();
        for (i, block) in self.blocks.iter().enumerate().rev() {
            let pass = replay.map_or(Pass::Eval, |r| Pass::Replay(&r[i]));
            pair = block.inverse(&pair, pass)?;
        }
        self.unsplit(&channel_merge(&pair)?)
    }

    /// Pooled, rectified features fed to the head: `relu(avgpool(merged))`
    /// flattened to `(N, D)`.
    pub fn head_input(&self, merged: &Tensor<T>) -> Result<Vec<T>> {
        Ok(relu(&global_avg_pool(merged)?).into_vec())
    }

    /// Class scores for each sample, `(N, num_classes)` row-major.
    pub fn logits_from_features(&self, merged: &Tensor<T>) -> Result<Vec<T>> {
        let h = self.head_input(merged)?;
        self.head.forward(&h, merged.batch())
    }

    /// Eval-mode class scores.
    pub fn classify(&self, x: &Tensor<T>) -> Result<Vec<T>> {
        let (f, _) = self.forward(x, Mode::Eval, &[])?;
        self.logits_from_features(&f.merged)
    }

    /// Eval-mode predicted labels.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<usize>> {
        let logits = self.classify(x)?;
        Ok(argmax_rows(&logits, self.config.num_classes))
    }

    pub fn update_running_stats(&mut self, stats: &[Vec<BnBatchStats<T>>]) {
        for (b, s) in self.blocks.iter_mut().zip(stats) {
            b.residual.update_running(s);
        }
    }

    /// All trainable parameters in a fixed order.
    pub fn params(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = self
            .blocks
            .iter()
            .flat_map(|b| b.residual.params())
            .collect();
        out.push(&self.head.weight);
        out.push(&self.head.bias);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = self
            .blocks
            .iter_mut()
            .flat_map(|b| b.residual.params_mut())
            .collect();
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    /// Names aligned with [`Network::params`], e.g. `block3.conv2.weight`.
    pub fn param_names(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .blocks
            .iter()
            .enumerate()
            .flat_map(|(i, b)| {
                b.residual
                    .param_names()
                    .into_iter()
                    .map(move |n| format!("block{}.{n}", i + 1))
            })
            .collect();
        out.push("head.weight".into());
        out.push("head.bias".into());
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

/// Index of the largest entry in each row (first one on ties).
pub fn argmax_rows<T: Scalar>(values: &[T], cols: usize) -> Vec<usize> {
    values
        .chunks(cols)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, T::neg_infinity()), |(bi, bv), (i, &v)| {
                    if v > bv {
                        (i, v)
                    } else {
                        (bi, bv)
                    }
                })
                .0
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::relative_error;
    use rand_distr::Uniform;

    fn small_config() -> NetConfig {
        NetConfig::with_schedule([3, 8, 8], SplitKind::Bijective { factor: 2 }, 3, &[2], 5)
    }

    fn uniform(shape: [usize; 4], seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = Uniform::new(0.0f32, 1.0).unwrap();
        Tensor::from_fn(shape, |_| u.sample(&mut rng))
    }

    #[test]
    fn build_is_deterministic() {
        let a = Network::<f32>::build(NetConfig::tiny_b(), 3).unwrap();
        let b = Network::<f32>::build(NetConfig::tiny_b(), 3).unwrap();
        let c = Network::<f32>::build(NetConfig::tiny_b(), 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.params().len(), a.param_names().len());
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = small_config();
        cfg.blocks[0].kind = BlockKind::Downsample;
        assert!(matches!(
            Network::<f32>::build(cfg, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn forward_inverse_round_trip() {
        let net = Network::<f32>::build(NetConfig::tiny_b(), 1).unwrap();
        let x = uniform([4, 3, 32, 32], 2);
        let (f, _) = net.forward(&x, Mode::Eval, &[]).unwrap();
        assert_eq!(f.merged.len(), x.len());
        let back = net.inverse(&f, InverseMode::Eval).unwrap();
        assert!(relative_error(&back, &x) < 1e-5);
    }

    #[test]
    fn train_pass_inverts_with_replay() {
        let net = Network::<f64>::build(small_config(), 5).unwrap();
        let x = uniform([3, 3, 8, 8], 6).cast::<f64>();
        let (f, _) = net.forward(&x, Mode::Train, &[]).unwrap();
        assert_eq!(f.bn_replay.as_ref().unwrap().len(), 3);
        let back = net.inverse(&f, InverseMode::Replay).unwrap();
        assert!(relative_error(&back, &x) < 1e-12);
        let no_stats = Features::from_merged(f.merged.clone()).unwrap();
        assert!(matches!(
            net.inverse(&no_stats, InverseMode::Replay),
            Err(Error::MissingReplay(_))
        ));
    }

    #[test]
    fn zero_residual_network_is_a_permutation() {
        let mut net = Network::<f32>::build(NetConfig::tiny_b(), 1).unwrap();
        net.zero_residuals();
        let x = uniform([2, 3, 32, 32], 3);
        let (f, _) = net.forward(&x, Mode::Eval, &[]).unwrap();
        let mut a: Vec<u32> = x.data().iter().map(|v| v.to_bits()).collect();
        let mut b: Vec<u32> = f.merged.data().iter().map(|v| v.to_bits()).collect();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
        assert!(net.inverse(&f, InverseMode::Eval).unwrap().bitwise_eq(&x));
    }

    #[test]
    fn taps_match_features() {
        let net = Network::<f32>::build(small_config(), 1).unwrap();
        let x = uniform([2, 3, 8, 8], 4);
        let (f, taps) = net.forward(&x, Mode::Eval, &[3, 0, 2]).unwrap();
        assert!(taps[0].bitwise_eq(&f.merged));
        assert_eq!(taps[1].shape(), [2, 12, 4, 4]);
        assert_eq!(taps[2].shape(), [2, 48, 2, 2]);
        assert!(taps.iter().all(|t| t.len() == x.len()));
        assert!(net.forward(&x, Mode::Eval, &[4]).is_err());
    }

    #[test]
    fn injective_network_left_inverse() {
        let net = Network::<f32>::build(NetConfig::tiny_a(), 2).unwrap();
        let x = uniform([2, 3, 32, 32], 5);
        let (f, _) = net.forward(&x, Mode::Eval, &[]).unwrap();
        assert_eq!(f.merged.len(), 2 * x.len());
        assert!(relative_error(&net.inverse(&f, InverseMode::Eval).unwrap(), &x) < 1e-5);
    }

    #[test]
    fn head_shapes() {
        let mut net = Network::<f32>::build(small_config(), 1).unwrap();
        let x = uniform([3, 3, 8, 8], 7);
        let logits = net.classify(&x).unwrap();
        assert_eq!(logits.len(), 3 * 5);
        net.head.weight.iter_mut().for_each(|w| *w = 0.0);
        net.head.bias = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let logits = net.classify(&x).unwrap();
        assert_eq!(&logits[5..10], &[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!(net.classify(&Tensor::zeros([1, 1, 8, 8])).is_err());
    }
}
