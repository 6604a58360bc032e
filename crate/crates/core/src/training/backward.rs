//! Two gradient routines for the full network. Both use minibatch BN
//! statistics in the forward pass and differentiate through them.
//!
//! * [`backward_stored`] keeps every block input alive until the backward
//!   sweep reaches it.
//! * [`backward_o1`] keeps only the current pair: each block input is rebuilt
//!   from its output through the coupling inverse, replaying the captured BN
//!   statistics so the rebuilt values match the forward ones.

use crate::error::{Error, Result};
use crate::invertible::{channel_merge, channel_split, Pass, SplitPair};
use crate::network::{Network, ReplayStats};
use crate::nn::{global_avg_pool, global_avg_pool_backward, relu, relu_backward};
use crate::tensor::{Scalar, Tensor};

use super::loss::cross_entropy;

/// Parameter gradients aligned one-to-one with [`Network::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub tensors: Vec<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(net: &Network<T>) -> Self {
        Self {
            tensors: net
                .params()
                .iter()
                .map(|p| vec![T::zero(); p.len()])
                .collect(),
        }
    }

    pub fn check_aligned(&self, net: &Network<T>) -> Result<()> {
        let params = net.params();
        if params.len() != self.tensors.len() {
            return Err(Error::shape(
                "gradients",
                &[self.tensors.len()],
                &[params.len()],
            ));
        }
        for (g, p) in self.tensors.iter().zip(&params) {
            if g.len() != p.len() {
                return Err(Error::shape("gradients", &[g.len()], &[p.len()]));
            }
        }
        Ok(())
    }

    /// `|a - b| / |b|` over all tensors concatenated (Euclidean norms).
    ///
    /// Some tensors have an exactly zero true gradient (a BN scale feeding
    /// a single-channel BN is scale-invariant), so per-tensor ratios there
    /// only compare rounding noise; see [`Gradients::per_tensor_discrepancy`].
    pub fn relative_discrepancy(&self, reference: &Self) -> f64 {
        let (mut diff, mut base) = (0.0, 0.0);
        for (a, b) in self.tensors.iter().zip(&reference.tensors) {
            for (x, y) in a.iter().zip(b) {
                diff += (x.as_f64() - y.as_f64()).powi(2);
                base += y.as_f64().powi(2);
            }
        }
        if base == 0.0 {
            diff.sqrt()
        } else {
            (diff / base).sqrt()
        }
    }

    /// Relative difference `|a_t - b_t| / |b_t|` for every tensor `t`.
    pub fn per_tensor_discrepancy(&self, reference: &Self) -> Vec<f64> {
        self.tensors
            .iter()
            .zip(&reference.tensors)
            .map(|(a, b)| {
                let diff: f64 = a
                    .iter()
                    .zip(b)
                    .map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2))
                    .sum();
                let base: f64 = b.iter().map(|y| y.as_f64().powi(2)).sum();
                if base == 0.0 {
                    diff.sqrt()
                } else {
                    (diff / base).sqrt()
                }
            })
            .collect()
    }

    pub fn norm(&self) -> f64 {
        self.tensors
            .iter()
            .flatten()
            .map(|v| v.as_f64().powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Tracks bytes held in retained activation tensors (coupled pairs).
#[derive(Debug, Clone, Copy, Default)]
pub struct MemoryMeter {
    current: usize,
    peak: usize,
}

impl MemoryMeter {
    fn retain<T: Scalar>(&mut self, p: &SplitPair<T>) {
        self.current += p.len() * T::DTYPE.size_of();
        self.peak = self.peak.max(self.current);
    }

    fn release<T: Scalar>(&mut self, p: &SplitPair<T>) {
        self.current -= p.len() * T::DTYPE.size_of();
    }

    pub fn peak_bytes(&self) -> usize {
        self.peak
    }
}

#[derive(Debug, Clone)]
pub struct BackwardOutput<T: Scalar> {
    pub loss: f64,
    /// `(N, num_classes)` row-major scores of the train-mode forward pass.
    pub logits: Vec<T>,
    pub grads: Gradients<T>,
    /// Gradient of the loss with respect to the network input.
    pub input_grad: Tensor<T>,
    /// Minibatch statistics of every BN layer, for running-stat updates.
    pub replay: ReplayStats<T>,
    pub memory: MemoryMeter,
}

struct HeadPass<T: Scalar> {
    loss: f64,
    logits: Vec<T>,
    dpair: SplitPair<T>,
    head: [Vec<T>; 2],
}

fn head_pass<T: Scalar>(
    net: &Network<T>,
    pair: &SplitPair<T>,
    labels: &[usize],
) -> Result<HeadPass<T>> {
    // the merge is a relabeling of the final pair, so it is not metered
    let merged = channel_merge(pair)?;
    let n = merged.batch();
    if labels.len() != n {
        return Err(Error::shape("labels", &[labels.len()], &[n]));
    }
    let pooled = global_avg_pool(&merged)?;
    let h = relu(&pooled);
    let logits = net.head.forward(h.data(), n)?;
    let (loss, dlogits) = cross_entropy(&logits, labels, net.head.out_dim)?;
    let (dh, lg) = net.head.backward(h.data(), &dlogits, n)?;
    let dpooled = relu_backward(&pooled, &Tensor::from_vec(pooled.shape(), dh)?)?;
    let dmerged = global_avg_pool_backward(&dpooled, merged.shape())?;
    Ok(HeadPass {
        loss,
        logits,
        dpair: channel_split(&dmerged)?,
        head: [lg.weight, lg.bias],
    })
}

fn finish<T: Scalar>(
    net: &Network<T>,
    head: HeadPass<T>,
    dinput: SplitPair<T>,
    mut block_grads: Vec<Vec<Vec<T>>>,
    replay: ReplayStats<T>,
    memory: MemoryMeter,
) -> Result<BackwardOutput<T>> {
    block_grads.reverse();
    let mut tensors: Vec<Vec<T>> = block_grads.into_iter().flatten().collect();
    let [w, b] = head.head;
    tensors.push(w);
    tensors.push(b);
    let input_grad = net.split_input_adjoint(&channel_merge(&dinput)?)?;
    Ok(BackwardOutput {
        loss: head.loss,
        logits: head.logits,
        grads: Gradients { tensors },
        input_grad,
        replay,
        memory,
    })
}

/// Reference gradients: all `J + 1` block inputs stay in memory.
pub fn backward_stored<T: Scalar>(
    net: &Network<T>,
    x: &Tensor<T>,
    labels: &[usize],
) -> Result<BackwardOutput<T>> {
    let mut meter = MemoryMeter::default();
    let mut pair = channel_split(&net.split_input(x)?)?;
    meter.retain(&pair);
    let mut inputs = Vec::with_capacity(net.depth());
    let mut replay = Vec::with_capacity(net.depth());
    for block in &net.blocks {
        let (next, stats) = block.forward(&pair, Pass::Train)?;
        meter.retain(&next);
        inputs.push(std::mem::replace(&mut pair, next));
        replay.push(stats);
    }
    let head = head_pass(net, &pair, labels)?;
    let mut dpair = head.dpair.clone();
    let mut grads = Vec::with_capacity(net.depth());
    for (i, block) in net.blocks.iter().enumerate().rev() {
        let input = inputs.pop().expect("one input per block");
        let (d, g) = block.backward(&input, Pass::Replay(&replay[i]), &dpair)?;
        meter.release(&input);
        dpair = d;
        grads.push(g);
    }
    finish(net, head, dpair, grads, replay, meter)
}

/// Gradients with depth-independent activation memory: the forward pass keeps
/// only the final pair and the BN statistics, and the backward sweep rebuilds
/// each block input through the inverse.
pub fn backward_o1<T: Scalar>(
    net: &Network<T>,
    x: &Tensor<T>,
    labels: &[usize],
) -> Result<BackwardOutput<T>> {
    backward_o1_observed(net, x, labels, |_, _| {})
}

/// [`backward_o1`] that reports every rebuilt block input `(depth, pair)`.
pub(crate) fn backward_o1_observed<T: Scalar>(
    net: &Network<T>,
    x: &Tensor<T>,
    labels: &[usize],
    mut observe: impl FnMut(usize, &SplitPair<T>),
) -> Result<BackwardOutput<T>> {
    let mut meter = MemoryMeter::default();
    let mut pair = channel_split(&net.split_input(x)?)?;
    meter.retain(&pair);
    let mut replay = Vec::with_capacity(net.depth());
    for block in &net.blocks {
        let (next, stats) = block.forward(&pair, Pass::Train)?;
        meter.retain(&next);
        meter.release(&pair);
        pair = next;
        replay.push(stats);
    }
    let head = head_pass(net, &pair, labels)?;
    let mut dpair = head.dpair.clone();
    let mut grads = Vec::with_capacity(net.depth());
    for (i, block) in net.blocks.iter().enumerate().rev() {
        let input = block.inverse(&pair, Pass::Replay(&replay[i]))?;
        meter.retain(&input);
        meter.release(&pair);
        observe(i, &input);
        let (d, g) = block.backward(&input, Pass::Replay(&replay[i]), &dpair)?;
        pair = input;
        dpair = d;
        grads.push(g);
    }
    finish(net, head, dpair, grads, replay, meter)
}
