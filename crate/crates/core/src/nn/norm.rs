//! Batch normalization with capturable / replayable minibatch statistics.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct BnParams<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: f64,
    pub momentum: f64,
}

/// Per-channel statistics of one minibatch (biased variance).
#[derive(Debug, Clone, PartialEq)]
pub struct BnBatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    /// Number of values per channel the statistics were computed over.
    pub count: usize,
}

/// How a batch-norm layer obtains its statistics.
#[derive(Debug, Clone, Copy)]
pub enum BnMode<'a, T> {
    /// Current minibatch statistics (captured and returned).
    Train,
    /// Running statistics.
    Eval,
    /// Previously captured statistics, applied verbatim.
    Replay(&'a BnBatchStats<T>),
}

impl<T: Scalar> BnParams<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            eps: DEFAULT_EPS,
            momentum: DEFAULT_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn cast<U: Scalar>(&self) -> BnParams<U> {
        let c = |v: &[T]| v.iter().map(|x| U::from_f64_lossy(x.as_f64())).collect();
        BnParams {
            gamma: c(&self.gamma),
            beta: c(&self.beta),
            running_mean: c(&self.running_mean),
            running_var: c(&self.running_var),
            eps: self.eps,
            momentum: self.momentum,
        }
    }

    /// Folds captured minibatch statistics into the running estimates
    /// (the running variance uses the unbiased estimator).
    pub fn update_running(&mut self, stats: &BnBatchStats<T>) {
        let m = self.momentum;
        let n = stats.count as f64;
        let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
        for c in 0..self.channels() {
            let rm = self.running_mean[c].as_f64();
            let rv = self.running_var[c].as_f64();
            self.running_mean[c] = T::from_f64_lossy((1.0 - m) * rm + m * stats.mean[c].as_f64());
            self.running_var[c] =
                T::from_f64_lossy((1.0 - m) * rv + m * stats.var[c].as_f64() * unbias);
        }
    }

    fn running_stats(&self) -> (&[T], &[T]) {
        (&self.running_mean, &self.running_var)
    }

    fn inv_std(&self, var: &[T]) -> Vec<T> {
        let eps = T::from_f64_lossy(self.eps);
        var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect()
    }
}

fn check_channels<T: Scalar>(x: &Tensor<T>, p: &BnParams<T>) -> Result<()> {
    if x.channels() != p.channels() {
        return Err(Error::shape("batch_norm", &x.shape(), &[p.channels()]));
    }
    Ok(())
}

/// Per-channel mean and biased variance, accumulated in f64.
pub fn batch_stats<T: Scalar>(x: &Tensor<T>) -> Result<BnBatchStats<T>> {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let count = n * hw;
    if count < 2 {
        return Err(Error::InsufficientStatistics(count));
    }
    let mut mean = Vec::with_capacity(c);
    let mut var = Vec::with_capacity(c);
    for ci in 0..c {
        let plane = |ni: usize| &x.data()[(ni * c + ci) * hw..(ni * c + ci + 1) * hw];
        let sum: f64 = (0..n).flat_map(plane).map(|v| v.as_f64()).sum();
        let mu = sum / count as f64;
        let sq: f64 = (0..n)
            .flat_map(plane)
            .map(|v| {
                let d = v.as_f64() - mu;
                d * d
            })
            .sum();
        mean.push(T::from_f64_lossy(mu));
        var.push(T::from_f64_lossy(sq / count as f64));
    }
    Ok(BnBatchStats { mean, var, count })
}

fn normalize<T: Scalar>(x: &Tensor<T>, p: &BnParams<T>, mean: &[T], var: &[T]) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let inv = p.inv_std(var);
    let mut out = x.clone();
    for ni in 0..n {
        for ci in 0..c {
            let scale = p.gamma[ci] * inv[ci];
            let (mu, beta) = (mean[ci], p.beta[ci]);
            for v in &mut out.data_mut()[(ni * c + ci) * hw..(ni * c + ci + 1) * hw] {
                *v = (*v - mu) * scale + beta;
            }
        }
    }
    out
}

/// Applies batch normalization.
///
/// Train mode computes and returns the minibatch statistics; it does not touch
/// the running estimates, which the caller folds in with
/// [`BnParams::update_running`]. Replaying the returned statistics reproduces
/// the train-mode output bit for bit.
pub fn batch_norm<T: Scalar>(
    x: &Tensor<T>,
    p: &BnParams<T>,
    mode: BnMode<'_, T>,
) -> Result<(Tensor<T>, Option<BnBatchStats<T>>)> {
    check_channels(x, p)?;
    match mode {
        BnMode::Train => {
            let stats = batch_stats(x)?;
            let y = normalize(x, p, &stats.mean, &stats.var);
            Ok((y, Some(stats)))
        }
        BnMode::Eval => {
            let (m, v) = p.running_stats();
            Ok((normalize(x, p, m, v), None))
        }
        BnMode::Replay(stats) => {
            if stats.mean.len() != p.channels() || stats.var.len() != p.channels() {
                return Err(Error::shape(
                    "batch_norm replay",
                    &[p.channels()],
                    &[stats.mean.len()],
                ));
            }
            Ok((normalize(x, p, &stats.mean, &stats.var), None))
        }
    }
}

#[derive(Debug, Clone)]
pub struct BnGrads<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

/// Backward pass of batch normalization.
///
/// With `batch_dependent` the statistics are treated as functions of the
/// minibatch (training-mode gradient); otherwise they are constants and the
/// layer is a per-channel affine map.
pub fn batch_norm_backward<T: Scalar>(
    x: &Tensor<T>,
    dy: &Tensor<T>,
    p: &BnParams<T>,
    mean: &[T],
    var: &[T],
    batch_dependent: bool,
) -> Result<(Tensor<T>, BnGrads<T>)> {
    check_channels(x, p)?;
    x.check_same(dy, "batch_norm backward")?;
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let m = (n * hw) as f64;
    let inv = p.inv_std(var);
    let mut dx = Tensor::zeros(x.shape());
    let mut dgamma = Vec::with_capacity(c);
    let mut dbeta = Vec::with_capacity(c);
    for ci in 0..c {
        let (mu, is) = (mean[ci].as_f64(), inv[ci].as_f64());
        let mut sum_dy = 0.0;
        let mut sum_dy_xhat = 0.0;
        for ni in 0..n {
            let range = (ni * c + ci) * hw..(ni * c + ci + 1) * hw;
            for (xv, gv) in x.data()[range.clone()].iter().zip(&dy.data()[range]) {
                let g = gv.as_f64();
                sum_dy += g;
                sum_dy_xhat += g * (xv.as_f64() - mu) * is;
            }
        }
        dgamma.push(T::from_f64_lossy(sum_dy_xhat));
        dbeta.push(T::from_f64_lossy(sum_dy));
        let gi = p.gamma[ci].as_f64() * is;
        for ni in 0..n {
            let range = (ni * c + ci) * hw..(ni * c + ci + 1) * hw;
            let xs = &x.data()[range.clone()];
            let gs = &dy.data()[range.clone()];
            let out = &mut dx.data_mut()[range];
            for ((o, xv), gv) in out.iter_mut().zip(xs).zip(gs) {
                let g = gv.as_f64();
                *o = T::from_f64_lossy(if batch_dependent {
                    let xhat = (xv.as_f64() - mu) * is;
                    gi * (g - sum_dy / m - xhat * sum_dy_xhat / m)
                } else {
                    gi * g
                });
            }
        }
    }
    Ok((
        dx,
        BnGrads {
            gamma: dgamma,
            beta: dbeta,
        },
    ))
}

/// Directional derivative of the frozen-statistics map: `gamma / sigma * v`.
pub fn batch_norm_frozen_jvp<T: Scalar>(
    v: &Tensor<T>,
    p: &BnParams<T>,
    var: &[T],
) -> Result<Tensor<T>> {
    check_channels(v, p)?;
    let [n, c, h, w] = v.shape();
    let hw = h * w;
    let inv = p.inv_std(var);
    let mut out = v.clone();
    for ni in 0..n {
        for ci in 0..c {
            let s = p.gamma[ci] * inv[ci];
            out.data_mut()[(ni * c + ci) * hw..(ni * c + ci + 1) * hw]
                .iter_mut()
                .for_each(|e| *e *= s);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn randn(shape: [usize; 4], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.3, 2.0).unwrap();
        Tensor::from_fn(shape, |_| normal.sample(&mut rng))
    }

    #[test]
    fn standardized_input_is_a_fixed_point() {
        // per channel: values {-1, 1} -> mean 0, var 1
        let x = Tensor::<f64>::from_fn(
            [2, 3, 1, 2],
            |[n, _, _, w]| if (n + w) % 2 == 0 { 1.0 } else { -1.0 },
        );
        let mut p = BnParams::new(3);
        p.eps = 1e-12;
        let (y, _) = batch_norm(&x, &p, BnMode::Train).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn replay_matches_train_bitwise() {
        let x = randn([4, 3, 5, 5], 1).cast::<f32>();
        let mut p = BnParams::<f32>::new(3);
        p.gamma = vec![0.5, 1.5, -2.0];
        p.beta = vec![0.1, 0.0, 3.0];
        let (y_train, stats) = batch_norm(&x, &p, BnMode::Train).unwrap();
        let stats = stats.unwrap();
        let (y1, s1) = batch_norm(&x, &p, BnMode::Replay(&stats)).unwrap();
        let (y2, _) = batch_norm(&x, &p, BnMode::Replay(&stats)).unwrap();
        assert!(s1.is_none());
        assert!(y_train.bitwise_eq(&y1));
        assert!(y1.bitwise_eq(&y2));
    }

    #[test]
    fn train_requires_two_values() {
        let x = Tensor::<f32>::zeros([1, 2, 1, 1]);
        assert!(matches!(
            batch_norm(&x, &BnParams::new(2), BnMode::Train),
            Err(Error::InsufficientStatistics(1))
        ));
        assert!(batch_norm(&x, &BnParams::new(2), BnMode::Eval).is_ok());
    }

    #[test]
    fn running_update_uses_momentum() {
        let mut p = BnParams::<f64>::new(1);
        let stats = BnBatchStats {
            mean: vec![2.0],
            var: vec![4.0],
            count: 5,
        };
        p.update_running(&stats);
        assert!((p.running_mean[0] - 0.2).abs() < 1e-12);
        assert!((p.running_var[0] - (0.9 + 0.1 * 4.0 * 5.0 / 4.0)).abs() < 1e-12);
    }

    #[test]
    fn eval_uses_running_stats() {
        let x = randn([2, 2, 3, 3], 5);
        let mut p = BnParams::<f64>::new(2);
        p.running_mean = vec![1.0, -1.0];
        p.running_var = vec![4.0, 0.25];
        let (y, _) = batch_norm(&x, &p, BnMode::Eval).unwrap();
        let expected = (x.get([1, 1, 2, 0]) + 1.0) / (0.25f64 + 1e-5).sqrt();
        assert!((y.get([1, 1, 2, 0]) - expected).abs() < 1e-12);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let x = randn([3, 2, 2, 3], 9);
        let dy = randn([3, 2, 2, 3], 10);
        let mut p = BnParams::<f64>::new(2);
        p.gamma = vec![1.3, -0.4];
        p.beta = vec![0.2, 0.7];
        let loss = |x: &Tensor<f64>, p: &BnParams<f64>| {
            let (y, _) = batch_norm(x, p, BnMode::Train).unwrap();
            y.dot(&dy).unwrap()
        };
        let stats = batch_stats(&x).unwrap();
        let (dx, g) = batch_norm_backward(&x, &dy, &p, &stats.mean, &stats.var, true).unwrap();
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (loss(&xp, &p) - loss(&xm, &p)) / (2.0 * h);
            assert!((fd - dx.data()[i]).abs() < 1e-6, "{fd} vs {}", dx.data()[i]);
        }
        for c in 0..2 {
            let mut pp = p.clone();
            pp.gamma[c] += h;
            let mut pm = p.clone();
            pm.gamma[c] -= h;
            let fd = (loss(&x, &pp) - loss(&x, &pm)) / (2.0 * h);
            assert!((fd - g.gamma[c]).abs() < 1e-6);
        }
    }
}
