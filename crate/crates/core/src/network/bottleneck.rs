//! The residual branch `F_j`: three convolutions (1x1, 3x3, 1x1), each
//! preceded by batch normalization and ReLU, with a narrow middle layer.

use rand::Rng;

use crate::error::{Error, Result};
use crate::invertible::{Pass, Residual};
use crate::nn::{
    batch_norm, batch_norm_backward, batch_norm_frozen_jvp, conv2d, conv2d_backward,
    conv2d_backward_input, conv2d_linear, relu, relu_backward, BnBatchStats, BnMode, BnParams,
    ConvParams,
};
use crate::tensor::{Scalar, Tensor};

/// Pointwise non-linearity inside the branch. `Identity` exists so tests can
/// turn the whole network affine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    fn apply<T: Scalar>(self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            Activation::Relu => relu(x),
            Activation::Identity => x.clone(),
        }
    }

    fn backward<T: Scalar>(self, x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Activation::Relu => relu_backward(x, dy),
            Activation::Identity => Ok(dy.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bottleneck<T: Scalar> {
    pub bn1: BnParams<T>,
    pub conv1: ConvParams<T>,
    pub bn2: BnParams<T>,
    pub conv2: ConvParams<T>,
    pub bn3: BnParams<T>,
    pub conv3: ConvParams<T>,
    pub activation: Activation,
}

/// Intermediate values of one branch evaluation.
struct Trace<T: Scalar> {
    pre: [Tensor<T>; 3],
    normed: [Tensor<T>; 3],
    acts: [Tensor<T>; 3],
    stats: [(Vec<T>, Vec<T>); 3],
    captured: Vec<BnBatchStats<T>>,
    out: Tensor<T>,
}

/// Width of the middle convolution for a branch with `channels` channels.
pub fn bottleneck_width(channels: usize, ratio: usize) -> usize {
    (channels / ratio.max(1)).max(1)
}

/// Standard-deviation multiplier for the last convolution of a freshly built
/// branch. Full He scaling on all three layers lets activations grow by an
/// order of magnitude over 16 blocks, which amplifies f32 rounding in the
/// inverse; starting each branch small keeps the untrained network close to
/// a permutation.
pub const OUTPUT_INIT_GAIN: f64 = 0.1;

impl<T: Scalar> Bottleneck<T> {
    /// He-initialized branch on `channels` channels with middle width
    /// `channels / ratio` (at least 1); the last layer is scaled by
    /// [`OUTPUT_INIT_GAIN`].
    pub fn new(channels: usize, ratio: usize, rng: &mut impl Rng) -> Self {
        let mid = bottleneck_width(channels, ratio);
        Self {
            bn1: BnParams::new(channels),
            conv1: ConvParams::he_normal(mid, channels, 1, rng),
            bn2: BnParams::new(mid),
            conv2: ConvParams::he_normal(mid, mid, 3, rng),
            bn3: BnParams::new(mid),
            conv3: ConvParams::he_normal_scaled(channels, mid, 1, OUTPUT_INIT_GAIN, rng),
            activation: Activation::Relu,
        }
    }

    pub fn cast<U: Scalar>(&self) -> Bottleneck<U> {
        Bottleneck {
            bn1: self.bn1.cast(),
            conv1: self.conv1.cast(),
            bn2: self.bn2.cast(),
            conv2: self.conv2.cast(),
            bn3: self.bn3.cast(),
            conv3: self.conv3.cast(),
            activation: self.activation,
        }
    }

    pub fn channels(&self) -> usize {
        self.conv3.c_out()
    }

    pub fn width(&self) -> usize {
        self.conv2.c_out()
    }

    fn bns(&self) -> [&BnParams<T>; 3] {
        [&self.bn1, &self.bn2, &self.bn3]
    }

    fn convs(&self) -> [&ConvParams<T>; 3] {
        [&self.conv1, &self.conv2, &self.conv3]
    }

    /// Makes `F` identically zero (the coupling then reduces to permutations).
    pub fn zero_output(&mut self) {
        self.conv3
            .weight
            .data_mut()
            .iter_mut()
            .for_each(|w| *w = T::zero());
        if let Some(b) = &mut self.conv3.bias {
            b.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    fn trace(&self, x: &Tensor<T>, pass: Pass<'_, T>) -> Result<Trace<T>> {
        if let Pass::Replay(s) = pass {
            if s.len() != 3 {
                return Err(Error::MissingReplay(format!(
                    "bottleneck expects 3 statistics entries, got {}",
                    s.len()
                )));
            }
        }
        let mut cur = x.clone();
        let mut pre = Vec::with_capacity(3);
        let mut normed = Vec::with_capacity(3);
        let mut acts = Vec::with_capacity(3);
        let mut stats = Vec::with_capacity(3);
        let mut captured = Vec::new();
        for (i, (bn, conv)) in self.bns().into_iter().zip(self.convs()).enumerate() {
            let mode = match pass {
                Pass::Train => BnMode::Train,
                Pass::Eval => BnMode::Eval,
                Pass::Replay(s) => BnMode::Replay(&s[i]),
            };
            let (n, cap) = batch_norm(&cur, bn, mode)?;
            let used = match (&cap, pass) {
                (Some(c), _) => (c.mean.clone(), c.var.clone()),
                (None, Pass::Replay(s)) => (s[i].mean.clone(), s[i].var.clone()),
                (None, _) => (bn.running_mean.clone(), bn.running_var.clone()),
            };
            let a = self.activation.apply(&n);
            let next = conv2d(&a, conv)?;
            captured.extend(cap);
            stats.push(used);
            pre.push(std::mem::replace(&mut cur, next));
            normed.push(n);
            acts.push(a);
        }
        let into3 = |v: Vec<Tensor<T>>| -> [Tensor<T>; 3] { v.try_into().expect("three layers") };
        Ok(Trace {
            pre: into3(pre),
            normed: into3(normed),
            acts: into3(acts),
            stats: stats.try_into().map_err(|_| ()).expect("three layers"),
            captured,
            out: cur,
        })
    }
}

impl<T: Scalar> Residual<T> for Bottleneck<T> {
    fn forward(
        &self,
        x: &Tensor<T>,
        pass: Pass<'_, T>,
    ) -> Result<(Tensor<T>, Vec<BnBatchStats<T>>)> {
        let t = self.trace(x, pass)?;
        Ok((t.out, t.captured))
    }

    fn backward(
        &self,
        x: &Tensor<T>,
        pass: Pass<'_, T>,
        dy: &Tensor<T>,
        param_grads: bool,
    ) -> Result<(Tensor<T>, Option<Vec<Vec<T>>>)> {
        let t = self.trace(x, pass)?;
        dy.check_same(&t.out, "bottleneck backward")?;
        let batch_dependent = !matches!(pass, Pass::Eval);
        let mut grads: Vec<Vec<Vec<T>>> = Vec::with_capacity(3);
        let mut g = dy.clone();
        for i in (0..3).rev() {
            let conv = self.convs()[i];
            let da = if param_grads {
                let (da, cg) = conv2d_backward(&t.acts[i], &g, conv)?;
                let mut layer = vec![cg.weight];
                layer.extend(cg.bias);
                grads.push(layer);
                da
            } else {
                conv2d_backward_input(&g, conv, t.acts[i].shape())?
            };
            let dn = self.activation.backward(&t.normed[i], &da)?;
            let (mean, var) = &t.stats[i];
            let (dx, bg) =
                batch_norm_backward(&t.pre[i], &dn, self.bns()[i], mean, var, batch_dependent)?;
            if param_grads {
                let last = grads.last_mut().expect("pushed above");
                last.insert(0, bg.beta);
                last.insert(0, bg.gamma);
            }
            g = dx;
        }
        let grads = param_grads.then(|| grads.into_iter().rev().flatten().collect());
        Ok((g, grads))
    }

    fn jvp(&self, x: &Tensor<T>, v: &Tensor<T>) -> Result<Tensor<T>> {
        let t = self.trace(x, Pass::Eval)?;
        let mut tan = v.clone();
        for i in 0..3 {
            let bn = self.bns()[i];
            tan = batch_norm_frozen_jvp(&tan, bn, &bn.running_var)?;
            if self.activation == Activation::Relu {
                tan = relu_backward(&t.normed[i], &tan)?;
            }
            tan = conv2d_linear(&tan, self.convs()[i])?;
        }
        Ok(tan)
    }

    fn bn_layers(&self) -> usize {
        3
    }

    fn update_running(&mut self, stats: &[BnBatchStats<T>]) {
        for (bn, s) in [&mut self.bn1, &mut self.bn2, &mut self.bn3]
            .into_iter()
            .zip(stats)
        {
            bn.update_running(s);
        }
    }

    fn params(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        for (bn, conv) in self.bns().into_iter().zip(self.convs()) {
            out.push(bn.gamma.as_slice());
            out.push(bn.beta.as_slice());
            out.push(conv.weight.data());
            if let Some(b) = &conv.bias {
                out.push(b.as_slice());
            }
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for (bn, conv) in [
            (&mut self.bn1, &mut self.conv1),
            (&mut self.bn2, &mut self.conv2),
            (&mut self.bn3, &mut self.conv3),
        ] {
            out.push(bn.gamma.as_mut_slice());
            out.push(bn.beta.as_mut_slice());
            out.push(conv.weight.data_mut());
            if let Some(b) = &mut conv.bias {
                out.push(b.as_mut_slice());
            }
        }
        out
    }

    fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, conv) in self.convs().into_iter().enumerate() {
            let l = i + 1;
            out.push(format!("bn{l}.gamma"));
            out.push(format!("bn{l}.beta"));
            out.push(format!("conv{l}.weight"));
            if conv.bias.is_some() {
                out.push(format!("conv{l}.bias"));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn setup(seed: u64) -> (Bottleneck<f64>, Tensor<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = Bottleneck::<f64>::new(8, 4, &mut rng);
        let normal = Normal::new(0.0, 1.0).unwrap();
        for p in f.params_mut() {
            p.iter_mut()
                .for_each(|v| *v += 0.3 * normal.sample(&mut rng));
        }
        for bn in [&mut f.bn1, &mut f.bn2, &mut f.bn3] {
            bn.running_mean
                .iter_mut()
                .for_each(|v| *v = 0.2 * normal.sample(&mut rng));
            bn.running_var
                .iter_mut()
                .for_each(|v| *v = 0.5 + normal.sample(&mut rng).abs());
        }
        let x = Tensor::from_fn([3, 8, 4, 4], |_| normal.sample(&mut rng));
        (f, x)
    }

    #[test]
    fn shape_and_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = Bottleneck::<f32>::new(24, 4, &mut rng);
        assert_eq!(f.width(), 6);
        assert_eq!(f.conv1.kernel(), 1);
        assert_eq!(f.conv2.kernel(), 3);
        assert_eq!(f.conv3.kernel(), 1);
        assert_eq!(bottleneck_width(6, 4), 1);
        assert_eq!(f.params().len(), f.param_names().len());
    }

    #[test]
    fn zero_output_gives_zero_branch() {
        let (mut f, x) = setup(1);
        f.zero_output();
        let (y, stats) = f.forward(&x, Pass::Train).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert_eq!(stats.len(), 3);
    }

    #[test]
    fn train_backward_matches_finite_differences() {
        let (f, x) = setup(2);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let dy = Tensor::from_fn(x.shape(), |_| normal.sample(&mut rng));
        let loss = |f: &Bottleneck<f64>, x: &Tensor<f64>| {
            f.forward(x, Pass::Train).unwrap().0.dot(&dy).unwrap()
        };
        let (dx, grads) = f.backward(&x, Pass::Train, &dy, true).unwrap();
        let grads = grads.unwrap();
        let h = 1e-5;
        for i in (0..x.len()).step_by(7) {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (loss(&f, &xp) - loss(&f, &xm)) / (2.0 * h);
            assert!(
                (fd - dx.data()[i]).abs() < 1e-5 * fd.abs().max(1.0),
                "x[{i}]: {fd} vs {}",
                dx.data()[i]
            );
        }
        for (pi, g) in grads.iter().enumerate() {
            for j in (0..g.len()).step_by(3) {
                let mut fp = f.clone();
                fp.params_mut()[pi][j] += h;
                let mut fm = f.clone();
                fm.params_mut()[pi][j] -= h;
                let fd = (loss(&fp, &x) - loss(&fm, &x)) / (2.0 * h);
                assert!(
                    (fd - g[j]).abs() < 1e-5 * fd.abs().max(1.0),
                    "param {pi}[{j}]: {fd} vs {}",
                    g[j]
                );
            }
        }
    }

    #[test]
    fn eval_jvp_and_vjp_are_adjoint() {
        let (f, x) = setup(3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let v = Tensor::from_fn(x.shape(), |_| normal.sample(&mut rng));
        let u = Tensor::from_fn(x.shape(), |_| normal.sample(&mut rng));
        let jv = f.jvp(&x, &v).unwrap();
        let (ju, none) = f.backward(&x, Pass::Eval, &u, false).unwrap();
        assert!(none.is_none());
        let (lhs, rhs) = (jv.dot(&u).unwrap(), v.dot(&ju).unwrap());
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
        // and jvp is the derivative of the eval map
        let h = 1e-6;
        let fp = f
            .forward(&x.add(&v.scale(h)).unwrap(), Pass::Eval)
            .unwrap()
            .0;
        let fm = f
            .forward(&x.sub(&v.scale(h)).unwrap(), Pass::Eval)
            .unwrap()
            .0;
        let fd = fp.sub(&fm).unwrap().scale(0.5 / h);
        assert!(crate::tensor::relative_error(&fd, &jv) < 1e-6);
    }
}
