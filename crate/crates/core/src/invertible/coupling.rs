//! The additive coupling block and its exact inverse.
//!
//! Forward: `x_{j+1} = S x~_j`, `x~_{j+1} = S x_j + F(S x~_j)`.
//! Inverse: `S x~_j = x_{j+1}`, `S x_j = x~_{j+1} - F(x_{j+1})`, then undo `S`.
//!
//! `S` is either the identity or the space-to-depth permutation; at a
//! downsampling block it acts on both streams so the pair keeps equal shapes.
//! `F` is only ever evaluated forward, so the block is invertible for any `F`.

use crate::error::{Error, Result};
use crate::nn::BnBatchStats;
use crate::tensor::{Scalar, Tensor};

use super::psi::{psi_downsample, psi_inverse};
use super::split::SplitPair;

/// How batch-norm layers inside a residual branch get their statistics.
#[derive(Debug, Clone, Copy)]
pub enum Pass<'a, T> {
    /// Minibatch statistics, captured and returned.
    Train,
    /// Running statistics.
    Eval,
    /// Statistics captured by an earlier train pass, one entry per BN layer.
    Replay(&'a [BnBatchStats<T>]),
}

/// A residual branch `F` usable inside a coupling block.
pub trait Residual<T: Scalar> {
    /// Evaluates `F(x)`; in [`Pass::Train`] returns the captured statistics.
    fn forward(
        &self,
        x: &Tensor<T>,
        pass: Pass<'_, T>,
    ) -> Result<(Tensor<T>, Vec<BnBatchStats<T>>)>;

    /// Gradient of `<F(x), dy>` with respect to `x` and, when requested, the
    /// parameters (in [`Residual::params`] order).
    ///
    /// Under [`Pass::Train`] or [`Pass::Replay`] batch statistics are treated
    /// as functions of the minibatch; under [`Pass::Eval`] they are constants.
    fn backward(
        &self,
        x: &Tensor<T>,
        pass: Pass<'_, T>,
        dy: &Tensor<T>,
        param_grads: bool,
    ) -> Result<(Tensor<T>, Option<Vec<Vec<T>>>)>;

    /// Directional derivative of the eval-mode branch at `x` along `v`.
    fn jvp(&self, x: &Tensor<T>, v: &Tensor<T>) -> Result<Tensor<T>>;

    /// Number of batch-norm layers (length of the captured statistics).
    fn bn_layers(&self) -> usize;

    fn update_running(&mut self, stats: &[BnBatchStats<T>]);

    fn params(&self) -> Vec<&[T]>;
    fn params_mut(&mut self) -> Vec<&mut [T]>;
    fn param_names(&self) -> Vec<String>;
}

/// One coupling block: the branch `F` plus the optional downsampling factor.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingBlock<F> {
    pub residual: F,
    pub downsample: Option<usize>,
}

impl<F> CouplingBlock<F> {
    pub fn new(residual: F, downsample: Option<usize>) -> Self {
        Self {
            residual,
            downsample,
        }
    }

    fn apply_s<T: Scalar>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self.downsample {
            Some(f) => psi_downsample(x, f),
            None => Ok(x.clone()),
        }
    }

    fn undo_s<T: Scalar>(&self, x: Tensor<T>) -> Result<Tensor<T>> {
        match self.downsample {
            Some(f) => psi_inverse(&x, f),
            None => Ok(x),
        }
    }
}

impl<F> CouplingBlock<F> {
    /// Runs the block forward. Train mode returns the captured BN statistics
    /// needed to replay this exact pass during inversion.
    pub fn forward<T: Scalar>(
        &self,
        p: &SplitPair<T>,
        pass: Pass<'_, T>,
    ) -> Result<(SplitPair<T>, Vec<BnBatchStats<T>>)>
    where
        F: Residual<T>,
    {
        let a = self.apply_s(&p.left)?;
        let b = self.apply_s(&p.right)?;
        let (fb, stats) = self.residual.forward(&b, pass)?;
        if fb.shape() != a.shape() {
            return Err(Error::shape("coupling residual", &fb.shape(), &a.shape()));
        }
        let mut right = a;
        right.add_assign(&fb)?;
        Ok((SplitPair { left: b, right }, stats))
    }

    /// Recovers the block input from its output. Reproducing a train-mode
    /// pass requires [`Pass::Replay`] with the statistics it captured.
    pub fn inverse<T: Scalar>(&self, q: &SplitPair<T>, pass: Pass<'_, T>) -> Result<SplitPair<T>>
    where
        F: Residual<T>,
    {
        self.check_pass(pass)?;
        let (fb, _) = self.residual.forward(&q.left, pass)?;
        let a = q.right.sub(&fb)?;
        Ok(SplitPair {
            left: self.undo_s(a)?,
            right: self.undo_s(q.left.clone())?,
        })
    }

    fn check_pass<T: Scalar>(&self, pass: Pass<'_, T>) -> Result<()>
    where
        F: Residual<T>,
    {
        let needed = self.residual.bn_layers();
        match pass {
            Pass::Train if needed > 0 => Err(Error::MissingReplay(
                "inverting a train-mode pass needs the captured statistics".into(),
            )),
            Pass::Replay(s) if s.len() != needed => Err(Error::MissingReplay(format!(
                "block expects {needed} statistics entries, got {}",
                s.len()
            ))),
            _ => Ok(()),
        }
    }

    /// Back-propagates `dout` through the block whose input was `input`.
    ///
    /// Returns the gradient with respect to the input pair and the residual
    /// branch's parameter gradients.
    pub fn backward<T: Scalar>(
        &self,
        input: &SplitPair<T>,
        pass: Pass<'_, T>,
        dout: &SplitPair<T>,
    ) -> Result<(SplitPair<T>, Vec<Vec<T>>)>
    where
        F: Residual<T>,
    {
        let b = self.apply_s(&input.right)?;
        let (db_f, grads) = self.residual.backward(&b, pass, &dout.right, true)?;
        let mut db = dout.left.clone();
        db.add_assign(&db_f)?;
        // S is a permutation, so its adjoint is its inverse
        let da = self.undo_s(dout.right.clone())?;
        let db = self.undo_s(db)?;
        Ok((
            SplitPair {
                left: da,
                right: db,
            },
            grads.unwrap_or_default(),
        ))
    }

    /// Forward-mode derivative of the eval-mode block: returns the output pair
    /// and the pushed-forward tangent.
    pub fn jvp<T: Scalar>(
        &self,
        p: &SplitPair<T>,
        v: &SplitPair<T>,
    ) -> Result<(SplitPair<T>, SplitPair<T>)>
    where
        F: Residual<T>,
    {
        let (out, _) = self.forward(p, Pass::Eval)?;
        let vb = self.apply_s(&v.right)?;
        let mut va = self.apply_s(&v.left)?;
        va.add_assign(&self.residual.jvp(&out.left, &vb)?)?;
        Ok((
            out,
            SplitPair {
                left: vb,
                right: va,
            },
        ))
    }

    /// Reverse-mode derivative of the eval-mode block at input `p`.
    pub fn vjp<T: Scalar>(&self, p: &SplitPair<T>, u: &SplitPair<T>) -> Result<SplitPair<T>>
    where
        F: Residual<T>,
    {
        let b = self.apply_s(&p.right)?;
        let (db_f, _) = self.residual.backward(&b, Pass::Eval, &u.right, false)?;
        let mut db = u.left.clone();
        db.add_assign(&db_f)?;
        Ok(SplitPair {
            left: self.undo_s(u.right.clone())?,
            right: self.undo_s(db)?,
        })
    }
}
