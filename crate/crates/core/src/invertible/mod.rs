//! Invertibility primitives: space-to-depth permutation, channel split and
//! merge, injective zero padding, and the additive coupling block.

mod coupling;
mod psi;
mod split;

pub use coupling::{CouplingBlock, Pass, Residual};
pub use psi::{psi_downsample, psi_inverse};
pub(crate) use split::injective_pad_adjoint;
pub use split::{channel_merge, channel_split, injective_pad, pad_pseudo_inverse, SplitPair};
