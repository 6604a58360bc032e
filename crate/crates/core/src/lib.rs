//! Invertible coupling-layer convolutional networks.
//!
//! The network `Phi` is a cascade of additive coupling blocks interleaved
//! with space-to-depth permutations, so every intermediate representation
//! determines the input exactly. This crate provides:
//!
//! * [`tensor`] and [`nn`]: dense (N, C, H, W) tensors and the neural
//!   primitives with hand-written derivatives;
//! * [`invertible`]: the permutation / padding operators and the coupling
//!   block with its explicit inverse;
//! * [`network`]: the assembled network, its inverse and classifier head;
//! * [`training`]: cross-entropy, SGD with momentum, and two gradient
//!   routines, one storing block inputs and one recomputing them through the
//!   inverse so retained activations do not grow with depth;
//! * [`analysis`]: reconstruction error, Jacobian spectra, feature-space
//!   interpolation, depth probes and PCA probes;
//! * [`io`]: datasets, checkpoints, CSV reports and PPM/PGM images.

pub mod analysis;
pub mod error;
pub mod invertible;
pub mod io;
pub mod network;
pub mod nn;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use invertible::SplitPair;
pub use network::{Features, InverseMode, Mode, NetConfig, Network};
pub use tensor::{DType, Scalar, Tensor};
