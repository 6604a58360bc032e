//! Measurements on a (trained or untrained) network: round-trip error,
//! Jacobian spectra, feature-space interpolation, and linear / 1-NN probes
//! of intermediate representations. Nothing here mutates the network.

mod derivative;
pub mod linalg;
mod probe;
mod reconstruction;
mod spectrum;

pub use derivative::{jvp, vjp};
pub use probe::{
    depth_probe, extract_features, nearest_neighbour, pca_probe, FeatureMatrix, LinearClassifier,
    PcaModel, PcaReport, PcaRow, ProbeConfig, ProbeReport, ProbeRow, Standardizer,
};
pub use reconstruction::{
    interpolate, reconstruction_error, InterpolationResult, ReconstructionReport,
};
pub use spectrum::{
    full_jacobian_spectrum, jacobian_spectrum, SpectrumMethod, SpectrumOptions, SpectrumReport,
    FULL_JACOBIAN_MAX_DIM,
};
