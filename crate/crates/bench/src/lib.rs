//! Criterion benchmarks for the convolution kernel, the coupling block and
//! the two gradient routines; see `benches/kernels.rs`.
