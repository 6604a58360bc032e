use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::derivative::{jvp, vjp};
use super::linalg::{dot, orthonormalize, symmetric_eigen};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::tensor::{matmul, Scalar, Tensor};

/// Largest input for which the explicit Jacobian is formed.
pub const FULL_JACOBIAN_MAX_DIM: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SpectrumMethod {
    FullJacobian,
    PowerIteration { k: usize, iters: usize, tol: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    /// Nonincreasing, nonnegative.
    pub singular_values: Vec<f64>,
    /// Cumulative fraction of `sum sigma_i^2`. Exact for the full method;
    /// for the top-k method the total is bounded above by
    /// `sum_{i<k} sigma_i^2 + (n - k) sigma_k^2`, so the values are lower
    /// bounds.
    pub energy_cdf: Vec<f64>,
    pub energy_is_lower_bound: bool,
    pub method: SpectrumMethod,
    pub converged: bool,
    /// Power iterations actually run (0 for the full method).
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumOptions {
    pub k: usize,
    pub max_iters: usize,
    /// Relative change of a Ritz value between iterations below which it is
    /// locked.
    pub tol: f64,
    /// Extra vectors carried in the block to speed up convergence.
    pub oversample: usize,
    pub seed: u64,
    /// Depth of the truncation `Phi_j`, default the full network.
    pub depth: Option<usize>,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        Self {
            k: 10,
            max_iters: 500,
            tol: 1e-7,
            oversample: 5,
            seed: 0,
            depth: None,
        }
    }
}

fn single_sample<T: Scalar>(
    net: &Network<T>,
    x: &Tensor<T>,
    depth: Option<usize>,
) -> Result<(Network<f64>, Tensor<f64>, usize)> {
    if x.batch() != 1 {
        return Err(Error::InvalidArgument(format!(
            "spectrum takes a single sample, got batch {}",
            x.batch()
        )));
    }
    let depth = depth.unwrap_or(net.depth());
    Ok((net.cast::<f64>(), x.cast::<f64>(), depth))
}

/// Top-`k` singular values of `dPhi_x` (eval mode, f64) by block power
/// iteration on `v -> J^T J v` with Rayleigh-Ritz extraction. Converged
/// leading vectors are locked and the remaining block is kept orthogonal to
/// them.
pub fn jacobian_spectrum<T: Scalar>(
    net: &Network<T>,
    x: &Tensor<T>,
    opts: &SpectrumOptions,
) -> Result<SpectrumReport> {
    let (net, x, depth) = single_sample(net, x, opts.depth)?;
    let n = x.len();
    if opts.k == 0 || opts.k > n {
        return Err(Error::InvalidArgument(format!(
            "k = {} must be in 1..={n}",
            opts.k
        )));
    }
    let shape = x.shape();
    let apply = |v: &[f64]| -> Result<Vec<f64>> {
        let v = Tensor::from_vec(shape, v.to_vec())?;
        let (_, jv) = jvp(&net, &x, &v, depth)?;
        Ok(vjp(&net, &x, &jv, depth)?.into_vec())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let width = (opts.k + opts.oversample).min(n);
    let start = (0..width)
        .map(|_| (0..n).map(|_| normal.sample(&mut rng)).collect())
        .collect();
    let mut block: Vec<Vec<f64>> = orthonormalize(start, &[]);
    let mut locked: Vec<Vec<f64>> = Vec::new();
    let mut locked_vals: Vec<f64> = Vec::new();
    let mut prev: Vec<f64> = Vec::new();
    let mut iterations = 0;

    while iterations < opts.max_iters && locked.len() < opts.k {
        iterations += 1;
        let images: Vec<Vec<f64>> = block.iter().map(|q| apply(q)).collect::<Result<_>>()?;
        let b = block.len();
        let mut h = vec![0.0; b * b];
        for i in 0..b {
            for j in 0..b {
                h[i * b + j] = dot(&block[i], &images[j]);
            }
        }
        let (vals, s) = symmetric_eigen(&h, b);
        let rotate = |basis: &[Vec<f64>]| -> Vec<Vec<f64>> {
            (0..b)
                .map(|c| {
                    let mut out = vec![0.0; n];
                    for (r, v) in basis.iter().enumerate() {
                        let w = s[r * b + c];
                        out.iter_mut().zip(v).for_each(|(o, x)| *o += w * x);
                    }
                    out
                })
                .collect()
        };
        let ritz = rotate(&block);
        let next = rotate(&images);

        let wanted = opts.k - locked.len();
        let mut newly = 0;
        while newly < wanted.min(b) && newly < prev.len() {
            let (now, before) = (vals[newly], prev[newly]);
            if (now - before).abs() <= opts.tol * now.abs().max(f64::MIN_POSITIVE) {
                newly += 1;
            } else {
                break;
            }
        }
        for (vec, val) in ritz.into_iter().zip(&vals).take(newly) {
            locked.push(vec);
            locked_vals.push(*val);
        }
        prev = vals[newly..].to_vec();
        // the power step: continue from J^T J applied to the unlocked Ritz vectors
        let mut rest = orthonormalize(next.into_iter().skip(newly).collect(), &locked);
        // refill vectors lost to rank deficiency so the block keeps its width
        while rest.len() + locked.len() < width {
            let fresh: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
            let basis: Vec<Vec<f64>> = locked.iter().chain(rest.iter()).cloned().collect();
            rest.extend(orthonormalize(vec![fresh], &basis));
        }
        block = rest;
    }

    let converged = locked.len() >= opts.k;
    let mut values = locked_vals;
    values.extend(prev.iter().take(opts.k - values.len().min(opts.k)));
    values.truncate(opts.k);
    let mut singular_values: Vec<f64> = values.iter().map(|v| v.max(0.0).sqrt()).collect();
    singular_values.sort_by(|a, b| b.total_cmp(a));
    let squares: Vec<f64> = singular_values.iter().map(|s| s * s).collect();
    let tail = (n - opts.k) as f64 * squares.last().copied().unwrap_or(0.0);
    let energy_cdf = cumulative(&squares, squares.iter().sum::<f64>() + tail);
    Ok(SpectrumReport {
        singular_values,
        energy_cdf,
        energy_is_lower_bound: opts.k < n,
        method: SpectrumMethod::PowerIteration {
            k: opts.k,
            iters: opts.max_iters,
            tol: opts.tol,
        },
        converged,
        iterations,
    })
}

/// All singular values from the explicit Jacobian (one jvp per input
/// coordinate) and a Jacobi eigen-solve of `J^T J`. Limited to inputs of at
/// most [`FULL_JACOBIAN_MAX_DIM`] coordinates.
pub fn full_jacobian_spectrum<T: Scalar>(
    net: &Network<T>,
    x: &Tensor<T>,
    depth: Option<usize>,
) -> Result<SpectrumReport> {
    let (net, x, depth) = single_sample(net, x, depth)?;
    let n = x.len();
    if n > FULL_JACOBIAN_MAX_DIM {
        return Err(Error::InvalidArgument(format!(
            "explicit Jacobian limited to {FULL_JACOBIAN_MAX_DIM} input dims, got {n}"
        )));
    }
    // columns of J, stored as rows of J^T (n x m)
    let mut jt = Vec::new();
    let mut m = 0;
    for i in 0..n {
        let mut e = Tensor::zeros(x.shape());
        e.data_mut()[i] = 1.0;
        let (_, col) = jvp(&net, &x, &e, depth)?;
        m = col.len();
        jt.extend_from_slice(col.data());
    }
    let mut j = vec![0.0; m * n];
    for r in 0..n {
        for c in 0..m {
            j[c * n + r] = jt[r * m + c];
        }
    }
    let gram = matmul(n, m, n, &jt, &j);
    let (vals, _) = symmetric_eigen(&gram, n);
    let singular_values: Vec<f64> = vals.iter().map(|v| v.max(0.0).sqrt()).collect();
    let squares: Vec<f64> = singular_values.iter().map(|s| s * s).collect();
    let energy_cdf = cumulative(&squares, squares.iter().sum());
    Ok(SpectrumReport {
        singular_values,
        energy_cdf,
        energy_is_lower_bound: false,
        method: SpectrumMethod::FullJacobian,
        converged: true,
        iterations: 0,
    })
}

fn cumulative(squares: &[f64], total: f64) -> Vec<f64> {
    let mut acc = 0.0;
    squares
        .iter()
        .map(|s| {
            acc += s;
            if total > 0.0 {
                acc / total
            } else {
                0.0
            }
        })
        .collect()
}
