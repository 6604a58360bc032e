use log::warn;

use crate::error::{Error, Result};
use crate::network::{Features, InverseMode, Mode, Network};
use crate::tensor::{Scalar, Tensor};

/// Relative round-trip errors `||x - Phi^-1 Phi x|| / ||x||` of a sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionReport {
    /// Mean over the samples that have a nonzero norm.
    pub epsilon: f64,
    /// Per-sample error, `None` for skipped zero-norm samples.
    pub per_sample: Vec<Option<f64>>,
    pub skipped: usize,
}

/// Round-trips `x` through the eval-mode network in chunks of `batch`
/// samples and averages the per-sample relative errors (accumulated in f64).
pub fn reconstruction_error<T: Scalar>(
    net: &Network<T>,
    x: &Tensor<T>,
    batch: usize,
) -> Result<ReconstructionReport> {
    if x.batch() == 0 {
        return Err(Error::EmptyInput("reconstruction_error"));
    }
    let batch = batch.max(1);
    let mut per_sample = Vec::with_capacity(x.batch());
    for start in (0..x.batch()).step_by(batch) {
        let idx: Vec<usize> = (start..(start + batch).min(x.batch())).collect();
        let chunk = x.select(&idx);
        let (feats, _) = net.forward(&chunk, Mode::Eval, &[])?;
        let back = net.inverse(&feats, InverseMode::Eval)?;
        for i in 0..chunk.batch() {
            let (a, b) = (chunk.sample_slice(i), back.sample_slice(i));
            let norm = a.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt();
            if norm == 0.0 {
                per_sample.push(None);
                continue;
            }
            let diff = a
                .iter()
                .zip(b)
                .map(|(p, q)| (p.as_f64() - q.as_f64()).powi(2))
                .sum::<f64>()
                .sqrt();
            per_sample.push(Some(diff / norm));
        }
    }
    let kept: Vec<f64> = per_sample.iter().flatten().copied().collect();
    let skipped = per_sample.len() - kept.len();
    if skipped > 0 {
        warn!("reconstruction_error: skipped {skipped} zero-norm sample(s)");
    }
    if kept.is_empty() {
        return Err(Error::InvalidArgument("every sample has zero norm".into()));
    }
    Ok(ReconstructionReport {
        epsilon: kept.iter().sum::<f64>() / kept.len() as f64,
        per_sample,
        skipped,
    })
}

/// Decoded points of the feature-space path between two inputs.
#[derive(Debug, Clone)]
pub struct InterpolationResult<T: Scalar> {
    pub t_values: Vec<f64>,
    /// One `(1, C, H, W)` image per `t`.
    pub images: Vec<Tensor<T>>,
}

/// Decodes `phi_t = t * Phi x0 + (1 - t) * Phi x1` for each `t`, so `t = 1`
/// returns `x0` and `t = 0` returns `x1`. `x0` and `x1` are single samples.
pub fn interpolate<T: Scalar>(
    net: &Network<T>,
    x0: &Tensor<T>,
    x1: &Tensor<T>,
    t_values: &[f64],
) -> Result<InterpolationResult<T>> {
    x0.check_same(x1, "interpolate")?;
    if x0.batch() != 1 {
        return Err(Error::InvalidArgument(format!(
            "interpolate takes single samples, got batch {}",
            x0.batch()
        )));
    }
    if let Some(t) = t_values.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::InvalidArgument(format!(
            "interpolation weight {t} outside [0, 1]"
        )));
    }
    let (f0, _) = net.forward(x0, Mode::Eval, &[])?;
    let (f1, _) = net.forward(x1, Mode::Eval, &[])?;
    let images = t_values
        .iter()
        .map(|&t| {
            let merged = f0.merged.zip_map(&f1.merged, "interpolate", |a, b| {
                T::from_f64_lossy(t * a.as_f64() + (1.0 - t) * b.as_f64())
            })?;
            net.inverse(&Features::from_merged(merged)?, InverseMode::Eval)
        })
        .collect::<Result<_>>()?;
    Ok(InterpolationResult {
        t_values: t_values.to_vec(),
        images,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetConfig;
    use crate::tensor::relative_error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Uniform};

    fn uniform<T: Scalar>(shape: [usize; 4], seed: u64) -> Tensor<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = Uniform::new(0.0, 1.0).unwrap();
        Tensor::from_fn(shape, |_| T::from_f64_lossy(u.sample(&mut rng)))
    }

    #[test]
    fn permutation_network_round_trips_exactly() {
        let mut net = Network::<f32>::build(NetConfig::tiny_b(), 0).unwrap();
        net.zero_residuals();
        let x = uniform::<f32>([4, 3, 32, 32], 1);
        let r = reconstruction_error(&net, &x, 3).unwrap();
        assert_eq!(r.epsilon, 0.0);
        assert_eq!(r.per_sample.len(), 4);
    }

    #[test]
    fn untrained_tiny_b_inverts_to_f32_precision() {
        let net = Network::<f32>::build(NetConfig::tiny_b(), 2).unwrap();
        let x = uniform::<f32>([8, 3, 32, 32], 3);
        let r = reconstruction_error(&net, &x, 8).unwrap();
        assert!(r.epsilon <= 1e-5, "{}", r.epsilon);
    }

    #[test]
    fn zero_sample_is_skipped() {
        let net = Network::<f64>::build(NetConfig::tiny_b(), 4).unwrap();
        let mut x = uniform::<f64>([3, 3, 32, 32], 5);
        let len = x.sample_len();
        x.data_mut()[len..2 * len].iter_mut().for_each(|v| *v = 0.0);
        let r = reconstruction_error(&net, &x, 2).unwrap();
        assert_eq!(r.skipped, 1);
        assert!(r.per_sample[1].is_none());
        assert!(r.epsilon <= 1e-12);
        assert!(reconstruction_error(&net, &Tensor::<f64>::zeros([1, 3, 32, 32]), 1).is_err());
    }

    #[test]
    fn endpoints_and_linear_path() {
        let net = Network::<f32>::build(NetConfig::tiny_b(), 6).unwrap();
        let x0 = uniform::<f32>([1, 3, 32, 32], 7);
        let x1 = uniform::<f32>([1, 3, 32, 32], 8);
        let r = interpolate(&net, &x0, &x1, &[0.0, 0.5, 1.0]).unwrap();
        assert!(relative_error(&r.images[2], &x0) <= 1e-5);
        assert!(relative_error(&r.images[0], &x1) <= 1e-5);

        let mut lin = Network::<f64>::build(NetConfig::tiny_b(), 6).unwrap();
        lin.zero_residuals();
        let (a, b) = (x0.cast::<f64>(), x1.cast::<f64>());
        let r = interpolate(&lin, &a, &b, &[0.25]).unwrap();
        let expected = a.zip_map(&b, "lerp", |p, q| 0.25 * p + 0.75 * q).unwrap();
        assert!(r.images[0].bitwise_eq(&expected));
    }

    #[test]
    fn rejects_weights_outside_unit_interval() {
        let net = Network::<f64>::build(NetConfig::tiny_b(), 9).unwrap();
        let x = uniform::<f64>([1, 3, 32, 32], 10);
        assert!(interpolate(&net, &x, &x, &[1.5]).is_err());
    }
}
