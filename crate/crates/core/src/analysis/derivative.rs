use crate::error::{Error, Result};
use crate::invertible::{channel_merge, channel_split, SplitPair};
use crate::network::Network;
use crate::tensor::{Scalar, Tensor};

fn check_depth<T: Scalar>(net: &Network<T>, depth: usize) -> Result<()> {
    if depth > net.depth() {
        return Err(Error::InvalidArgument(format!(
            "depth {depth} exceeds network depth {}",
            net.depth()
        )));
    }
    Ok(())
}

/// Forward-mode derivative of the eval-mode truncation `Phi_depth` at `x` in
/// direction `v`. Returns `(Phi_depth x, dPhi_depth[x] v)`, both merged.
pub fn jvp<T: Scalar>(
    net: &Network<T>,
    x: &Tensor<T>,
    v: &Tensor<T>,
    depth: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    check_depth(net, depth)?;
    x.check_same(v, "jvp")?;
    let mut p = channel_split(&net.split_input(x)?)?;
    let mut t = channel_split(&net.split_input(v)?)?;
    for block in &net.blocks[..depth] {
        (p, t) = block.jvp(&p, &t)?;
    }
    Ok((channel_merge(&p)?, channel_merge(&t)?))
}

/// Reverse-mode derivative: `dPhi_depth[x]^T u` for a merged cotangent `u`
/// shaped like `Phi_depth x`.
pub fn vjp<T: Scalar>(
    net: &Network<T>,
    x: &Tensor<T>,
    u: &Tensor<T>,
    depth: usize,
) -> Result<Tensor<T>> {
    check_depth(net, depth)?;
    let mut inputs: Vec<SplitPair<T>> = Vec::with_capacity(depth);
    let mut p = channel_split(&net.split_input(x)?)?;
    for block in &net.blocks[..depth] {
        let (next, _) = block.forward(&p, crate::invertible::Pass::Eval)?;
        inputs.push(std::mem::replace(&mut p, next));
    }
    let merged_shape = channel_merge(&p)?.shape();
    if u.shape() != merged_shape {
        return Err(Error::shape("vjp", &u.shape(), &merged_shape));
    }
    let mut g = channel_split(u)?;
    for (block, input) in net.blocks[..depth].iter().zip(&inputs).rev() {
        g = block.vjp(input, &g)?;
    }
    net.split_input_adjoint(&channel_merge(&g)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{NetConfig, SplitKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn small(split: SplitKind) -> Network<f64> {
        let cfg = NetConfig::with_schedule([3, 8, 8], split, 3, &[2], 4);
        Network::build(cfg, 11).unwrap()
    }

    fn randn(shape: [usize; 4], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        Tensor::from_fn(shape, |_| normal.sample(&mut rng))
    }

    #[test]
    fn adjoint_identity_at_every_depth() {
        for split in [
            SplitKind::Bijective { factor: 2 },
            SplitKind::Injective {
                factor: 2,
                pad_to: 16,
            },
        ] {
            let net = small(split);
            let x = randn([1, 3, 8, 8], 1);
            let v = randn([1, 3, 8, 8], 2);
            for depth in 0..=net.depth() {
                let (y, jv) = jvp(&net, &x, &v, depth).unwrap();
                let u = randn(y.shape(), 3 + depth as u64);
                let jtu = vjp(&net, &x, &u, depth).unwrap();
                let (a, b) = (jv.dot(&u).unwrap(), v.dot(&jtu).unwrap());
                assert!(
                    (a - b).abs() <= 1e-10 * a.abs().max(b.abs()),
                    "depth {depth}: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn taylor_remainder_is_second_order() {
        let net = small(SplitKind::Bijective { factor: 2 });
        let x = randn([1, 3, 8, 8], 4);
        let v = randn([1, 3, 8, 8], 5);
        let (y0, jv) = jvp(&net, &x, &v, net.depth()).unwrap();
        let remainder = |h: f64| {
            let xh = x.add(&v.scale(h)).unwrap();
            let (yh, _) = jvp(&net, &xh, &v, net.depth()).unwrap();
            yh.sub(&y0).unwrap().sub(&jv.scale(h)).unwrap().norm() / h
        };
        let (r3, r4) = (remainder(1e-3), remainder(1e-4));
        assert!(r4 < r3 / 5.0, "{r3} -> {r4}");
    }

    #[test]
    fn permutation_network_is_linear() {
        let mut net = small(SplitKind::Bijective { factor: 2 });
        net.zero_residuals();
        let x = randn([1, 3, 8, 8], 6);
        let v = randn([1, 3, 8, 8], 7);
        let (_, jv) = jvp(&net, &x, &v, net.depth()).unwrap();
        let (phi_v, _) = jvp(&net, &v, &v, net.depth()).unwrap();
        let (phi_0, _) = jvp(&net, &Tensor::zeros(v.shape()), &v, net.depth()).unwrap();
        assert!(jv.bitwise_eq(&phi_v.sub(&phi_0).unwrap()));
    }

    #[test]
    fn depth_out_of_range() {
        let net = small(SplitKind::Bijective { factor: 2 });
        let x = randn([1, 3, 8, 8], 8);
        assert!(jvp(&net, &x, &x, 4).is_err());
        assert!(vjp(&net, &x, &x, 9).is_err());
    }
}
