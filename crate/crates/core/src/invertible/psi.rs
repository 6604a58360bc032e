//! Invertible space-to-depth downsampling.
//!
//! Pixel `(c, y, x)` moves to channel `c * f^2 + (y % f) * f + (x % f)` at
//! position `(y / f, x / f)`, so the `f x f` siblings of one block land in
//! adjacent channels.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// `(N, C, H, W) -> (N, C f^2, H / f, W / f)`.
pub fn psi_downsample<T: Scalar>(x: &Tensor<T>, f: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.shape();
    if f == 0 || h % f != 0 || w % f != 0 {
        return Err(Error::Divisibility { h, w, factor: f });
    }
    if f == 1 {
        return Ok(x.clone());
    }
    let (ho, wo) = (h / f, w / f);
    let mut out = Tensor::zeros([n, c * f * f, ho, wo]);
    let src = x.data();
    let dst = out.data_mut();
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h {
                let row = &src[((ni * c + ci) * h + y) * w..((ni * c + ci) * h + y + 1) * w];
                for (xi, &v) in row.iter().enumerate() {
                    let co = ci * f * f + (y % f) * f + xi % f;
                    dst[((ni * c * f * f + co) * ho + y / f) * wo + xi / f] = v;
                }
            }
        }
    }
    Ok(out)
}

/// Exact inverse of [`psi_downsample`].
pub fn psi_inverse<T: Scalar>(y: &Tensor<T>, f: usize) -> Result<Tensor<T>> {
    let [n, cf, ho, wo] = y.shape();
    if f == 0 || cf % (f * f) != 0 {
        return Err(Error::ChannelDivisibility {
            channels: cf,
            divisor: f * f,
        });
    }
    if f == 1 {
        return Ok(y.clone());
    }
    let c = cf / (f * f);
    let (h, w) = (ho * f, wo * f);
    let mut out = Tensor::zeros([n, c, h, w]);
    let src = y.data();
    let dst = out.data_mut();
    for ni in 0..n {
        for ci in 0..c {
            for yy in 0..h {
                let row = &mut dst[((ni * c + ci) * h + yy) * w..((ni * c + ci) * h + yy + 1) * w];
                for (xi, v) in row.iter_mut().enumerate() {
                    let co = ci * f * f + (yy % f) * f + xi % f;
                    *v = src[((ni * cf + co) * ho + yy / f) * wo + xi / f];
                }
            }
        }
    }
    Ok(out)
}
