//! Same-padded, stride-1 2-D convolution via im2col + GEMM.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Weights `(C_out, C_in, k, k)` with `k` odd; padding is always `k / 2` so
/// the output keeps the input's spatial size. Stride is fixed at 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Option<Vec<T>>,
}

impl<T: Scalar> ConvParams<T> {
    pub fn new(weight: Tensor<T>, bias: Option<Vec<T>>) -> Result<Self> {
        let [c_out, _, kh, kw] = weight.shape();
        if kh != kw || kh % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "convolution kernel must be square with odd size, got {kh}x{kw}"
            )));
        }
        if let Some(b) = &bias {
            if b.len() != c_out {
                return Err(Error::shape("conv bias", &[c_out], &[b.len()]));
            }
        }
        Ok(Self { weight, bias })
    }

    pub fn cast<U: Scalar>(&self) -> ConvParams<U> {
        ConvParams {
            weight: self.weight.cast(),
            bias: self
                .bias
                .as_ref()
                .map(|b| b.iter().map(|x| U::from_f64_lossy(x.as_f64())).collect()),
        }
    }

    /// He-normal initialization: N(0, 2 / fan_in), no bias.
    pub fn he_normal(c_out: usize, c_in: usize, k: usize, rng: &mut impl Rng) -> Self {
        Self::he_normal_scaled(c_out, c_in, k, 1.0, rng)
    }

    /// He-normal weights with the standard deviation multiplied by `gain`.
    pub fn he_normal_scaled(
        c_out: usize,
        c_in: usize,
        k: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = (c_in * k * k) as f64;
        let normal = Normal::new(0.0, gain * (2.0 / fan_in).sqrt()).expect("positive std");
        let weight = Tensor::from_fn([c_out, c_in, k, k], |_| {
            T::from_f64_lossy(normal.sample(rng))
        });
        Self { weight, bias: None }
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn padding(&self) -> usize {
        self.kernel() / 2
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.channels() != self.c_in() {
            return Err(Error::shape("conv2d", &x.shape(), &self.weight.shape()));
        }
        Ok(())
    }
}

/// Gradients of a convolution's parameters.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub weight: Vec<T>,
    pub bias: Option<Vec<T>>,
}

/// Unfolds `x` into a `(C * k * k) x (N * H * W)` column matrix.
fn im2col<T: Scalar>(x: &Tensor<T>, k: usize) -> Vec<T> {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let cols = n * hw;
    let pad = (k / 2) as isize;
    let mut out = vec![T::zero(); c * k * k * cols];
    let src = x.data();
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut out[row * cols..(row + 1) * cols];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for ni in 0..n {
                    let plane = &src[(ni * c + ci) * hw..(ni * c + ci + 1) * hw];
                    let dst = &mut dst[ni * hw..(ni + 1) * hw];
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let srow = &plane[sy as usize * w..(sy as usize + 1) * w];
                        let drow = &mut dst[y * w..(y + 1) * w];
                        // valid output columns: 0 <= x + dx < w
                        let x0 = (-dx).max(0) as usize;
                        let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                        for xo in x0..x1 {
                            drow[xo] = srow[(xo as isize + dx) as usize];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back to an image.
fn col2im<T: Scalar>(col: &[T], shape: [usize; 4], k: usize) -> Tensor<T> {
    let [n, c, h, w] = shape;
    let hw = h * w;
    let cols = n * hw;
    let pad = (k / 2) as isize;
    let mut out = Tensor::zeros(shape);
    let dst_all = out.data_mut();
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * cols..(row + 1) * cols];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for ni in 0..n {
                    let src = &src[ni * hw..(ni + 1) * hw];
                    let plane = &mut dst_all[(ni * c + ci) * hw..(ni * c + ci + 1) * hw];
                    for y in 0..h {
                        let sy = y as isize + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let x0 = (-dx).max(0) as usize;
                        let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                        for xo in x0..x1 {
                            plane[sy as usize * w + (xo as isize + dx) as usize] += src[y * w + xo];
                        }
                    }
                }
            }
        }
    }
    out
}

/// `(C x N*HW)` matrix to an `(N, C, H, W)` tensor.
fn cols_to_nchw<T: Scalar>(m: &[T], n: usize, c: usize, h: usize, w: usize) -> Tensor<T> {
    let hw = h * w;
    let mut out = Tensor::zeros([n, c, h, w]);
    let dst = out.data_mut();
    for ci in 0..c {
        for ni in 0..n {
            dst[(ni * c + ci) * hw..(ni * c + ci + 1) * hw]
                .copy_from_slice(&m[ci * n * hw + ni * hw..ci * n * hw + (ni + 1) * hw]);
        }
    }
    out
}

fn nchw_to_cols<T: Scalar>(x: &Tensor<T>) -> Vec<T> {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let mut out = vec![T::zero(); x.len()];
    let src = x.data();
    for ni in 0..n {
        for ci in 0..c {
            out[ci * n * hw + ni * hw..ci * n * hw + (ni + 1) * hw]
                .copy_from_slice(&src[(ni * c + ci) * hw..(ni * c + ci + 1) * hw]);
        }
    }
    out
}

/// Same-padded convolution; output is `(N, C_out, H, W)`.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    conv2d_impl(x, p, true)
}

fn conv2d_impl<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>, with_bias: bool) -> Result<Tensor<T>> {
    p.check_input(x)?;
    let [n, _, h, w] = x.shape();
    let k = p.kernel();
    let c_out = p.c_out();
    let kk = p.c_in() * k * k;
    let cols = n * h * w;
    let col = im2col(x, k);
    let mut y = vec![T::zero(); c_out * cols];
    T::gemm(
        c_out,
        kk,
        cols,
        T::one(),
        p.weight.data(),
        (kk as isize, 1),
        &col,
        (cols as isize, 1),
        T::zero(),
        &mut y,
        (cols as isize, 1),
    );
    if with_bias {
        if let Some(b) = &p.bias {
            for (row, &bv) in y.chunks_mut(cols).zip(b) {
                row.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Ok(cols_to_nchw(&y, n, c_out, h, w))
}

/// Linear part of the convolution (bias ignored): the map's own derivative.
pub fn conv2d_linear<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    conv2d_impl(x, p, false)
}

/// Gradient with respect to the input only.
pub fn conv2d_backward_input<T: Scalar>(
    dy: &Tensor<T>,
    p: &ConvParams<T>,
    x_shape: [usize; 4],
) -> Result<Tensor<T>> {
    let [n, c_in, h, w] = x_shape;
    if dy.shape() != [n, p.c_out(), h, w] || c_in != p.c_in() {
        return Err(Error::shape("conv2d backward", &dy.shape(), &x_shape));
    }
    let k = p.kernel();
    let kk = c_in * k * k;
    let cols = n * h * w;
    let dyc = nchw_to_cols(dy);
    let mut dcol = vec![T::zero(); kk * cols];
    // dcol = W^T dy
    T::gemm(
        kk,
        p.c_out(),
        cols,
        T::one(),
        p.weight.data(),
        (1, kk as isize),
        &dyc,
        (cols as isize, 1),
        T::zero(),
        &mut dcol,
        (cols as isize, 1),
    );
    Ok(col2im(&dcol, x_shape, k))
}

/// Gradients with respect to input, weight and bias.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    dy: &Tensor<T>,
    p: &ConvParams<T>,
) -> Result<(Tensor<T>, ConvGrads<T>)> {
    p.check_input(x)?;
    let [n, c_in, h, w] = x.shape();
    let c_out = p.c_out();
    if dy.shape() != [n, c_out, h, w] {
        return Err(Error::shape(
            "conv2d backward",
            &dy.shape(),
            &[n, c_out, h, w],
        ));
    }
    let k = p.kernel();
    let kk = c_in * k * k;
    let cols = n * h * w;
    let col = im2col(x, k);
    let dyc = nchw_to_cols(dy);

    let mut dw = vec![T::zero(); c_out * kk];
    // dW = dy col^T
    T::gemm(
        c_out,
        cols,
        kk,
        T::one(),
        &dyc,
        (cols as isize, 1),
        &col,
        (1, cols as isize),
        T::zero(),
        &mut dw,
        (kk as isize, 1),
    );
    let db = p.bias.as_ref().map(|_| {
        dyc.chunks(cols)
            .map(|row| T::from_f64_lossy(row.iter().map(|v| v.as_f64()).sum()))
            .collect()
    });

    let mut dcol = col;
    T::gemm(
        kk,
        c_out,
        cols,
        T::one(),
        p.weight.data(),
        (1, kk as isize),
        &dyc,
        (cols as isize, 1),
        T::zero(),
        &mut dcol,
        (cols as isize, 1),
    );
    let dx = col2im(&dcol, x.shape(), k);
    Ok((
        dx,
        ConvGrads {
            weight: dw,
            bias: db,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::relative_error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct six-loop zero-padded convolution; independent of im2col/GEMM.
    fn conv_reference(x: &Tensor<f64>, p: &ConvParams<f64>) -> Tensor<f64> {
        let [n, c_in, h, w] = x.shape();
        let [c_out, _, k, _] = p.weight.shape();
        let pad = (k / 2) as isize;
        Tensor::from_fn([n, c_out, h, w], |[ni, co, y, xo]| {
            let mut acc = p.bias.as_ref().map_or(0.0, |b| b[co]);
            for ci in 0..c_in {
                for ky in 0..k {
                    for kx in 0..k {
                        let sy = y as isize + ky as isize - pad;
                        let sx = xo as isize + kx as isize - pad;
                        if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                            acc += p.weight.get([co, ci, ky, kx])
                                * x.get([ni, ci, sy as usize, sx as usize]);
                        }
                    }
                }
            }
            acc
        })
    }

    fn randn(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let normal = Normal::new(0.0, 1.0).unwrap();
        Tensor::from_fn(shape, |_| normal.sample(rng))
    }

    #[test]
    fn identity_1x1_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = randn([2, 3, 4, 5], &mut rng);
        let w = Tensor::from_fn([3, 3, 1, 1], |[o, i, _, _]| if o == i { 1.0 } else { 0.0 });
        let y = conv2d(&x, &ConvParams::new(w, Some(vec![0.0; 3])).unwrap()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn ones_kernel_counts_neighbours() {
        let x = Tensor::<f32>::full([1, 1, 3, 3], 1.0);
        let p = ConvParams::new(Tensor::full([1, 1, 3, 3], 1.0), None).unwrap();
        let y = conv2d(&x, &p).unwrap();
        assert_eq!(y.get([0, 0, 1, 1]), 9.0);
        for corner in [[0, 0, 0, 0], [0, 0, 0, 2], [0, 0, 2, 0], [0, 0, 2, 2]] {
            assert_eq!(y.get(corner), 4.0);
        }
        assert_eq!(y.get([0, 0, 0, 1]), 6.0);
    }

    #[test]
    fn matches_loop_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (shape, c_out, k) in [
            ([1, 2, 4, 4], 3, 3),
            ([3, 5, 6, 7], 4, 3),
            ([2, 4, 3, 3], 6, 1),
        ] {
            let x = randn(shape, &mut rng);
            let mut p = ConvParams::new(randn([c_out, shape[1], k, k], &mut rng), None).unwrap();
            p.bias = Some((0..c_out).map(|i| i as f64 * 0.5 - 1.0).collect());
            let fast = conv2d(&x, &p).unwrap();
            let slow = conv_reference(&x, &p);
            assert!(relative_error(&fast, &slow) <= 1e-12);
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn channel_mismatch_reports_both_shapes() {
        let x = Tensor::<f32>::zeros([1, 2, 4, 4]);
        let p = ConvParams::new(Tensor::zeros([3, 5, 3, 3]), None).unwrap();
        let msg = conv2d(&x, &p).unwrap_err().to_string();
        assert!(
            msg.contains("[1, 2, 4, 4]") && msg.contains("[3, 5, 3, 3]"),
            "{msg}"
        );
    }

    #[test]
    fn even_kernel_rejected() {
        assert!(ConvParams::<f32>::new(Tensor::zeros([1, 1, 2, 2]), None).is_err());
    }

    #[test]
    fn linear_in_input_without_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = randn([2, 3, 5, 5], &mut rng);
        let y = randn([2, 3, 5, 5], &mut rng);
        let p = ConvParams::new(randn([4, 3, 3, 3], &mut rng), None).unwrap();
        let (a, b) = (0.7, -1.3);
        let lhs = conv2d(&x.scale(a).add(&y.scale(b)).unwrap(), &p).unwrap();
        let rhs = conv2d(&x, &p)
            .unwrap()
            .scale(a)
            .add(&conv2d(&y, &p).unwrap().scale(b))
            .unwrap();
        assert!(relative_error(&lhs, &rhs) <= 1e-5);
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = randn([2, 3, 5, 4], &mut rng);
        let u = randn([2, 4, 5, 4], &mut rng);
        let mut p = ConvParams::new(randn([4, 3, 3, 3], &mut rng), None).unwrap();
        p.bias = Some(vec![0.0; 4]);
        // <conv(x), u> = <x, conv^T(u)>
        let lhs = conv2d(&x, &p).unwrap().dot(&u).unwrap();
        let (dx, grads) = conv2d_backward(&x, &u, &p).unwrap();
        let rhs = x.dot(&dx).unwrap();
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
        assert_eq!(dx, conv2d_backward_input(&u, &p, x.shape()).unwrap());
        // <conv_W(x), u> is linear in W, so <W, dW> recovers it
        let rhs_w: f64 = p
            .weight
            .data()
            .iter()
            .zip(&grads.weight)
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs_w).abs() <= 1e-10 * lhs.abs().max(1.0));
        let db = grads.bias.unwrap();
        for (co, g) in db.iter().enumerate() {
            let expected: f64 = (0..2)
                .flat_map(|n| (0..5).flat_map(move |y| (0..4).map(move |xx| [n, co, y, xx])))
                .map(|i| u.get(i))
                .sum();
            assert!((g - expected).abs() < 1e-12);
        }
    }
}
