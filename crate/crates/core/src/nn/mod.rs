//! Neural primitives: convolution, batch normalization, ReLU, pooling, and
//! the dense classifier layer.

mod conv;
mod norm;

pub use conv::{
    conv2d, conv2d_backward, conv2d_backward_input, conv2d_linear, ConvGrads, ConvParams,
};
pub use norm::{
    batch_norm, batch_norm_backward, batch_norm_frozen_jvp, batch_stats, BnBatchStats, BnGrads,
    BnMode, BnParams, DEFAULT_EPS, DEFAULT_MOMENTUM,
};

use crate::error::{Error, Result};
use crate::tensor::{matmul, Scalar, Tensor};

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes `dy` where `x > 0`; the derivative at exactly 0 is taken as 0.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    x.zip_map(dy, "relu backward", |xv, g| {
        if xv > T::zero() {
            g
        } else {
            T::zero()
        }
    })
}

/// Mean over the spatial axes: `(N, C, H, W) -> (N, C, 1, 1)`.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    if hw == 0 {
        return Err(Error::EmptyInput("global_avg_pool"));
    }
    let data = x
        .data()
        .chunks(hw)
        .map(|plane| T::from_f64_lossy(plane.iter().map(|v| v.as_f64()).sum::<f64>() / hw as f64))
        .collect();
    Tensor::from_vec([n, c, 1, 1], data)
}

pub fn global_avg_pool_backward<T: Scalar>(
    dy: &Tensor<T>,
    x_shape: [usize; 4],
) -> Result<Tensor<T>> {
    let [n, c, h, w] = x_shape;
    if dy.shape() != [n, c, 1, 1] {
        return Err(Error::shape(
            "global_avg_pool backward",
            &dy.shape(),
            &x_shape,
        ));
    }
    let hw = h * w;
    let inv = T::from_f64_lossy(1.0 / hw as f64);
    let mut data = Vec::with_capacity(n * c * hw);
    for &g in dy.data() {
        data.extend(std::iter::repeat_n(g * inv, hw));
    }
    Tensor::from_vec(x_shape, data)
}

/// Dense layer `y = W x + b` with `W` stored row-major as `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub in_dim: usize,
    pub out_dim: usize,
}

#[derive(Debug, Clone)]
pub struct LinearGrads<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: vec![T::zero(); in_dim * out_dim],
            bias: vec![T::zero(); out_dim],
            in_dim,
            out_dim,
        }
    }

    pub fn new(weight: Vec<T>, bias: Vec<T>, in_dim: usize, out_dim: usize) -> Result<Self> {
        if weight.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::shape(
                "linear",
                &[out_dim, in_dim],
                &[weight.len(), bias.len()],
            ));
        }
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    /// Applies the layer to `rows` samples stored contiguously in `x`.
    pub fn forward(&self, x: &[T], rows: usize) -> Result<Vec<T>> {
        linear(x, rows, &self.weight, &self.bias, self.in_dim, self.out_dim)
    }

    /// Returns `dx` and the parameter gradients (summed over rows).
    pub fn backward(&self, x: &[T], dy: &[T], rows: usize) -> Result<(Vec<T>, LinearGrads<T>)> {
        if x.len() != rows * self.in_dim || dy.len() != rows * self.out_dim {
            return Err(Error::shape(
                "linear backward",
                &[rows, self.in_dim],
                &[x.len(), dy.len()],
            ));
        }
        let dx = matmul(rows, self.out_dim, self.in_dim, dy, &self.weight);
        let mut dw = vec![T::zero(); self.out_dim * self.in_dim];
        T::gemm(
            self.out_dim,
            rows,
            self.in_dim,
            T::one(),
            dy,
            (1, self.out_dim as isize),
            x,
            (self.in_dim as isize, 1),
            T::zero(),
            &mut dw,
            (self.in_dim as isize, 1),
        );
        let db = (0..self.out_dim)
            .map(|k| T::from_f64_lossy((0..rows).map(|r| dy[r * self.out_dim + k].as_f64()).sum()))
            .collect();
        Ok((
            dx,
            LinearGrads {
                weight: dw,
                bias: db,
            },
        ))
    }
}

/// `y[r] = W x[r] + b` for each of `rows` samples.
pub fn linear<T: Scalar>(
    x: &[T],
    rows: usize,
    w: &[T],
    b: &[T],
    in_dim: usize,
    out_dim: usize,
) -> Result<Vec<T>> {
    if x.len() != rows * in_dim || w.len() != in_dim * out_dim || b.len() != out_dim {
        return Err(Error::shape(
            "linear",
            &[rows, in_dim, out_dim],
            &[x.len(), w.len(), b.len()],
        ));
    }
    let mut y: Vec<T> = (0..rows).flat_map(|_| b.iter().copied()).collect();
    T::gemm(
        rows,
        in_dim,
        out_dim,
        T::one(),
        x,
        (in_dim as isize, 1),
        w,
        (1, in_dim as isize),
        T::one(),
        &mut y,
        (out_dim as isize, 1),
    );
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn relu_examples() {
        let x = Tensor::<f32>::from_vec([1, 1, 1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        let y = relu(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        assert_eq!(relu(&y), y);
        let pos = Tensor::<f32>::from_vec([1, 1, 1, 3], vec![0.5, 0.0, 7.0]).unwrap();
        assert_eq!(relu(&pos), pos);
    }

    #[test]
    fn relu_gradient_is_zero_at_zero() {
        let x = Tensor::<f64>::from_vec([1, 1, 1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        let g = relu_backward(&x, &Tensor::full([1, 1, 1, 3], 1.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn pooling_examples() {
        let c = Tensor::<f64>::full([2, 3, 4, 5], 1.25);
        assert!(global_avg_pool(&c)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 1.25));
        let x = Tensor::<f64>::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(global_avg_pool(&x).unwrap().data(), &[2.5]);
        assert!(matches!(
            global_avg_pool(&Tensor::<f32>::zeros([1, 1, 0, 3])),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn pooling_matches_loop_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let x = Tensor::<f64>::from_fn([3, 4, 5, 6], |_| normal.sample(&mut rng));
        let y = global_avg_pool(&x).unwrap();
        for n in 0..3 {
            for c in 0..4 {
                let mut s = 0.0;
                for h in 0..5 {
                    for w in 0..6 {
                        s += x.get([n, c, h, w]);
                    }
                }
                assert!((y.get([n, c, 0, 0]) - s / 30.0).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn linear_examples() {
        let eye = Linear::new(vec![1.0f64, 0.0, 0.0, 1.0], vec![0.0, 0.0], 2, 2).unwrap();
        assert_eq!(
            eye.forward(&[3.0, -4.0, 1.0, 2.0], 2).unwrap(),
            vec![3.0, -4.0, 1.0, 2.0]
        );
        let zero = Linear::new(vec![0.0f64; 6], vec![1.5, -2.0], 3, 2).unwrap();
        assert_eq!(zero.forward(&[9.0, 8.0, 7.0], 1).unwrap(), vec![1.5, -2.0]);
        assert!(linear::<f32>(&[1.0; 3], 1, &[0.0; 4], &[0.0; 2], 2, 2).is_err());
    }

    #[test]
    fn linear_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let (rows, din, dout) = (4, 7, 3);
        let mut draw = |n: usize| {
            (0..n)
                .map(|_| normal.sample(&mut rng))
                .collect::<Vec<f64>>()
        };
        let (x, w, b) = (draw(rows * din), draw(din * dout), draw(dout));
        let y = linear(&x, rows, &w, &b, din, dout).unwrap();
        for r in 0..rows {
            for k in 0..dout {
                let mut s = b[k];
                for i in 0..din {
                    s += w[k * din + i] * x[r * din + i];
                }
                assert!((y[r * dout + k] - s).abs() <= 1e-6 * s.abs().max(1.0));
            }
        }
        let layer = Linear::new(w.clone(), b.clone(), din, dout).unwrap();
        let dy = draw(rows * dout);
        let (dx, g) = layer.backward(&x, &dy, rows).unwrap();
        for r in 0..rows {
            for i in 0..din {
                let s: f64 = (0..dout).map(|k| dy[r * dout + k] * w[k * din + i]).sum();
                assert!((dx[r * din + i] - s).abs() < 1e-12);
            }
        }
        for k in 0..dout {
            for i in 0..din {
                let s: f64 = (0..rows).map(|r| dy[r * dout + k] * x[r * din + i]).sum();
                assert!((g.weight[k * din + i] - s).abs() < 1e-12);
            }
        }
    }
}
