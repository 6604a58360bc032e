use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// The coupled state `(x_j, x~_j)`; both halves always share one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPair<T: Scalar> {
    pub left: Tensor<T>,
    pub right: Tensor<T>,
}

impl<T: Scalar> SplitPair<T> {
    pub fn new(left: Tensor<T>, right: Tensor<T>) -> Result<Self> {
        left.check_same(&right, "split pair")?;
        Ok(Self { left, right })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.left.shape()
    }

    /// Total element count of both halves.
    pub fn len(&self) -> usize {
        self.left.len() + self.right.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.left.bitwise_eq(&other.left) && self.right.bitwise_eq(&other.right)
    }
}

/// Channels `[0, C/2)` go left, `[C/2, C)` go right.
pub fn channel_split<T: Scalar>(x: &Tensor<T>) -> Result<SplitPair<T>> {
    let [n, c, h, w] = x.shape();
    if c % 2 != 0 {
        return Err(Error::OddChannels(c));
    }
    let half = c / 2 * h * w;
    let mut left = Vec::with_capacity(n * half);
    let mut right = Vec::with_capacity(n * half);
    for sample in x.data().chunks(2 * half) {
        left.extend_from_slice(&sample[..half]);
        right.extend_from_slice(&sample[half..]);
    }
    let shape = [n, c / 2, h, w];
    Ok(SplitPair {
        left: Tensor::from_vec(shape, left)?,
        right: Tensor::from_vec(shape, right)?,
    })
}

pub fn channel_merge<T: Scalar>(p: &SplitPair<T>) -> Result<Tensor<T>> {
    p.left.check_same(&p.right, "channel_merge")?;
    let [n, c, h, w] = p.left.shape();
    let half = c * h * w;
    let mut data = Vec::with_capacity(2 * n * half);
    for i in 0..n {
        data.extend_from_slice(&p.left.data()[i * half..(i + 1) * half]);
        data.extend_from_slice(&p.right.data()[i * half..(i + 1) * half]);
    }
    Tensor::from_vec([n, 2 * c, h, w], data)
}

/// Appends zero channels up to `c_out`.
pub fn injective_pad<T: Scalar>(x: &Tensor<T>, c_out: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.shape();
    if c_out < c {
        return Err(Error::Injectivity { c_in: c, c_out });
    }
    let hw = h * w;
    let mut data = Vec::with_capacity(n * c_out * hw);
    for sample in x.data().chunks(c * hw) {
        data.extend_from_slice(sample);
        data.extend(std::iter::repeat_n(T::zero(), (c_out - c) * hw));
    }
    Tensor::from_vec([n, c_out, h, w], data)
}

/// Left inverse of [`injective_pad`]: keeps the first `c_in` channels.
pub fn pad_pseudo_inverse<T: Scalar>(y: &Tensor<T>, c_in: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = y.shape();
    if c_in > c {
        return Err(Error::Injectivity { c_in, c_out: c });
    }
    let hw = h * w;
    let mut data = Vec::with_capacity(n * c_in * hw);
    for sample in y.data().chunks(c * hw) {
        data.extend_from_slice(&sample[..c_in * hw]);
    }
    Tensor::from_vec([n, c_in, h, w], data)
}

/// Transpose of [`injective_pad`]: drops the padded channels.
pub(crate) fn injective_pad_adjoint<T: Scalar>(dy: &Tensor<T>, c_in: usize) -> Result<Tensor<T>> {
    pad_pseudo_inverse(dy, c_in)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_single_pixel() {
        let x = Tensor::<f32>::from_vec([1, 2, 1, 1], vec![3.0, -7.0]).unwrap();
        let p = channel_split(&x).unwrap();
        assert_eq!(p.left.data(), &[3.0]);
        assert_eq!(p.right.data(), &[-7.0]);
        assert!(channel_merge(&p).unwrap().bitwise_eq(&x));
    }

    #[test]
    fn odd_channels_rejected() {
        assert!(matches!(
            channel_split(&Tensor::<f32>::zeros([1, 3, 2, 2])),
            Err(Error::OddChannels(3))
        ));
    }

    #[test]
    fn pad_examples() {
        let x = Tensor::<f32>::from_vec([1, 1, 1, 1], vec![5.0]).unwrap();
        assert_eq!(injective_pad(&x, 3).unwrap().data(), &[5.0, 0.0, 0.0]);
        assert!(injective_pad(&x, 1).unwrap().bitwise_eq(&x));
        assert!(matches!(
            injective_pad(&Tensor::<f32>::zeros([1, 4, 1, 1]), 2),
            Err(Error::Injectivity { c_in: 4, c_out: 2 })
        ));
    }

    #[test]
    fn pair_requires_equal_shapes() {
        assert!(SplitPair::new(
            Tensor::<f32>::zeros([1, 1, 2, 2]),
            Tensor::zeros([1, 2, 2, 2])
        )
        .is_err());
    }
}
