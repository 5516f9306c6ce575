//! Dense row-major tensors.
//!
//! There is no broadcasting: every binary operation requires identical
//! shapes, and every change of shape goes through an explicit call
//! (`reshape`, `slice_axis0`, `slice_axis1`). Reductions walk the flat
//! buffer front to back so results are reproducible bit for bit.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Floating-point element type. Implemented for `f64` (the default used
/// by the training engine) and `f32`.
pub trait Scalar:
    Copy
    + Default
    + PartialOrd
    + fmt::Debug
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    fn abs(self) -> Self;
    fn sqrt(self) -> Self;
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn from_f64(v: f64) -> Self {
        v
    }
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn abs(self) -> Self {
        f32::abs(self)
    }
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T: Scalar = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 16 {
            write!(f, "Tensor{:?} {:?}", self.shape, self.data)
        } else {
            write!(f, "Tensor{:?} [{} elements]", self.shape, self.data.len())
        }
    }
}

fn check_increasing(keep: &[usize], len: usize, context: &'static str) -> Result<()> {
    for (pos, &index) in keep.iter().enumerate() {
        if index >= len {
            return Err(Error::IndexOutOfRange {
                index,
                len,
                context,
            });
        }
        if pos > 0 && keep[pos - 1] >= index {
            return Err(Error::UnsortedIndices { context });
        }
    }
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch {
                op: "tensor construction",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, T::ZERO)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::filled(shape, T::ONE)
    }

    /// A rank-1 tensor owning `data`.
    pub fn from_vec(data: Vec<T>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Size of one axis-0 slice (product of the trailing dimensions).
    pub fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[T] {
        let n = self.row_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let n = self.row_len();
        &mut self.data[i * n..(i + 1) * n]
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape,
                right: shape.to_vec(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data,
        })
    }

    fn check_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn elementwise_mul(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "elementwise_mul")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .collect();
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "add")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a + b)
            .collect();
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "sub")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a - b)
            .collect();
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_same_shape(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, factor: T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&a| a * factor).collect(),
        }
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::ZERO, |acc, &v| acc + v)
    }

    pub fn l1_norm(&self) -> T {
        l1(&self.data)
    }

    pub fn l2_norm(&self) -> T {
        self.data.iter().fold(T::ZERO, |acc, &v| acc + v * v).sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::ZERO, |acc, &v| if v.abs() > acc { v.abs() } else { acc })
    }

    /// Copies the axis-0 slices listed in `keep` (strictly increasing) into a
    /// new tensor. An empty `keep` yields a tensor with `shape[0] == 0`.
    pub fn slice_axis0(&self, keep: &[usize]) -> Result<Self> {
        if self.shape.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "slice_axis0 on a scalar",
                left: vec![],
                right: vec![],
            });
        }
        check_increasing(keep, self.shape[0], "slice_axis0")?;
        let row = self.row_len();
        let mut data = Vec::with_capacity(keep.len() * row);
        for &i in keep {
            data.extend_from_slice(&self.data[i * row..(i + 1) * row]);
        }
        let mut shape = self.shape.clone();
        shape[0] = keep.len();
        Ok(Self { shape, data })
    }

    /// Axis-1 counterpart of [`Tensor::slice_axis0`]; used for the input
    /// channels of a layer that follows a pruned one.
    pub fn slice_axis1(&self, keep: &[usize]) -> Result<Self> {
        if self.shape.len() < 2 {
            return Err(Error::ShapeMismatch {
                op: "slice_axis1 needs rank >= 2",
                left: self.shape.clone(),
                right: vec![],
            });
        }
        check_increasing(keep, self.shape[1], "slice_axis1")?;
        let outer = self.shape[0];
        let inner: usize = self.shape.iter().skip(2).product();
        let stride = self.shape[1] * inner;
        let mut data = Vec::with_capacity(outer * keep.len() * inner);
        for o in 0..outer {
            let base = o * stride;
            for &k in keep {
                data.extend_from_slice(&self.data[base + k * inner..base + (k + 1) * inner]);
            }
        }
        let mut shape = self.shape.clone();
        shape[1] = keep.len();
        Ok(Self { shape, data })
    }

    /// Sets the listed axis-0 slices to zero in place.
    pub fn zero_rows(&mut self, rows: &[usize]) -> Result<()> {
        let len = self.shape.first().copied().unwrap_or(0);
        if let Some(&bad) = rows.iter().find(|&&r| r >= len) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                len,
                context: "zero_rows",
            });
        }
        for &r in rows {
            self.row_mut(r).iter_mut().for_each(|v| *v = T::ZERO);
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }
}

/// L1 norm of a raw slice, summed front to back.
pub fn l1<T: Scalar>(values: &[T]) -> T {
    values.iter().fold(T::ZERO, |acc, &v| acc + v.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn construction_checks_length() {
        assert!(Tensor::<f64>::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert_eq!(Tensor::<f64>::zeros(&[0, 3]).len(), 0);
    }

    #[test]
    fn elementwise_mul_examples() {
        let a = Tensor::from_vec(vec![1.0, 2.0]);
        let b = Tensor::from_vec(vec![3.0, 4.0]);
        assert_eq!(a.elementwise_mul(&b).unwrap().data(), &[3.0, 8.0]);

        let x = t(&[2, 2], &[1.5, -2.0, 0.25, 7.0]);
        let z = Tensor::zeros(&[2, 2]);
        assert_eq!(x.elementwise_mul(&z).unwrap(), z);
        assert_eq!(x.elementwise_mul(&Tensor::ones(&[2, 2])).unwrap(), x);
    }

    #[test]
    fn elementwise_mul_reports_both_shapes() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[3, 2]);
        match a.elementwise_mul(&b) {
            Err(Error::ShapeMismatch { left, right, .. }) => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![3, 2]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn norms() {
        assert_eq!(Tensor::from_vec(vec![1.0, -2.0, 3.0]).l1_norm(), 6.0);
        assert_eq!(Tensor::<f64>::zeros(&[4]).l1_norm(), 0.0);
        assert_eq!(Tensor::from_vec(vec![-0.5, -0.5]).l1_norm(), 1.0);
        assert_eq!(Tensor::from_vec(vec![3.0, 4.0]).l2_norm(), 5.0);
        assert_eq!(Tensor::<f64>::zeros(&[3]).l2_norm(), 0.0);
        assert_eq!(Tensor::from_vec(vec![0.0, 1.0, 0.0]).l2_norm(), 1.0);
    }

    #[test]
    fn slice_axis0_examples() {
        let a = t(&[4, 2], &[0., 1., 2., 3., 4., 5., 6., 7.]);
        let s = a.slice_axis0(&[0, 2]).unwrap();
        assert_eq!(s.shape(), &[2, 2]);
        assert_eq!(s.data(), &[0., 1., 4., 5.]);
        assert_eq!(a.slice_axis0(&[0, 1, 2, 3]).unwrap(), a);
        let e = a.slice_axis0(&[]).unwrap();
        assert_eq!(e.shape(), &[0, 2]);
        assert!(e.is_empty());
        // source untouched
        assert_eq!(a.data()[4], 4.0);
    }

    #[test]
    fn slice_axis0_rejects_bad_indices() {
        let a = Tensor::<f64>::zeros(&[3, 2]);
        assert!(matches!(
            a.slice_axis0(&[3]),
            Err(Error::IndexOutOfRange { index: 3, .. })
        ));
        assert!(matches!(
            a.slice_axis0(&[1, 1]),
            Err(Error::UnsortedIndices { .. })
        ));
        assert!(a.slice_axis0(&[2, 0]).is_err());
    }

    #[test]
    fn slice_axis1_keeps_input_channels() {
        // shape (2, 3, 2): out=2, in=3, spatial=2
        let a = t(&[2, 3, 2], &(0..12).map(f64::from).collect::<Vec<_>>());
        let s = a.slice_axis1(&[0, 2]).unwrap();
        assert_eq!(s.shape(), &[2, 2, 2]);
        assert_eq!(s.data(), &[0., 1., 4., 5., 6., 7., 10., 11.]);
    }

    #[test]
    fn zero_rows_in_place() {
        let mut a = t(&[3, 2], &[1., 2., 3., 4., 5., 6.]);
        a.zero_rows(&[1]).unwrap();
        assert_eq!(a.data(), &[1., 2., 0., 0., 5., 6.]);
        assert!(a.zero_rows(&[3]).is_err());
    }

    #[test]
    fn f32_tensors_are_supported() {
        let a: Tensor<f32> = Tensor::from_vec(vec![3.0, 4.0]);
        assert_eq!(a.l2_norm(), 5.0f32);
        let b: Tensor<f64> = a.cast();
        assert_eq!(b.data(), &[3.0, 4.0]);
    }

    proptest! {
        #[test]
        fn l1_triangle_inequality(pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..64)) {
            let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let a = Tensor::from_vec(xs);
            let b = Tensor::from_vec(ys);
            let lhs = a.add(&b).unwrap().l1_norm();
            prop_assert!(lhs <= a.l1_norm() + b.l1_norm() + 1e-9 * (1.0 + lhs));
        }

        #[test]
        fn identity_slice_is_idempotent(rows in 1usize..8, cols in 1usize..5, seed in any::<u64>()) {
            let data: Vec<f64> = (0..rows * cols).map(|i| ((i as u64).wrapping_mul(seed | 1) % 97) as f64).collect();
            let a = Tensor::new(vec![rows, cols], data).unwrap();
            let all: Vec<usize> = (0..rows).collect();
            let once = a.slice_axis0(&all).unwrap();
            let twice = once.slice_axis0(&all).unwrap();
            prop_assert_eq!(&once, &a);
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn elementwise_mul_matches_naive(vals in prop::collection::vec((-1e6f64..1e6, -1e6f64..1e6), 0..32)) {
            let (xs, ys): (Vec<f64>, Vec<f64>) = vals.iter().cloned().unzip();
            let out = Tensor::from_vec(xs.clone()).elementwise_mul(&Tensor::from_vec(ys.clone())).unwrap();
            for ((o, x), y) in out.data().iter().zip(&xs).zip(&ys) {
                prop_assert_eq!(o.to_bits(), (x * y).to_bits());
            }
        }
    }
}
