//! Dense rank-4 tensors and the primitives the rest of the crate composes.
//!
//! Layout is `N x C x H x W`, row-major. Shifts follow one sign convention
//! everywhere: a positive `(dy, dx)` moves content down and right, so
//! `shift(x)(n1, n2) = x(n1 - dy, n2 - dx)` with indices taken modulo the
//! spatial extent.

pub(crate) mod grad;
mod io;
pub(crate) mod ops;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, shape_err, Result};

pub use grad::{
    activate_vjp, circular_shift_vjp, conv2d_vjp, fully_connected_vjp, global_average_pool_vjp,
    max_pool_dense_vjp, ConvGrads, LinearGrads,
};
pub use io::{read_tensor, write_csv, StoredTensor};
pub use ops::{
    activate, circular_shift, conv2d, fully_connected, global_average_pool, max_pool_dense,
    same_padding,
};

/// Floating-point precision of a tensor's storage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    /// Byte tag used by the binary tensor format (the element width).
    pub fn tag(self) -> u8 {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            4 => Some(Precision::F32),
            8 => Some(Precision::F64),
            _ => None,
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => arg_err(format!("unknown precision `{other}` (expected f32 or f64)")),
        }
    }
}

/// Scalar element type of a [`Tensor`]: IEEE binary32 or binary64.
pub trait Real: Float + Sum + Default + Debug + Display + Send + Sync + 'static {
    const PRECISION: Precision;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Real for f32 {
    const PRECISION: Precision = Precision::F32;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4-byte slice"))
    }
}

impl Real for f64 {
    const PRECISION: Precision = Precision::F64;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8-byte slice"))
    }
}

/// Extents of a rank-4 tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Number of elements in one batch item.
    pub fn item(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn with_batch(self, n: usize) -> Self {
        Self { n, ..self }
    }
}

impl Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Dense `N x C x H x W` array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

/// Convolution weights share the tensor layout as `(O, I, kH, kW)`.
/// Fully connected weights are `(classes, features, 1, 1)`.
pub type Kernel<T> = Tensor<T>;

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: Shape, value: T) -> Self {
        Self { shape, data: vec![value; shape.len()] }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return shape_err(format!(
                "shape {shape} needs {} elements, got {}",
                shape.len(),
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    /// Build from `f(n, c, h, w)`.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Self { shape, data }
    }

    /// Single-image, single-channel tensor from rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let h = rows.len();
        let w = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != w) {
            return shape_err("ragged rows");
        }
        let data = rows.iter().flat_map(|r| r.iter().map(|&v| T::from_f64(v))).collect();
        Self::from_vec(Shape::new(1, 1, h, w), data)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + h) * self.shape.w + w
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.offset(n, c, h, w)]
    }

    /// The `H x W` plane of item `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    /// All channels of batch item `n`, contiguous.
    pub fn item_data(&self, n: usize) -> &[T] {
        let len = self.shape.item();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn item(&self, n: usize) -> Tensor<T> {
        Tensor { shape: self.shape.with_batch(1), data: self.item_data(n).to_vec() }
    }

    /// Concatenate tensors along the batch axis.
    pub fn stack(items: &[Tensor<T>]) -> Result<Self> {
        let Some(first) = items.first() else {
            return arg_err("cannot stack an empty list");
        };
        let per = first.shape.with_batch(1);
        let mut data = Vec::with_capacity(per.len() * items.len());
        let mut n = 0;
        for t in items {
            if t.shape.with_batch(1) != per {
                return shape_err(format!("cannot stack {} with {}", t.shape, first.shape));
            }
            n += t.shape.n;
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor { shape: per.with_batch(n), data })
    }

    /// Same data viewed under a different shape with equal element count.
    pub fn reshape(self, shape: Shape) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { shape: self.shape, data: self.data.iter().map(|&v| U::from_f64(v.as_f64())).collect() }
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        self.cast()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return shape_err(format!("elementwise op on {} and {}", self.shape, other.shape));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor { shape: self.shape, data })
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|v| v * k)
    }

    /// Sum of all elements, accumulated sequentially in f64.
    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64()).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Result<f64> {
        if self.shape != other.shape {
            return shape_err(format!("comparing {} with {}", self.shape, other.shape));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Boundary handling for convolution, pooling and blurring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PadMode {
    /// Periodic extension; makes stride-1 convolution exactly shift-equivariant.
    #[default]
    Circular,
    Zero,
}

/// Pointwise non-linearity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Activation {
    Relu,
    /// `g(v) = sum_i a_i v^i`, coefficients listed from `a_0`.
    Polynomial { coefficients: Vec<f64> },
    Identity,
}

impl Activation {
    pub fn polynomial(coefficients: Vec<f64>) -> Result<Self> {
        let act = Activation::Polynomial { coefficients };
        act.validate()?;
        Ok(act)
    }

    pub fn validate(&self) -> Result<()> {
        if let Activation::Polynomial { coefficients } = self {
            if coefficients.len() < 2 {
                return arg_err("polynomial activation needs degree >= 1");
            }
            if coefficients.iter().any(|a| !a.is_finite()) {
                return arg_err("polynomial coefficients must be finite");
            }
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
            Activation::Polynomial { coefficients } => {
                coefficients.iter().rev().fold(0.0, |acc, &a| acc * v + a)
            }
        }
    }

    /// Derivative; ReLU uses subgradient 0 at exactly 0.
    #[inline]
    pub fn derivative(&self, v: f64) -> f64 {
        match self {
            Activation::Relu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
            Activation::Polynomial { coefficients } => coefficients
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(0.0, |acc, (i, &a)| acc * v + a * i as f64),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::<f32>::from_vec(Shape::new(1, 1, 2, 2), vec![0.0; 3]).is_err());
        assert!(Tensor::<f32>::from_vec(Shape::new(1, 1, 2, 2), vec![0.0; 4]).is_ok());
    }

    #[test]
    fn stack_and_item_round_trip() {
        let a = Tensor::<f64>::from_rows(&[&[1.0, 2.0]]).unwrap();
        let b = Tensor::<f64>::from_rows(&[&[3.0, 4.0]]).unwrap();
        let s = Tensor::stack(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.shape(), Shape::new(2, 1, 1, 2));
        assert_eq!(s.item(0), a);
        assert_eq!(s.item(1), b);
    }

    #[test]
    fn polynomial_evaluation_and_derivative() {
        let p = Activation::polynomial(vec![1.0, -2.0, 3.0]).unwrap();
        assert_eq!(p.apply(2.0), 1.0 - 4.0 + 12.0);
        assert_eq!(p.derivative(2.0), -2.0 + 12.0);
        assert!(Activation::polynomial(vec![1.0]).is_err());
        assert!(Activation::polynomial(vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        assert_eq!(Activation::Relu.derivative(0.0), 0.0);
        assert_eq!(Activation::Relu.derivative(1e-9), 1.0);
    }

    #[test]
    fn precision_tags() {
        assert_eq!(Precision::from_tag(Precision::F32.tag()), Some(Precision::F32));
        assert_eq!(Precision::from_tag(8), Some(Precision::F64));
        assert_eq!(Precision::from_tag(2), None);
        assert!("f16".parse::<Precision>().is_err());
    }
}
