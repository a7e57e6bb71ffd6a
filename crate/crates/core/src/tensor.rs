//! Dense row-major tensors.
//!
//! Feature maps are always NCHW. Every operation returns a fresh tensor; there
//! are no views or strides.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::Float;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};

/// Element precision tag. The discriminant is the checkpoint dtype byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    F64 = 1,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }
}

/// Floating-point element type usable in a [`Tensor`].
pub trait Element: Float + Debug + Default + Send + Sync + AddAssign + Sum + 'static {
    const DTYPE: DType;

    fn of(v: f64) -> Self;

    fn as_f64(self) -> f64;

    fn write_le(self, out: &mut Vec<u8>);

    /// `bytes` must hold exactly `DTYPE.size()` bytes.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Element for f32 {
    const DTYPE: DType = DType::F32;

    fn of(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Element for f64 {
    const DTYPE: DType = DType::F64;

    fn of(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// Seeded standard-normal source.
///
/// Uniforms come from ChaCha8 (`seed_from_u64`): each draw takes the top 53
/// bits of `next_u64`, giving `u = (bits + 1) / 2^53` in (0, 1]. Pairs of
/// uniforms are turned into pairs of normals with the Box-Muller transform,
/// `r = sqrt(-2 ln u1)`, emitting `r cos(2 pi u2)` then `r sin(2 pi u2)`.
#[derive(Debug, Clone)]
pub struct NormalSampler {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl NormalSampler {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    /// Uniform draw in (0, 1].
    pub fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn fill<T: Element>(&mut self, out: &mut [T], mean: f64, std: f64) {
        for v in out {
            *v = T::of(mean + std * self.standard_normal());
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::shape("tensor rank must be at least 1"));
    }
    if let Some(i) = shape.iter().position(|&e| e == 0) {
        return Err(Error::shape(format!("extent {i} of {shape:?} is zero")));
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| Error::shape(format!("{shape:?} overflows usize")))
}

impl<T: Element> Tensor<T> {
    pub fn filled(shape: &[usize], value: T) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::filled(shape, T::zero())
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != data.len() {
            return Err(Error::shape(format!(
                "{shape:?} needs {len} elements, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Normal samples with the given mean and standard deviation, fully
    /// determined by `seed` (see [`NormalSampler`]).
    pub fn random_normal(shape: &[usize], mean: f64, std: f64, seed: u64) -> Result<Self> {
        if !std.is_finite() || std < 0.0 {
            return Err(Error::param(format!(
                "std must be finite and >= 0, got {std}"
            )));
        }
        let mut t = Self::zeros(shape)?;
        NormalSampler::new(seed).fill(&mut t.data, mean, std);
        Ok(t)
    }

    pub(crate) fn from_parts_unchecked(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
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

    pub fn dtype(&self) -> DType {
        T::DTYPE
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `(n, c, h, w)` of a rank-4 tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::shape(format!("expected NCHW, got {:?}", self.shape))),
        }
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_parts_unchecked(
            self.shape.clone(),
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self::from_parts_unchecked(self.shape.clone(), data))
    }

    pub fn expect_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// Sum of the elementwise product with `other`.
    pub fn dot(&self, other: &Self) -> Result<T> {
        self.expect_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .sum())
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor::from_parts_unchecked(
            self.shape.clone(),
            self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        )
    }

    /// Adds `other` into `self` in place.
    pub fn accumulate(&mut self, other: &Self) -> Result<()> {
        self.expect_same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }
}

/// `out[i] = a[i] * b[i]`.
pub fn elementwise_mul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.zip_map(b, |x, y| x * y)
}

/// `out[i] = a[i] + b[i]`.
pub fn elementwise_add<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.zip_map(b, |x, y| x + y)
}

/// Multiplies every channel `c` of an NCHW tensor by `lambda[c]`.
pub fn scale_channels<T: Element>(x: &Tensor<T>, lambda: &[T]) -> Result<Tensor<T>> {
    let (_, c, h, w) = x.dims4()?;
    if lambda.len() != c {
        return Err(Error::shape(format!(
            "{} channel scales for {c} channels",
            lambda.len()
        )));
    }
    let plane = h * w;
    let data = x
        .data
        .iter()
        .enumerate()
        .map(|(i, &v)| lambda[(i / plane) % c] * v)
        .collect();
    Ok(Tensor::from_parts_unchecked(x.shape.clone(), data))
}

/// Gradients of `sum(upstream * scale_channels(x, lambda))` with respect to
/// `x` and `lambda`.
pub fn scale_channels_vjp<T: Element>(
    x: &Tensor<T>,
    lambda: &[T],
    upstream: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>)> {
    x.expect_same_shape(upstream)?;
    let dx = scale_channels(upstream, lambda)?;
    let (_, c, h, w) = x.dims4()?;
    let plane = h * w;
    let mut dl = vec![T::zero(); c];
    for (i, (&xv, &u)) in x.data.iter().zip(&upstream.data).enumerate() {
        dl[(i / plane) % c] += xv * u;
    }
    Ok((dx, dl))
}
