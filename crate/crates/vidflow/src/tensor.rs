//! Dense row-major tensors and the raw compute kernels behind the graph ops.
//!
//! Tensors are immutable values: cloning shares the underlying buffer.
//! Compute precision is generic over [`Element`] — `f32` for training,
//! `f64` for finite-difference verification.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Scalar element type of a tensor. Implemented for `f32` and `f64`.
pub trait Element:
    num_traits::Float + fmt::Debug + fmt::Display + Default + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    const NAME: &'static str;
}

impl Element for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    const NAME: &'static str = "f32";
}

impl Element for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    const NAME: &'static str = "f64";
}

/// Dense multi-dimensional array, row-major, immutable once built.
#[derive(Clone)]
pub struct Tensor<E> {
    shape: Vec<usize>,
    data: Arc<[E]>,
}

impl<E: Element> fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor<{}>{:?}", E::NAME, self.shape)?;
        if self.numel() <= 8 {
            write!(f, " {:?}", &self.data[..])?;
        }
        Ok(())
    }
}

impl<E: Element> Tensor<E> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<E>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::invalid(
                "tensor",
                format!("shape {:?} implies {} elements, got {}", shape, n, data.len()),
            ));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::invalid("tensor", format!("zero extent in {shape:?}")));
        }
        Ok(Tensor {
            shape,
            data: data.into(),
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![E::zero(); n].into(),
        }
    }

    pub fn full(shape: &[usize], v: E) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; n].into(),
        }
    }

    pub fn scalar(v: E) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v].into(),
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> E) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect::<Vec<_>>().into(),
        }
    }

    /// Fresh tensor with the same shape, filled by a normal draw.
    pub fn randn(shape: &[usize], std: f64, rng: &mut crate::rng::Rng) -> Self {
        Self::from_fn(shape, |_| E::from_f64(rng.normal_scaled(0.0, std)))
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn data(&self) -> &[E] {
        &self.data
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Number of trailing-dimension rows, i.e. numel / last extent.
    #[inline]
    pub fn rows(&self) -> usize {
        self.numel() / self.last_dim()
    }

    #[inline]
    pub fn last_dim(&self) -> usize {
        *self.shape.last().expect("rank >= 1")
    }

    pub fn item(&self) -> E {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    /// Same buffer, new shape. Element count must match.
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape,
            });
        }
        Ok(Tensor {
            shape,
            data: Arc::clone(&self.data),
        })
    }

    pub fn map(&self, f: impl Fn(E) -> E) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect::<Vec<_>>().into(),
        }
    }

    pub fn zip(&self, other: &Self, op: &'static str, f: impl Fn(E, E) -> E) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let data: Vec<E> = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data: data.into(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, c: E) -> Self {
        self.map(|x| x * c)
    }

    pub fn max_abs(&self) -> f64 {
        self.data
            .iter()
            .fold(0.0f64, |m, &x| m.max(x.as_f64().abs()))
    }

    /// Mean of squared error against another tensor, in f64.
    pub fn mse(&self, other: &Self) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "mse",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let mut acc = 0.0f64;
        for (&a, &b) in self.data.iter().zip(other.data.iter()) {
            let d = a.as_f64() - b.as_f64();
            acc += d * d;
        }
        Ok(acc / self.numel() as f64)
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits())
    }

    pub fn validate_finite(&self, op: &str) -> Result<()> {
        if self.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { op: op.to_string() });
        }
        Ok(())
    }

    /// Convert element precision (f32 <-> f64) through f64.
    pub fn cast<F: Element>(&self) -> Tensor<F> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&x| F::from_f64(x.as_f64()))
                .collect::<Vec<_>>()
                .into(),
        }
    }
}

// ---------------------------------------------------------------------------
// Raw matmul kernels. Fixed accumulation order, single-threaded, written so
// the inner loops run over contiguous slices and autovectorize.
// ---------------------------------------------------------------------------

/// c[m,n] += a[m,k] @ b[k,n], unrolled 8 deep over k.
pub(crate) fn mm_nn<E: Element>(a: &[E], b: &[E], c: &mut [E], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        let mut kk = 0;
        while kk + 8 <= k {
            let a0 = arow[kk];
            let a1 = arow[kk + 1];
            let a2 = arow[kk + 2];
            let a3 = arow[kk + 3];
            let a4 = arow[kk + 4];
            let a5 = arow[kk + 5];
            let a6 = arow[kk + 6];
            let a7 = arow[kk + 7];
            let b0 = &b[kk * n..(kk + 1) * n];
            let b1 = &b[(kk + 1) * n..(kk + 2) * n];
            let b2 = &b[(kk + 2) * n..(kk + 3) * n];
            let b3 = &b[(kk + 3) * n..(kk + 4) * n];
            let b4 = &b[(kk + 4) * n..(kk + 5) * n];
            let b5 = &b[(kk + 5) * n..(kk + 6) * n];
            let b6 = &b[(kk + 6) * n..(kk + 7) * n];
            let b7 = &b[(kk + 7) * n..(kk + 8) * n];
            for j in 0..n {
                let s0 = a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
                let s1 = a4 * b4[j] + a5 * b5[j] + a6 * b6[j] + a7 * b7[j];
                crow[j] = crow[j] + s0 + s1;
            }
            kk += 8;
        }
        while kk < k {
            let av = arow[kk];
            let brow = &b[kk * n..(kk + 1) * n];
            for j in 0..n {
                crow[j] = crow[j] + av * brow[j];
            }
            kk += 1;
        }
    }
}

/// c[m,n] += a[m,k] @ b[n,k]^T
pub(crate) fn mm_nt<E: Element>(a: &[E], b: &[E], c: &mut [E], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            crow[j] = crow[j] + dot(arow, brow);
        }
    }
}

/// c[k,n] += a[m,k]^T @ b[m,n]
pub(crate) fn mm_tn<E: Element>(a: &[E], b: &[E], c: &mut [E], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for kk in 0..k {
            let av = arow[kk];
            let crow = &mut c[kk * n..(kk + 1) * n];
            for j in 0..n {
                crow[j] = crow[j] + av * brow[j];
            }
        }
    }
}

/// Dot product with four independent accumulators (fixed combine order).
#[inline]
pub(crate) fn dot<E: Element>(a: &[E], b: &[E]) -> E {
    debug_assert_eq!(a.len(), b.len());
    let mut acc0 = E::zero();
    let mut acc1 = E::zero();
    let mut acc2 = E::zero();
    let mut acc3 = E::zero();
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let p = i * 4;
        acc0 = acc0 + a[p] * b[p];
        acc1 = acc1 + a[p + 1] * b[p + 1];
        acc2 = acc2 + a[p + 2] * b[p + 2];
        acc3 = acc3 + a[p + 3] * b[p + 3];
    }
    let mut acc = ((acc0 + acc1) + acc2) + acc3;
    for i in chunks * 4..a.len() {
        acc = acc + a[i] * b[i];
    }
    acc
}
