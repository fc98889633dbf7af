//! Dense-array numerics for the recurrent models.
//!
//! Everything here is generic over [`Real`] so the same code runs in `f32`
//! for training and in `f64` for finite-difference gradient checks.

mod adam;
mod gradcheck;
mod gru;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;

use crate::error::{Error, Result};

pub use adam::{adam_step, AdamHyper, AdamState};
pub use gradcheck::{central_difference, gradient_check, relative_error, GradCheckReport};
pub(crate) use gru::GRU_FIELDS;
pub use gru::{gru_cell_backward, gru_cell_forward, GruCache, GruParams, GruStack, GruStackCache};

pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }
}

impl<T> Real for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + AddAssign
        + SubAssign
        + MulAssign
        + DivAssign
        + Sum
        + Debug
        + Display
        + Default
        + Send
        + Sync
        + 'static
{
}

/// Row-major dense array.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseArray<T = f32> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> DenseArray<T> {
    pub fn zeros(dims: &[usize]) -> Self {
        let len = dims.iter().product();
        DenseArray {
            dims: dims.to_vec(),
            data: vec![T::zero(); len],
        }
    }

    pub fn from_vec(dims: &[usize], data: Vec<T>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::dim(format!("dims {dims:?} contain a zero extent")));
        }
        let len: usize = dims.iter().product();
        if len != data.len() {
            return Err(Error::dim(format!(
                "dims {dims:?} imply {len} values, got {}",
                data.len()
            )));
        }
        Ok(DenseArray {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn vector(data: Vec<T>) -> Self {
        DenseArray {
            dims: vec![data.len()],
            data,
        }
    }

    /// Fills with independent draws from uniform(-scale, scale).
    pub fn uniform<R: Rng + ?Sized>(dims: &[usize], scale: f64, rng: &mut R) -> Self {
        let len: usize = dims.iter().product();
        let data = (0..len)
            .map(|_| T::lit(rng.gen_range(-scale..scale)))
            .collect();
        DenseArray {
            dims: dims.to_vec(),
            data,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
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

    pub fn rows(&self) -> usize {
        self.dims[0]
    }

    /// Column count of a matrix; 1 for a vector.
    pub fn cols(&self) -> usize {
        self.dims.get(1).copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = T::zero());
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: T, other: &DenseArray<T>) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::dim(format!(
                "axpy between {:?} and {:?}",
                self.dims, other.dims
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: T) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn sum_squares(&self) -> f64 {
        self.data
            .iter()
            .map(|v| {
                let x = v.to_f64().unwrap_or(f64::NAN);
                x * x
            })
            .sum()
    }

    pub fn cast<U: Real>(&self) -> DenseArray<U> {
        DenseArray {
            dims: self.dims.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64().unwrap_or(f64::NAN)).unwrap_or_else(U::nan))
                .collect(),
        }
    }
}

pub(crate) fn check_len(name: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::dim(format!("{name}: expected length {want}, got {got}")));
    }
    Ok(())
}

/// `out += w x` for an `r x c` matrix `w`.
pub fn matvec_acc<T: Real>(w: &DenseArray<T>, x: &[T], out: &mut [T]) {
    let c = w.cols();
    debug_assert_eq!(x.len(), c);
    debug_assert_eq!(out.len(), w.rows());
    for (o, row) in out.iter_mut().zip(w.data.chunks_exact(c)) {
        let mut acc = T::zero();
        for (&a, &b) in row.iter().zip(x) {
            acc += a * b;
        }
        *o += acc;
    }
}

pub fn matvec<T: Real>(w: &DenseArray<T>, x: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); w.rows()];
    matvec_acc(w, x, &mut out);
    out
}

/// `out += w^T y`.
pub fn matvec_t_acc<T: Real>(w: &DenseArray<T>, y: &[T], out: &mut [T]) {
    let c = w.cols();
    debug_assert_eq!(y.len(), w.rows());
    debug_assert_eq!(out.len(), c);
    for (&yi, row) in y.iter().zip(w.data.chunks_exact(c)) {
        if yi == T::zero() {
            continue;
        }
        for (o, &a) in out.iter_mut().zip(row) {
            *o += yi * a;
        }
    }
}

/// `g += y x^T`.
pub fn outer_acc<T: Real>(g: &mut DenseArray<T>, y: &[T], x: &[T]) {
    let c = g.cols();
    debug_assert_eq!(x.len(), c);
    debug_assert_eq!(y.len(), g.rows());
    for (&yi, row) in y.iter().zip(g.data.chunks_exact_mut(c)) {
        if yi == T::zero() {
            continue;
        }
        for (o, &b) in row.iter_mut().zip(x) {
            *o += yi * b;
        }
    }
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Dense output projection `W h + b`.
pub fn output_layer_forward<T: Real>(h: &[T], w: &DenseArray<T>, b: &[T]) -> Result<Vec<T>> {
    if w.dims().len() != 2 || w.cols() != h.len() || w.rows() != b.len() {
        return Err(Error::dim(format!(
            "output layer: W {:?}, h {}, b {}",
            w.dims(),
            h.len(),
            b.len()
        )));
    }
    let mut out = b.to_vec();
    matvec_acc(w, h, &mut out);
    Ok(out)
}

/// Accumulates output-layer parameter gradients and returns the gradient
/// with respect to `h`.
pub fn output_layer_backward<T: Real>(
    grad_logits: &[T],
    h: &[T],
    w: &DenseArray<T>,
    grad_w: &mut DenseArray<T>,
    grad_b: &mut [T],
) -> Vec<T> {
    outer_acc(grad_w, grad_logits, h);
    for (gb, &g) in grad_b.iter_mut().zip(grad_logits) {
        *gb += g;
    }
    let mut grad_h = vec![T::zero(); h.len()];
    matvec_t_acc(w, grad_logits, &mut grad_h);
    grad_h
}

/// Cross-entropy of a softmax over `logits` against class `target`
/// (zero-based). Returns the loss and `softmax(logits) - onehot(target)`.
pub fn softmax_cross_entropy<T: Real>(logits: &[T], target: usize) -> Result<(T, Vec<T>)> {
    if target >= logits.len() {
        return Err(Error::Index(format!(
            "target class {target} with {} logits",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut probs: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: T = probs.iter().copied().sum();
    let log_total = total.ln();
    let loss = log_total - (logits[target] - max);
    for p in probs.iter_mut() {
        *p /= total;
    }
    probs[target] -= T::one();
    Ok((loss, probs))
}

/// Inverted-dropout mask: each entry is 0 with probability `1 - keep_prob`,
/// otherwise `1 / keep_prob`.
pub fn make_dropout_mask<T: Real, R: Rng + ?Sized>(
    size: usize,
    keep_prob: f64,
    rng: &mut R,
) -> Result<Vec<T>> {
    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
        return Err(Error::Config(format!(
            "keep_prob must be in (0, 1], got {keep_prob}"
        )));
    }
    if keep_prob == 1.0 {
        return Ok(vec![T::one(); size]);
    }
    let kept = T::lit(1.0 / keep_prob);
    Ok((0..size)
        .map(|_| {
            if rng.gen::<f64>() < keep_prob {
                kept
            } else {
                T::zero()
            }
        })
        .collect())
}
