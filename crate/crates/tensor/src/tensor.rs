use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{shape_err, Result, TensorError};

/// Storage precision of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    /// Used by the gradient checker.
    F64,
}

/// Scalar type a [`Tensor`] can hold.
pub trait Element:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + Send
    + Sync
    + 'static
{
    const PRECISION: Precision;

    /// `c = alpha * a·b + beta * c` on strided views.
    ///
    /// # Safety
    /// Every index reachable through the given dimensions and strides must
    /// lie inside the corresponding buffer.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).unwrap_or_else(Self::nan)
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Element for f32 {
    const PRECISION: Precision = Precision::F32;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Element for f64 {
    const PRECISION: Precision = Precision::F64;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Read-only strided matrix view over a flat buffer.
#[derive(Clone, Copy)]
pub(crate) struct MatView<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a, T> MatView<'a, T> {
    pub fn row_major(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, row_stride: cols, col_stride: 1 }
    }

    /// Transposed view of a row-major `rows × cols` buffer.
    pub fn transposed(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self { data, rows: cols, cols: rows, row_stride: 1, col_stride: cols }
    }

    fn fits(&self) -> bool {
        if self.rows == 0 || self.cols == 0 {
            return true;
        }
        (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride < self.data.len()
    }
}

/// `c = alpha * a·b + beta * c`, with `c` row-major and contiguous.
pub(crate) fn gemm<T: Element>(alpha: T, a: MatView<'_, T>, b: MatView<'_, T>, beta: T, c: &mut [T]) {
    assert_eq!(a.cols, b.rows, "gemm inner dimensions");
    assert!(a.fits() && b.fits(), "gemm operand view out of bounds");
    assert!(c.len() >= a.rows * b.cols, "gemm output too small");
    if a.rows == 0 || b.cols == 0 {
        return;
    }
    // SAFETY: bounds of all three views were checked above.
    unsafe {
        T::gemm_raw(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.as_mut_ptr(),
            b.cols as isize,
            1,
        );
    }
}

/// Dense row-major N-d array with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Element> Tensor<T> {
    /// Builds a tensor, checking that every extent is positive and that the
    /// data length equals the shape's element count.
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let expected = checked_numel(shape)?;
        if data.len() != expected {
            return Err(TensorError::LengthMismatch { expected, actual: data.len() });
        }
        Ok(Self { shape: shape.to_vec(), data, grad: None })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: &[usize], value: T) -> Result<Self> {
        let n = checked_numel(shape)?;
        Ok(Self { shape: shape.to_vec(), data: vec![value; n], grad: None })
    }

    /// Standard-normal entries scaled by `std`, reproducible from `seed`.
    pub fn randn(shape: &[usize], std: f64, seed: u64) -> Result<Self> {
        let n = checked_numel(shape)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                T::from_f64_lossy(z * std)
            })
            .collect();
        Ok(Self { shape: shape.to_vec(), data, grad: None })
    }

    /// Uniform entries in `[lo, hi)`, reproducible from `seed`.
    pub fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Result<Self> {
        let n = checked_numel(shape)?;
        let dist = Uniform::new(lo, hi)
            .map_err(|e| TensorError::ShapeMismatch(format!("bad uniform range: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n).map(|_| T::from_f64_lossy(dist.sample(&mut rng))).collect();
        Ok(Self { shape: shape.to_vec(), data, grad: None })
    }

    /// Skips validation; callers guarantee `data.len() == numel(shape)`.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data, grad: None }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Option<Vec<T>>) -> Result<()> {
        if let Some(g) = &grad {
            if g.len() != self.data.len() {
                return Err(TensorError::LengthMismatch { expected: self.data.len(), actual: g.len() });
            }
        }
        self.grad = grad;
        Ok(())
    }

    pub fn take_grad(&mut self) -> Option<Vec<T>> {
        self.grad.take()
    }

    pub fn precision(&self) -> Precision {
        T::PRECISION
    }

    /// Same shape, new element type.
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::from_f64_lossy(x.to_f64_lossy())).collect(),
            grad: None,
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n = checked_numel(shape)?;
        if n != self.data.len() {
            return shape_err(format!("cannot reshape {:?} into {:?}", self.shape, shape));
        }
        self.shape = shape.to_vec();
        self.grad = None;
        Ok(self)
    }

    /// Interprets the tensor as `[N, C, D, H, W]`.
    pub fn dims5(&self) -> Result<[usize; 5]> {
        match self.shape.as_slice() {
            &[n, c, d, h, w] => Ok([n, c, d, h, w]),
            other => shape_err(format!("expected a 5-d [N,C,D,H,W] tensor, got {other:?}")),
        }
    }

    pub fn dims2(&self) -> Result<[usize; 2]> {
        match self.shape.as_slice() {
            &[n, f] => Ok([n, f]),
            other => shape_err(format!("expected a 2-d tensor, got {other:?}")),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

fn checked_numel(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return shape_err("tensor shape must have at least one axis");
    }
    if let Some(axis) = shape.iter().position(|&d| d == 0) {
        return shape_err(format!("axis {axis} of {shape:?} has zero extent"));
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| TensorError::ShapeMismatch(format!("shape {shape:?} overflows")))
}
