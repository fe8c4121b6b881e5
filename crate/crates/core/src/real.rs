//! Scalar abstraction over `f32` (the default) and `f64` (gradient checks).

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Payload type code used by the `T4v1` tensor record.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    F64 = 1,
}

impl DType {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Row/column strides of a matrix operand, in elements.
#[derive(Copy, Clone, Debug)]
pub struct Strides {
    pub row: isize,
    pub col: isize,
}

impl Strides {
    /// Row-major matrix with `cols` columns.
    pub fn row_major(cols: usize) -> Self {
        Strides {
            row: cols as isize,
            col: 1,
        }
    }

    /// The transpose of a row-major matrix with `cols` columns.
    pub fn transposed(cols: usize) -> Self {
        Strides {
            row: 1,
            col: cols as isize,
        }
    }
}

pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    const DTYPE: DType;

    /// `c = alpha * a·b + beta * c` with `a: m×k`, `b: k×n`, `c: m×n`.
    ///
    /// # Safety
    /// The strides must keep every addressed element inside the slices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        sa: Strides,
        b: *const Self,
        sb: Strides,
        beta: Self,
        c: *mut Self,
        sc: Strides,
    );

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).unwrap_or_else(Self::nan)
    }

    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    fn from_usize_lossy(v: usize) -> Self {
        Self::from_f64_lossy(v as f64)
    }
}

impl Real for f32 {
    const DTYPE: DType = DType::F32;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        sa: Strides,
        b: *const f32,
        sb: Strides,
        beta: f32,
        c: *mut f32,
        sc: Strides,
    ) {
        matrixmultiply::sgemm(
            m, k, n, alpha, a, sa.row, sa.col, b, sb.row, sb.col, beta, c, sc.row, sc.col,
        );
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> f32 {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Real for f64 {
    const DTYPE: DType = DType::F64;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        sa: Strides,
        b: *const f64,
        sb: Strides,
        beta: f64,
        c: *mut f64,
        sc: Strides,
    ) {
        matrixmultiply::dgemm(
            m, k, n, alpha, a, sa.row, sa.col, b, sb.row, sb.col, beta, c, sc.row, sc.col,
        );
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> f64 {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

fn max_offset(rows: usize, cols: usize, s: Strides) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    (rows - 1) * s.row.unsigned_abs() + (cols - 1) * s.col.unsigned_abs()
}

/// Bounds-checked matrix multiply, `c = alpha * a·b + beta * c`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    sa: Strides,
    b: &[T],
    sb: Strides,
    beta: T,
    c: &mut [T],
    sc: Strides,
) {
    assert!(sa.row >= 0 && sa.col >= 0 && sb.row >= 0 && sb.col >= 0);
    assert!(sc.row >= 0 && sc.col >= 0);
    if m == 0 || n == 0 {
        return;
    }
    assert!(max_offset(m, n, sc) < c.len(), "gemm: c out of bounds");
    if k > 0 {
        assert!(max_offset(m, k, sa) < a.len(), "gemm: a out of bounds");
        assert!(max_offset(k, n, sb) < b.len(), "gemm: b out of bounds");
    }
    // SAFETY: every addressed element was bounds-checked above and `c`
    // is uniquely borrowed.
    unsafe { T::gemm_raw(m, k, n, alpha, a.as_ptr(), sa, b.as_ptr(), sb, beta, c.as_mut_ptr(), sc) }
}
