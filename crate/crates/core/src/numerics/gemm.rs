//! Matrix multiply over row-major buffers, parallel over a fixed tiling of
//! the output so results never depend on the worker count.

use rayon::prelude::*;

/// Output rows (or columns) per parallel tile.
const TILE: usize = 128;

/// Strided read-only operand.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub row_stride: isize,
    pub col_stride: isize,
}

impl<'a> MatRef<'a> {
    pub fn rows(data: &'a [f64], cols: usize) -> Self {
        MatRef {
            data,
            row_stride: cols as isize,
            col_stride: 1,
        }
    }

    /// Transposed view of a row-major `rows x cols` buffer.
    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        MatRef {
            data,
            row_stride: 1,
            col_stride: cols as isize,
        }
    }
}

#[derive(Clone, Copy)]
struct SendPtr(*mut f64);
unsafe impl Send for SendPtr {}
unsafe impl Sync for SendPtr {}

/// `c[m x n] = a[m x k] * b[k x n] + beta * c`, `c` row-major contiguous.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: MatRef, b: MatRef, beta: f64, c: &mut [f64]) {
    assert_eq!(c.len(), m * n, "gemm output buffer has wrong length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let c_ptr = SendPtr(c.as_mut_ptr());
    let split_rows = m >= n;
    let extent = if split_rows { m } else { n };
    let tiles = extent.div_ceil(TILE);
    (0..tiles).into_par_iter().for_each(|t| {
        let c_ptr = c_ptr;
        let start = t * TILE;
        let len = TILE.min(extent - start);
        // SAFETY: tiles cover disjoint row (or column) ranges of `c`, and the
        // operand offsets stay inside their buffers for the given strides.
        unsafe {
            if split_rows {
                matrixmultiply::dgemm(
                    len,
                    k,
                    n,
                    1.0,
                    a.data.as_ptr().offset(start as isize * a.row_stride),
                    a.row_stride,
                    a.col_stride,
                    b.data.as_ptr(),
                    b.row_stride,
                    b.col_stride,
                    beta,
                    c_ptr.0.add(start * n),
                    n as isize,
                    1,
                );
            } else {
                matrixmultiply::dgemm(
                    m,
                    k,
                    len,
                    1.0,
                    a.data.as_ptr(),
                    a.row_stride,
                    a.col_stride,
                    b.data.as_ptr().offset(start as isize * b.col_stride),
                    b.row_stride,
                    b.col_stride,
                    beta,
                    c_ptr.0.add(start),
                    n as isize,
                    1,
                );
            }
        }
    });
}
