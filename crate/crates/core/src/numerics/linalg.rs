use crate::numerics::Tensor;
use crate::{par, Error, Result};

/// Strided read-only view of a matrix inside a flat buffer.
#[derive(Clone, Copy, Debug)]
pub struct GemmOperand<'a> {
    pub data: &'a [f64],
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a> GemmOperand<'a> {
    /// Row-major `rows x cols` block starting at `data[0]` with leading
    /// dimension `ld`.
    pub fn rows(data: &'a [f64], ld: usize) -> Self {
        Self {
            data,
            row_stride: ld,
            col_stride: 1,
        }
    }

    /// Transposed view of a row-major block with leading dimension `ld`.
    pub fn transposed(data: &'a [f64], ld: usize) -> Self {
        Self {
            data,
            row_stride: 1,
            col_stride: ld,
        }
    }

    fn check(&self, rows: usize, cols: usize, what: &str) {
        if rows == 0 || cols == 0 {
            return;
        }
        let last = (rows - 1) * self.row_stride + (cols - 1) * self.col_stride;
        assert!(
            last < self.data.len(),
            "gemm operand {what} out of bounds: needs index {last}, len {}",
            self.data.len()
        );
    }

    fn offset_rows(&self, r0: usize) -> Self {
        Self {
            data: &self.data[r0 * self.row_stride..],
            ..*self
        }
    }
}

/// `C = alpha * A B + beta * C` for `A: m x k`, `B: k x n` and a row-major
/// `C` with leading dimension `ldc`.
///
/// Large products are split into fixed 64-row blocks of `C`, handed to
/// [`par`]; the per-element accumulation order does not depend on the split.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: GemmOperand<'_>,
    b: GemmOperand<'_>,
    beta: f64,
    c: &mut [f64],
    ldc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    a.check(m, k, "a");
    b.check(k, n, "b");
    assert!((m - 1) * ldc + n <= c.len(), "gemm output out of bounds");
    const BLOCK: usize = 64;
    let work = m * n * k.max(1);
    if par::PARALLEL && m > BLOCK && work > 1 << 18 {
        let c = &mut c[..(m - 1) * ldc + n];
        // Chunks must cover whole rows including the ldc padding.
        let chunk = BLOCK * ldc;
        par::for_each_chunk_mut(c, chunk, |blk, c_blk| {
            let r0 = blk * BLOCK;
            let rows = (m - r0).min(BLOCK);
            gemm_serial(rows, k, n, alpha, a.offset_rows(r0), b, beta, c_blk, ldc);
        });
    } else {
        gemm_serial(m, k, n, alpha, a, b, beta, c, ldc);
    }
}

#[allow(clippy::too_many_arguments)]
fn gemm_serial(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: GemmOperand<'_>,
    b: GemmOperand<'_>,
    beta: f64,
    c: &mut [f64],
    ldc: usize,
) {
    if k == 0 {
        for i in 0..m {
            for v in &mut c[i * ldc..i * ldc + n] {
                *v *= beta;
            }
        }
        return;
    }
    // SAFETY: every operand was bounds-checked against its slice above, and
    // `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

/// Matrix product of two 2-D tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul inner dims disagree: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![0.0; m * n];
    gemm(
        m,
        k,
        n,
        1.0,
        GemmOperand::rows(a.data(), k),
        GemmOperand::rows(b.data(), n),
        0.0,
        &mut out,
        n,
    );
    Tensor::new(vec![m, n], out)
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

/// Cosine similarity, clamped to `[-1, 1]` against rounding.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Dimension(format!(
            "cosine of vectors with lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::UndefinedSimilarity("zero-norm vector".into()));
    }
    if !(nu.is_finite() && nv.is_finite()) {
        return Err(Error::Numeric("non-finite vector in cosine".into()));
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}
