//! Scalar abstraction so the same network code runs in f32 (training,
//! prediction) and f64 (finite-difference gradient checks).

use num_traits::Float;

pub trait Real:
    Float + core::ops::AddAssign + core::iter::Sum + core::fmt::Debug + Default + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c = alpha * a * b + beta * c` on strided matrices.
    ///
    /// # Safety
    /// Pointers and strides must describe in-bounds `m x k`, `k x n` and
    /// `m x n` matrices, and `c` must not alias `a` or `b`.
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
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

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
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

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
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Row/column strides of a matrix view.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Strides(pub usize, pub usize);

impl Strides {
    /// Row-major `rows x cols`, optionally viewed transposed.
    pub fn row_major(cols: usize, transposed: bool) -> Self {
        if transposed {
            Strides(1, cols)
        } else {
            Strides(cols, 1)
        }
    }

    fn max_index(self, rows: usize, cols: usize) -> usize {
        (rows - 1) * self.0 + (cols - 1) * self.1
    }
}

/// Bounds-checked `c = a * b + beta * c` with `a: m x k`, `b: k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    sa: Strides,
    b: &[T],
    sb: Strides,
    beta: T,
    c: &mut [T],
    sc: Strides,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(sc.max_index(m, n) < c.len(), "gemm output out of bounds");
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let v = &mut c[i * sc.0 + j * sc.1];
                *v = beta * *v;
            }
        }
        return;
    }
    assert!(sa.max_index(m, k) < a.len(), "gemm lhs out of bounds");
    assert!(sb.max_index(k, n) < b.len(), "gemm rhs out of bounds");
    // SAFETY: the three views were bounds-checked above and `c` is a
    // distinct mutable borrow, so it cannot alias `a` or `b`.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            beta,
            c.as_mut_ptr(),
            sc.0 as isize,
            sc.1 as isize,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn gemm_matches_naive_with_transposes() {
        let a: alloc::vec::Vec<f64> = (0..6).map(|v| v as f64 + 0.5).collect(); // 2x3
        let b: alloc::vec::Vec<f64> = (0..12).map(|v| (v as f64) * 0.25 - 1.0).collect(); // 3x4
        let mut c = vec![1.0f64; 8];
        gemm(2, 3, 4, &a, Strides::row_major(3, false), &b, Strides::row_major(4, false), 2.0, &mut c, Strides::row_major(4, false));
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = (0..3).map(|p| a[i * 3 + p] * b[p * 4 + j]).sum::<f64>() + 2.0;
                assert!((c[i * 4 + j] - want).abs() < 1e-12);
            }
        }
        // a^T (3x2 stored) times itself
        let mut g = vec![0.0f64; 9];
        gemm(3, 2, 3, &a, Strides::row_major(3, true), &a, Strides::row_major(3, false), 0.0, &mut g, Strides::row_major(3, false));
        assert!((g[0] - (0.5 * 0.5 + 3.5 * 3.5)).abs() < 1e-12);
    }
}
