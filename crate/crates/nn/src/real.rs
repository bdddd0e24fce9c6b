//! Scalar abstraction so the same layers run in `f32` for training and in
//! `f64` for finite-difference gradient checks.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

pub trait Real:
    Float
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
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;

    /// Raw strided GEMM: `C = alpha * A * B + beta * C`, `A` is `m x k`, `B` is `k x n`.
    ///
    /// # Safety
    /// Pointers and strides must describe valid, non-overlapping matrices.
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
    fn of(x: f64) -> Self {
        x as f32
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
    fn of(x: f64) -> Self {
        x
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

/// Row-major matrix operand: a slice plus whether it is stored transposed.
#[derive(Clone, Copy)]
pub struct MatRef<'a, R> {
    pub data: &'a [R],
    pub transposed: bool,
}

impl<'a, R> MatRef<'a, R> {
    pub fn n(data: &'a [R]) -> Self {
        Self { data, transposed: false }
    }
    pub fn t(data: &'a [R]) -> Self {
        Self { data, transposed: true }
    }
}

/// `c = op(a) * op(b) + (accumulate ? c : 0)` where `op(a)` is `m x k` and
/// `op(b)` is `k x n`, all buffers row-major.
pub fn gemm<R: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: MatRef<'_, R>,
    b: MatRef<'_, R>,
    c: &mut [R],
    accumulate: bool,
) {
    assert!(a.data.len() >= m * k, "gemm: lhs too short");
    assert!(b.data.len() >= k * n, "gemm: rhs too short");
    assert!(c.len() >= m * n, "gemm: output too short");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].iter_mut().for_each(|v| *v = R::zero());
        }
        return;
    }
    let (rsa, csa) = if a.transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b.transposed { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { R::one() } else { R::zero() };
    // SAFETY: lengths checked above; strides describe row-major (or transposed)
    // matrices inside those bounds and `c` is a distinct mutable borrow.
    unsafe {
        R::gemm_raw(
            m,
            k,
            n,
            R::one(),
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    let av = if ta { a[p * m + i] } else { a[i * k + p] };
                    let bv = if tb { b[j * k + p] } else { b[p * n + j] };
                    c[i * n + j] += av * bv;
                }
            }
        }
        c
    }

    #[test]
    fn gemm_matches_naive_for_all_transpose_combinations() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.91).cos()).collect();
        for ta in [false, true] {
            for tb in [false, true] {
                let mut c = vec![1.0; m * n];
                let am = MatRef { data: &a[..], transposed: ta };
                let bm = MatRef { data: &b[..], transposed: tb };
                gemm(m, k, n, am, bm, &mut c, false);
                let want = naive(m, k, n, &a, ta, &b, tb);
                for (x, y) in c.iter().zip(&want) {
                    assert!((x - y).abs() < 1e-12);
                }
                gemm(m, k, n, am, bm, &mut c, true);
                for (x, y) in c.iter().zip(&want) {
                    assert!((x - 2.0 * y).abs() < 1e-12);
                }
            }
        }
    }
}
