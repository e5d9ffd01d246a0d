//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Real floating-point scalar the tensors, networks and flows are generic over.
///
/// Implemented for `f32` and `f64`. The oracle comparisons in the test suite
/// are written against `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`; used for literals and hyperparameters.
    fn of(v: f64) -> Self;

    /// Widening conversion to `f64`.
    fn as_f64(self) -> f64;

    /// `c = alpha * a·b + beta * c` for row-major `a: m×k`, `b: k×n`, `c: m×n`.
    ///
    /// `trans_a` / `trans_b` read the stored operand as its transpose, so `a`
    /// is stored `k×m` when `trans_a` is set.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        trans_a: bool,
        b: &[Self],
        trans_b: bool,
        beta: Self,
        c: &mut [Self],
    );
}

// Row/column strides for a row-major operand read either as stored or transposed.
fn strides(rows: usize, cols: usize, transposed: bool) -> (isize, isize) {
    if transposed {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            #[inline]
            fn of(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                trans_a: bool,
                b: &[Self],
                trans_b: bool,
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(a.len() >= m * k, "gemm: lhs too short");
                assert!(b.len() >= k * n, "gemm: rhs too short");
                assert!(c.len() >= m * n, "gemm: output too short");
                if m == 0 || n == 0 {
                    return;
                }
                let (rsa, csa) = strides(m, k, trans_a);
                let (rsb, csb) = strides(k, n, trans_b);
                // SAFETY: the length checks above bound every index the kernel
                // touches for the given dimensions and strides.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                c[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
            }
        }
        c
    }

    #[test]
    fn gemm_matches_naive_product() {
        let a: Vec<f64> = (0..6).map(|v| v as f64).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| (v as f64) * 0.5 - 1.0).collect(); // 3x4
        let mut c = vec![0.0; 8];
        f64::gemm(2, 3, 4, 1.0, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, naive(2, 3, 4, &a, &b));
    }

    #[test]
    fn gemm_transposed_operands() {
        // a stored 3x2 and read as its 2x3 transpose.
        let a_t = [0.0, 3.0, 1.0, 4.0, 2.0, 5.0];
        let a = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 3x2
        let b_t = [1.0, 3.0, 5.0, 2.0, 4.0, 6.0]; // 2x3 storage of b^T
        let want = naive(2, 3, 2, &a, &b);
        let mut c = vec![0.0; 4];
        f64::gemm(2, 3, 2, 1.0, &a_t, true, &b_t, true, 0.0, &mut c);
        assert_eq!(c, want);
    }

    #[test]
    fn gemm_accumulates_with_beta() {
        let mut c = vec![1.0f32; 1];
        f32::gemm(1, 1, 1, 2.0, &[3.0], false, &[4.0], false, 1.0, &mut c);
        assert_eq!(c[0], 25.0);
    }
}
