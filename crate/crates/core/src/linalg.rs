//! Symmetric-matrix routines backing the Fréchet distance and Gaussian OT.
//!
//! Eigendecompositions run in `f64` through nalgebra whatever the tensor's
//! scalar type.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Relative symmetry tolerance: `|m_ij - m_ji| <= SYMMETRY_TOL * max|m|`.
pub const SYMMETRY_TOL: f64 = 1e-9;

fn square_dim<T: Scalar>(m: &Tensor<T>) -> Result<usize> {
    let (r, c) = m.dims2()?;
    if r != c {
        return Err(Error::BadShape(format!("expected a square matrix, got {r}x{c}")));
    }
    Ok(r)
}

pub fn check_symmetric<T: Scalar>(m: &Tensor<T>) -> Result<()> {
    let n = square_dim(m)?;
    let scale = m.max_abs().as_f64();
    let tolerance = SYMMETRY_TOL * scale;
    let mut asymmetry = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            asymmetry = asymmetry.max((m.at(i, j) - m.at(j, i)).abs().as_f64());
        }
    }
    if asymmetry > tolerance {
        return Err(Error::NonSymmetric { asymmetry, tolerance });
    }
    Ok(())
}

/// Eigenvalues and row-major eigenvectors (column `j` pairs with value `j`)
/// of the symmetrized input.
pub fn symmetric_eigen<T: Scalar>(m: &Tensor<T>) -> Result<(Vec<f64>, Vec<f64>)> {
    check_symmetric(m)?;
    let n = square_dim(m)?;
    let dm = DMatrix::<f64>::from_fn(n, n, |i, j| 0.5 * (m.at(i, j).as_f64() + m.at(j, i).as_f64()));
    if dm.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("symmetric_eigen input".into()));
    }
    let eig = SymmetricEigen::new(dm);
    let vectors = (0..n * n).map(|k| eig.eigenvectors[(k / n, k % n)]).collect();
    Ok((eig.eigenvalues.iter().copied().collect(), vectors))
}

/// `V · diag(f(λ)) · Vᵀ`.
fn spectral_apply<T: Scalar>(values: &[f64], vectors: &[f64], f: impl Fn(f64) -> f64) -> Tensor<T> {
    let n = values.len();
    let scaled: Vec<f64> = (0..n * n).map(|k| vectors[k] * f(values[k % n])).collect();
    let mut out = vec![0.0; n * n];
    f64::gemm(n, n, n, 1.0, &scaled, false, vectors, true, 0.0, &mut out);
    // Exact symmetry of the result.
    for i in 0..n {
        for j in (i + 1)..n {
            let s = 0.5 * (out[i * n + j] + out[j * n + i]);
            out[i * n + j] = s;
            out[j * n + i] = s;
        }
    }
    Tensor::from_parts(vec![n, n], out.into_iter().map(T::of).collect())
}

/// Symmetric square root of a PSD matrix; negative eigenvalues (rounding
/// noise in sample covariances) are clamped to zero.
pub fn matrix_sqrt_psd<T: Scalar>(m: &Tensor<T>) -> Result<Tensor<T>> {
    let (values, vectors) = symmetric_eigen(m)?;
    Ok(spectral_apply(&values, &vectors, |l| l.max(0.0).sqrt()))
}

/// Symmetric square root and inverse square root of a positive-definite matrix.
pub fn sqrt_and_inv_sqrt_pd<T: Scalar>(m: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let (values, vectors) = symmetric_eigen(m)?;
    let max = values.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 1e-14 * max) || max == 0.0 {
        return Err(Error::Singular(format!(
            "smallest eigenvalue {min:e} against largest {max:e}"
        )));
    }
    Ok((
        spectral_apply(&values, &vectors, f64::sqrt),
        spectral_apply(&values, &vectors, |l| 1.0 / l.sqrt()),
    ))
}

/// `min_U ‖X − Y U‖_F²` over orthogonal `U` for square `X`, `Y`.
///
/// The minimizer is the polar factor `U = V Wᵀ` of `Yᵀ X = V S Wᵀ`; the
/// residual is then summed as squares, so identical inputs give a result at
/// rounding level instead of the square root of it.
pub fn procrustes_residual<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Result<f64> {
    let n = square_dim(x)?;
    y.expect_shape(&[n, n])?;
    let to_dm = |m: &Tensor<T>| DMatrix::<f64>::from_fn(n, n, |i, j| m.at(i, j).as_f64());
    let (xm, ym) = (to_dm(x), to_dm(y));
    if xm.iter().chain(ym.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("procrustes input".into()));
    }
    let svd = (ym.transpose() * &xm).svd(true, true);
    let (v, wt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::NonFinite("SVD did not converge".into())),
    };
    let resid = &xm - ym * (v * wt);
    Ok(resid.iter().map(|e| e * e).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &Tensor<f64>, b: &Tensor<f64>, tol: f64) -> bool {
        a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn sqrt_of_identity() {
        let s = matrix_sqrt_psd(&Tensor::<f64>::identity(3)).unwrap();
        assert!(close(&s, &Tensor::identity(3), 1e-14));
    }

    #[test]
    fn sqrt_of_diagonal() {
        let s = matrix_sqrt_psd(&Tensor::<f64>::diag(&[4.0, 9.0])).unwrap();
        assert!(close(&s, &Tensor::diag(&[2.0, 3.0]), 1e-14));
    }

    #[test]
    fn sqrt_of_two_by_two_against_hand_eigendecomposition() {
        // Eigenpairs: 3 on (1,1)/√2 and 1 on (1,-1)/√2, so the root is
        // ½[[√3+1, √3-1], [√3-1, √3+1]].
        let m = Tensor::<f64>::matrix(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let s = matrix_sqrt_psd(&m).unwrap();
        let r3 = 3f64.sqrt();
        let want = Tensor::matrix(&[
            vec![0.5 * (r3 + 1.0), 0.5 * (r3 - 1.0)],
            vec![0.5 * (r3 - 1.0), 0.5 * (r3 + 1.0)],
        ])
        .unwrap();
        assert!(close(&s, &want, 1e-14), "{s:?}");
    }

    #[test]
    fn non_symmetric_rejected() {
        let m = Tensor::<f64>::matrix(&[vec![1.0, 0.5], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(matrix_sqrt_psd(&m), Err(Error::NonSymmetric { .. })));
    }

    #[test]
    fn tiny_negative_eigenvalues_are_clamped() {
        let m = Tensor::<f64>::diag(&[1.0, -1e-17]);
        let s = matrix_sqrt_psd(&m).unwrap();
        assert_eq!(s.at(1, 1), 0.0);
    }

    #[test]
    fn inverse_sqrt_of_singular_fails() {
        let m = Tensor::<f64>::diag(&[1.0, 0.0]);
        assert!(matches!(sqrt_and_inv_sqrt_pd(&m), Err(Error::Singular(_))));
    }

    #[test]
    fn inverse_sqrt_inverts_sqrt() {
        let m = Tensor::<f64>::matrix(&[vec![4.0, 1.0], vec![1.0, 3.0]]).unwrap();
        let (s, si) = sqrt_and_inv_sqrt_pd(&m).unwrap();
        assert!(close(&s.matmul(&si).unwrap(), &Tensor::identity(2), 1e-12));
    }

    proptest! {
        #[test]
        fn sqrt_squared_reconstructs_psd(entries in proptest::collection::vec(-1.0f64..1.0, 36)) {
            // B·Bᵀ + 0.1·I is PSD and well conditioned.
            let b = Tensor::new(vec![6, 6], entries).unwrap();
            let mut m = b.matmul(&b.transpose().unwrap()).unwrap();
            for i in 0..6 { m.data_mut()[i * 7] += 0.1; }
            let s = matrix_sqrt_psd(&m).unwrap();
            let err = s.matmul(&s).unwrap().sub(&m).unwrap().frobenius() / m.frobenius();
            prop_assert!(err <= 1e-8, "relative error {}", err);
        }
    }
}
