//! Distortion and perceptual-index measurements.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dot::{fit_gaussian, GaussianStats};
use crate::error::{Error, Result};
use crate::linalg::{matrix_sqrt_psd, procrustes_residual};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// MSE, RMSE and PSNR (peak 1.0) over a set of reconstructions, plus the
/// IndRMSE against the posterior-mean predictor when available.
///
/// A zero MSE gives `psnr = +∞`, serialized as the string `"inf"`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistortionReport {
    pub mse: f64,
    pub rmse: f64,
    #[serde(serialize_with = "ser_db", deserialize_with = "de_db")]
    pub psnr: f64,
    pub ind_rmse: Option<f64>,
    pub n: usize,
}

fn ser_db<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

fn de_db<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Db {
        Num(f64),
        Text(String),
    }
    match Db::deserialize(d)? {
        Db::Num(v) => Ok(v),
        Db::Text(t) if t == "inf" => Ok(f64::INFINITY),
        Db::Text(t) => Err(serde::de::Error::custom(format!("bad psnr value {t:?}"))),
    }
}

/// `10·log10(1/mse)`, `+∞` at zero.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

impl DistortionReport {
    pub fn from_mse(mse: f64, n: usize) -> Self {
        Self {
            mse,
            rmse: mse.sqrt(),
            psnr: psnr_from_mse(mse),
            ind_rmse: None,
            n,
        }
    }

    pub fn with_ind_rmse(self, ind_rmse: f64) -> Self {
        Self {
            ind_rmse: Some(ind_rmse),
            ..self
        }
    }
}

/// Per-pair mean-over-components squared error, averaged over the rows of
/// `x` and `xhat` (`n × d` each).
pub fn mse_rmse_psnr<T: Scalar>(x: &Tensor<T>, xhat: &Tensor<T>) -> Result<DistortionReport> {
    let (n, _) = x.dims2()?;
    xhat.expect_shape(x.shape())?;
    Ok(DistortionReport::from_mse(mean_sq_diff(x, xhat), n))
}

/// The same over explicit pairs of arbitrary (matching) shapes.
pub fn mse_rmse_psnr_pairs<T: Scalar>(pairs: &[(Tensor<T>, Tensor<T>)]) -> Result<DistortionReport> {
    if pairs.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let mut total = 0.0;
    for (x, xh) in pairs {
        xh.expect_shape(x.shape())?;
        total += mean_sq_diff(x, xh);
    }
    Ok(DistortionReport::from_mse(total / pairs.len() as f64, pairs.len()))
}

// With equal row widths, the mean over rows of per-row means is the mean over all entries.
fn mean_sq_diff<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    let s: f64 = a.data().iter().zip(b.data()).map(|(&p, &q)| (p - q).as_f64().powi(2)).sum();
    s / a.len() as f64
}

/// `√(mean ‖x̂ − f(y)‖²)` with the same per-component normalization as the MSE.
pub fn indrmse<T: Scalar>(recons: &Tensor<T>, mmse_preds: &Tensor<T>) -> Result<f64> {
    mmse_preds.expect_shape(recons.shape())?;
    Ok(mean_sq_diff(recons, mmse_preds).sqrt())
}

/// Fréchet distance between Gaussians:
/// `d² = ‖μa − μb‖² + tr(Σa + Σb − 2 (Σa^{1/2} Σb Σa^{1/2})^{1/2})`.
///
/// The trace term is evaluated in its Procrustes form
/// `min_U ‖Σa^{1/2} − Σb^{1/2} U‖_F²`, which is the same quantity without
/// the cancellation of the direct expression.
pub fn frechet_gaussian<T: Scalar>(a: &GaussianStats<T>, b: &GaussianStats<T>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch {
            expected: vec![a.dim()],
            actual: vec![b.dim()],
        });
    }
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(&p, &q)| (p - q).as_f64().powi(2)).sum();
    let sa = matrix_sqrt_psd(&a.cov.cast::<f64>())?;
    let sb = matrix_sqrt_psd(&b.cov.cast::<f64>())?;
    let d2 = mean_term + procrustes_residual(&sa, &sb)?;
    if !d2.is_finite() {
        return Err(Error::NonFinite("Fréchet distance".into()));
    }
    Ok(d2.sqrt())
}

/// Fit a Gaussian to each sample set and return their Fréchet distance.
pub fn frechet_from_samples<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    frechet_gaussian(&fit_gaussian(a)?, &fit_gaussian(b)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{sample_standard_normal, RngKey};
    use proptest::prelude::*;

    fn g(mean: &[f64], cov: &[Vec<f64>]) -> GaussianStats<f64> {
        GaussianStats::from_moments(mean.to_vec(), Tensor::matrix(cov).unwrap()).unwrap()
    }

    #[test]
    fn distortion_examples() {
        let x = Tensor::full(&[4, 3], 0.3);
        let r = mse_rmse_psnr(&x, &x).unwrap();
        assert_eq!(r.mse, 0.0);
        assert!(r.psnr.is_infinite());
        let r = mse_rmse_psnr(&x, &x.map(|v| v + 0.1)).unwrap();
        assert!((r.mse - 0.01).abs() < 1e-12);
        assert!((r.psnr - 20.0).abs() < 1e-9);
        let r = mse_rmse_psnr(&Tensor::zeros(&[2, 5]), &Tensor::full(&[2, 5], 1.0)).unwrap();
        assert_eq!((r.mse, r.rmse, r.psnr), (1.0, 1.0, 0.0));
        assert!(mse_rmse_psnr(&x, &Tensor::zeros(&[4, 2])).is_err());
    }

    #[test]
    fn pairs_average_per_pair() {
        let pairs = vec![
            (Tensor::zeros(&[2]), Tensor::full(&[2], 1.0)),
            (Tensor::zeros(&[3, 1]), Tensor::zeros(&[3, 1])),
        ];
        assert_eq!(mse_rmse_psnr_pairs(&pairs).unwrap().mse, 0.5);
        assert!(mse_rmse_psnr_pairs::<f64>(&[]).is_err());
    }

    #[test]
    fn psnr_sentinel_serializes_as_text() {
        let r = DistortionReport::from_mse(0.0, 1);
        let s = serde_json::to_string(&r).unwrap();
        assert!(s.contains("\"psnr\":\"inf\""));
        let back: DistortionReport = serde_json::from_str(&s).unwrap();
        assert!(back.psnr.is_infinite());
        let r = DistortionReport::from_mse(0.01, 3).with_ind_rmse(0.2);
        assert_eq!(serde_json::from_str::<DistortionReport>(&serde_json::to_string(&r).unwrap()).unwrap(), r);
    }

    #[test]
    fn indrmse_examples() {
        let p = Tensor::from_fn(&[3, 2], |i| i as f64);
        assert_eq!(indrmse(&p, &p).unwrap(), 0.0);
        assert!((indrmse(&p.map(|v| v + 1.0), &p).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn frechet_closed_forms() {
        let a = g(&[0.0, 0.0], &[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(frechet_gaussian(&a, &a).unwrap() < 1e-10);
        let b = g(&[1.0, 0.0], &[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!((frechet_gaussian(&a, &b).unwrap() - 1.0).abs() < 1e-8);
        let c = g(&[0.0], &[vec![1.0]]);
        let d = g(&[0.0], &[vec![4.0]]);
        assert!((frechet_gaussian(&c, &d).unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn frechet_from_sample_sets() {
        let a = sample_standard_normal::<f64>(RngKey::new(1, 0), &[100_000, 2]);
        assert!(frechet_from_samples(&a, &a).unwrap() < 1e-8);
        let b = sample_standard_normal::<f64>(RngKey::new(2, 0), &[100_000, 2]);
        assert!(frechet_from_samples(&a, &b).unwrap() < 0.05);
        let x = sample_standard_normal::<f64>(RngKey::new(3, 0), &[100_000, 1]);
        let y = sample_standard_normal::<f64>(RngKey::new(4, 0), &[100_000, 1]).map(|v| v + 3.0);
        assert!((frechet_from_samples(&x, &y).unwrap() - 3.0).abs() < 0.05);
    }

    #[test]
    fn procrustes_form_matches_trace_form() {
        let a = g(&[0.0, 0.0], &[vec![2.0, 0.4], vec![0.4, 0.7]]);
        let b = g(&[0.0, 0.0], &[vec![1.0, -0.3], vec![-0.3, 3.0]]);
        let sa = matrix_sqrt_psd(&a.cov).unwrap();
        let cross = matrix_sqrt_psd(&sa.matmul(&b.cov).unwrap().matmul(&sa).unwrap()).unwrap();
        let trace_form = a.cov.trace().unwrap() + b.cov.trace().unwrap() - 2.0 * cross.trace().unwrap();
        assert!((frechet_gaussian(&a, &b).unwrap().powi(2) - trace_form).abs() < 1e-12);
        assert!(frechet_gaussian(&a, &a).unwrap() < 1e-10);
    }

    fn psd(v: &[f64]) -> Tensor<f64> {
        let l = Tensor::matrix(&[vec![v[0], 0.0], vec![v[1], v[2]]]).unwrap();
        l.matmul(&l.transpose().unwrap()).unwrap().add(&Tensor::diag(&[0.01, 0.01])).unwrap()
    }

    fn arb_stats() -> impl Strategy<Value = GaussianStats<f64>> {
        (prop::collection::vec(-2.0f64..2.0, 2), prop::collection::vec(-2.0f64..2.0, 3))
            .prop_map(|(m, l)| GaussianStats::from_moments(m, psd(&l)).unwrap())
    }

    proptest! {
        #[test]
        fn frechet_symmetric(a in arb_stats(), b in arb_stats()) {
            let ab = frechet_gaussian(&a, &b).unwrap();
            let ba = frechet_gaussian(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-10);
        }

        #[test]
        fn frechet_triangle(a in arb_stats(), b in arb_stats(), c in arb_stats()) {
            let ab = frechet_gaussian(&a, &b).unwrap();
            let ac = frechet_gaussian(&a, &c).unwrap();
            let cb = frechet_gaussian(&c, &b).unwrap();
            prop_assert!(ab <= ac + cb + 1e-8);
        }

        #[test]
        fn psnr_decreasing(m in 1e-6f64..10.0, k in 1.0001f64..3.0) {
            prop_assert!(psnr_from_mse(m * k) < psnr_from_mse(m));
        }
    }
}
