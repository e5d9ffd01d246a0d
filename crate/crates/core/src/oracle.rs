//! Closed-form ground truth for scalar Gaussian denoising.
//!
//! `X ~ N(0, 1)`, `Y = X + N` with `N ~ N(0, σ²)`. Every estimator, vector
//! field and ODE solution here is exact, which makes this module the
//! reference the learned components are checked against.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngKey;
use crate::scalar::Scalar;

/// Noise standard deviation `σ` of the additive Gaussian channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarNoiseModel<T = f64> {
    sigma_n: T,
}

impl<T: Scalar> ScalarNoiseModel<T> {
    pub fn new(sigma_n: T) -> Result<Self> {
        if !(sigma_n > T::zero()) || !sigma_n.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "noise standard deviation must be positive, got {sigma_n}"
            )));
        }
        Ok(Self { sigma_n })
    }

    pub fn sigma_n(&self) -> T {
        self.sigma_n
    }

    fn var(&self) -> T {
        self.sigma_n * self.sigma_n
    }
}

/// `E[X | Y = y] = y / (1 + σ²)`.
pub fn posterior_mean_1d<T: Scalar>(y: T, model: &ScalarNoiseModel<T>) -> T {
    y / (T::one() + model.var())
}

/// Minimum-MSE estimator under a perfect perceptual constraint:
/// `y / √(1 + σ²)`.
pub fn x0_estimate_1d<T: Scalar>(y: T, model: &ScalarNoiseModel<T>) -> T {
    y / (T::one() + model.var()).sqrt()
}

/// Rectified-flow field of the posterior-mean source:
/// `E[X − X̂* | Z_t = z] = tσ² / (1 + t²σ²) · z`.
pub fn pmrf_vector_field_1d<T: Scalar>(z: T, t: T, model: &ScalarNoiseModel<T>) -> T {
    let s2 = model.var();
    t * s2 / (T::one() + t * t * s2) * z
}

/// Solution of `dẐ/dt = pmrf_vector_field_1d(Ẑ, t)` with `Ẑ_0 = c`.
pub fn pmrf_ode_solution_1d<T: Scalar>(c: T, t: T, model: &ScalarNoiseModel<T>) -> T {
    c * (T::one() + t * t * model.var()).sqrt()
}

/// Rectified-flow field when flowing from the measurement itself:
/// `E[X − Y | Z_t = z] = (t−1)σ² / (σ²(t−1)² + 1) · z`.
pub fn flowy_vector_field_1d<T: Scalar>(z: T, t: T, model: &ScalarNoiseModel<T>) -> T {
    let s2 = model.var();
    let d = t - T::one();
    d * s2 / (s2 * d * d + T::one()) * z
}

/// Solution of `dẐ/dt = flowy_vector_field_1d(Ẑ, t)` with `Ẑ_0 = c`.
pub fn flowy_ode_solution_1d<T: Scalar>(c: T, t: T, model: &ScalarNoiseModel<T>) -> T {
    let s2 = model.var();
    let d = t - T::one();
    c * (s2 * d * d + T::one()).sqrt() / (T::one() + s2).sqrt()
}

/// One draw from the posterior `N(y/(1+σ²), σ²/(1+σ²))`.
pub fn posterior_sample_1d(y: f64, model: &ScalarNoiseModel<f64>, rng: &mut ChaCha8Rng) -> f64 {
    let s2 = model.var();
    let std = (s2 / (1.0 + s2)).sqrt();
    posterior_mean_1d(y, model) + std * rng.sample::<f64, _>(StandardNormal)
}

/// Analytic MSE of the three reference estimators.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticMses<T = f64> {
    pub mmse: T,
    pub posterior_sampler_mse: T,
    pub x0_mse: T,
}

pub fn analytic_mses<T: Scalar>(model: &ScalarNoiseModel<T>) -> AnalyticMses<T> {
    let s2 = model.var();
    let one = T::one();
    let two = T::of(2.0);
    AnalyticMses {
        mmse: s2 / (one + s2),
        posterior_sampler_mse: two * s2 / (one + s2),
        x0_mse: two * (one - one / (one + s2).sqrt()),
    }
}

/// Estimator evaluated by [`monte_carlo_mse`].
pub enum Estimator<'a> {
    /// `x̂ = f(y)`.
    Deterministic(&'a dyn Fn(f64) -> f64),
    /// `x̂ ~ p(· | y)`, drawing from the supplied generator.
    Sampler(&'a dyn Fn(f64, &mut ChaCha8Rng) -> f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MonteCarloMse {
    pub mse: f64,
    /// Standard error of `mse`.
    pub std_error: f64,
    pub n: usize,
}

/// Empirical MSE of `estimator` over `n` draws of `(X, Y)`.
pub fn monte_carlo_mse(
    estimator: Estimator<'_>,
    model: &ScalarNoiseModel<f64>,
    n: usize,
    key: RngKey,
) -> Result<MonteCarloMse> {
    if n == 0 {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let mut data_rng = key.derive_str("joint").rng();
    let mut est_rng = key.derive_str("estimator").rng();
    let (mut sum, mut sum_sq) = (0.0f64, 0.0f64);
    for _ in 0..n {
        let x: f64 = data_rng.sample(StandardNormal);
        let noise: f64 = data_rng.sample(StandardNormal);
        let y = x + model.sigma_n() * noise;
        let xhat = match &estimator {
            Estimator::Deterministic(f) => f(y),
            Estimator::Sampler(f) => f(y, &mut est_rng),
        };
        let e = (x - xhat) * (x - xhat);
        sum += e;
        sum_sq += e * e;
    }
    let nf = n as f64;
    let mse = sum / nf;
    let var = if n > 1 {
        ((sum_sq - nf * mse * mse) / (nf - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(MonteCarloMse {
        mse,
        std_error: (var / nf).sqrt(),
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(s: f64) -> ScalarNoiseModel<f64> {
        ScalarNoiseModel::new(s).unwrap()
    }

    #[test]
    fn rejects_nonpositive_sigma() {
        assert!(ScalarNoiseModel::new(0.0f64).is_err());
        assert!(ScalarNoiseModel::new(-1.0f64).is_err());
        assert!(ScalarNoiseModel::new(f64::NAN).is_err());
    }

    #[test]
    fn posterior_mean_values() {
        assert_eq!(posterior_mean_1d(2.0, &m(1.0)), 1.0);
        assert_eq!(posterior_mean_1d(0.0, &m(0.7)), 0.0);
        assert!((posterior_mean_1d(3.0, &m(3f64.sqrt())) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn x0_estimate_values() {
        assert!((x0_estimate_1d(2.0, &m(1.0)) - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(x0_estimate_1d(0.0, &m(2.0)), 0.0);
        assert!((x0_estimate_1d(3.0, &m(3f64.sqrt())) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn pmrf_field_values() {
        assert_eq!(pmrf_vector_field_1d(1.0, 1.0, &m(1.0)), 0.5);
        assert_eq!(pmrf_vector_field_1d(7.3, 0.0, &m(1.0)), 0.0);
        assert!((pmrf_vector_field_1d(2.0, 0.5, &m(1.0)) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn pmrf_solution_values() {
        assert!((pmrf_ode_solution_1d(1.0, 1.0, &m(1.0)) - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(pmrf_ode_solution_1d(-0.3, 0.0, &m(2.0)), -0.3);
        let end = pmrf_ode_solution_1d(0.5, 1.0, &m(1.0));
        assert!((end - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((end - x0_estimate_1d(1.0, &m(1.0))).abs() < 1e-15);
    }

    #[test]
    fn flowy_field_values() {
        assert!((flowy_vector_field_1d(2.0, 0.5, &m(1.0)) + 0.8).abs() < 1e-15);
        assert_eq!(flowy_vector_field_1d(5.0, 1.0, &m(1.0)), 0.0);
        assert!((flowy_vector_field_1d(1.0, 0.0, &m(1.0)) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn flowy_solution_values() {
        assert!((flowy_ode_solution_1d(2.0, 1.0, &m(1.0)) - 2f64.sqrt()).abs() < 1e-15);
        assert!((flowy_ode_solution_1d(1.7, 0.0, &m(1.3)) - 1.7).abs() < 1e-15);
        // 2·√1.25/√2
        assert!((flowy_ode_solution_1d(2.0, 0.5, &m(1.0)) - 1.5811388300841898).abs() < 1e-12);
    }

    #[test]
    fn solutions_satisfy_their_odes() {
        // Central difference of the closed-form solution against the field.
        let model = m(1.7);
        let h = 1e-6;
        for &t in &[0.1, 0.4, 0.9] {
            let c = 0.8;
            let d = (pmrf_ode_solution_1d(c, t + h, &model) - pmrf_ode_solution_1d(c, t - h, &model)) / (2.0 * h);
            let v = pmrf_vector_field_1d(pmrf_ode_solution_1d(c, t, &model), t, &model);
            assert!((d - v).abs() < 1e-8);
            let d = (flowy_ode_solution_1d(c, t + h, &model) - flowy_ode_solution_1d(c, t - h, &model)) / (2.0 * h);
            let v = flowy_vector_field_1d(flowy_ode_solution_1d(c, t, &model), t, &model);
            assert!((d - v).abs() < 1e-8);
        }
    }

    #[test]
    fn analytic_mse_values_and_ordering() {
        let a = analytic_mses(&m(1.0));
        assert_eq!(a.mmse, 0.5);
        assert_eq!(a.posterior_sampler_mse, 1.0);
        assert!((a.x0_mse - (2.0 - 2f64.sqrt())).abs() < 1e-15);
        let b = analytic_mses(&m(3f64.sqrt()));
        assert!((b.mmse - 0.75).abs() < 1e-15);
        assert!((b.posterior_sampler_mse - 1.5).abs() < 1e-15);
        assert!((b.x0_mse - 1.0).abs() < 1e-15);
        let tiny = analytic_mses(&m(1e-8));
        assert!(tiny.mmse < 1e-15 && tiny.x0_mse < 1e-15 && tiny.posterior_sampler_mse < 1e-15);
        for s in [0.05, 0.3, 1.0, 2.0, 10.0] {
            let a = analytic_mses(&m(s));
            assert!(0.0 < a.mmse && a.mmse < a.x0_mse && a.x0_mse < a.posterior_sampler_mse);
        }
    }

    #[test]
    fn generic_over_f32() {
        let model = ScalarNoiseModel::new(1.0f32).unwrap();
        assert_eq!(posterior_mean_1d(2.0f32, &model), 1.0);
        assert!((x0_estimate_1d(2.0f32, &model) - 2f32.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn monte_carlo_requires_samples() {
        let f = |y: f64| y;
        assert!(monte_carlo_mse(Estimator::Deterministic(&f), &m(1.0), 0, RngKey::new(0, 0)).is_err());
    }

    #[test]
    fn monte_carlo_identity_estimator_measures_noise_power() {
        let f = |y: f64| y;
        let r = monte_carlo_mse(Estimator::Deterministic(&f), &m(1.0), 200_000, RngKey::new(3, 1)).unwrap();
        assert!((r.mse - 1.0).abs() < 0.01, "{r:?}");
    }
}
