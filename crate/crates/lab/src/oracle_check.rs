//! Closed-form consistency checks that need no training: the scalar
//! Gaussian oracles, the Fréchet and OT closed forms and the backprop
//! gradient against finite differences.

use pmrf_core::dot::{gaussian_ot_map, DotModel, GaussianStats};
use pmrf_core::flows::{euler_integrate, ElementwiseField};
use pmrf_core::metrics::frechet_gaussian;
use pmrf_core::neural::{mlp_init, Batch, MlpShape};
use pmrf_core::oracle::{
    analytic_mses, flowy_ode_solution_1d, monte_carlo_mse, pmrf_ode_solution_1d, pmrf_vector_field_1d,
    posterior_mean_1d, posterior_sample_1d, x0_estimate_1d, Estimator, ScalarNoiseModel,
};
use pmrf_core::rng::{sample_standard_normal, RngKey};
use pmrf_core::{Mlp64, Tensor, Tensor64};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Noise levels and the grid the scalar checks sweep.
pub const SIGMAS: [f64; 3] = [0.3, 1.0, 2.0];

pub fn y_grid() -> Vec<f64> {
    (0..=80).map(|i| -4.0 + 0.1 * i as f64).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl Check {
    fn below(name: &str, value: f64, tolerance: f64, detail: String) -> Self {
        Self {
            name: name.into(),
            passed: value < tolerance,
            value,
            tolerance,
            detail,
        }
    }
}

/// Max `|analytic PMRF endpoint − X̂₀|` over the sigma list and y grid.
pub fn endpoint_identity_error() -> f64 {
    let mut worst = 0.0f64;
    for s in SIGMAS {
        let m = ScalarNoiseModel::new(s).expect("positive sigma");
        for y in y_grid() {
            let end = pmrf_ode_solution_1d(posterior_mean_1d(y, &m), 1.0, &m);
            worst = worst.max((end - x0_estimate_1d(y, &m)).abs());
        }
    }
    worst
}

/// Max relative error of `k`-step Euler on the oracle field against `X̂₀`
/// (absolute where `X̂₀ = 0`).
pub fn euler_endpoint_error(k: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for s in SIGMAS {
        let m = ScalarNoiseModel::new(s)?;
        let ys = y_grid();
        let z0 = Tensor::new(vec![ys.len(), 1], ys.iter().map(|&y| posterior_mean_1d(y, &m)).collect())?;
        let field = ElementwiseField(move |z: f64, t: f64| pmrf_vector_field_1d(z, t, &m));
        let end = euler_integrate(&field, &z0, k, None)?;
        for (&e, &y) in end.data().iter().zip(&ys) {
            let target = x0_estimate_1d(y, &m);
            let scale = if target == 0.0 { 1.0 } else { target.abs() };
            worst = worst.max((e - target).abs() / scale);
        }
    }
    Ok(worst)
}

/// Max `|flow-from-Y endpoint − PMRF endpoint|` over the sigma list and grid.
pub fn flowy_agreement_error() -> f64 {
    let mut worst = 0.0f64;
    for s in SIGMAS {
        let m = ScalarNoiseModel::new(s).expect("positive sigma");
        for y in y_grid() {
            let a = flowy_ode_solution_1d(y, 1.0, &m);
            let b = pmrf_ode_solution_1d(posterior_mean_1d(y, &m), 1.0, &m);
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// Monte Carlo MSEs of the MMSE estimator, the posterior sampler and `X̂₀`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MseGeometry {
    pub mmse: f64,
    pub sampler: f64,
    pub x0: f64,
}

pub fn mse_geometry(sigma: f64, n: usize, key: RngKey) -> Result<MseGeometry> {
    let m = ScalarNoiseModel::new(sigma)?;
    let mmse = monte_carlo_mse(Estimator::Deterministic(&|y| posterior_mean_1d(y, &m)), &m, n, key)?;
    let sampler = monte_carlo_mse(
        Estimator::Sampler(&|y, rng| posterior_sample_1d(y, &m, rng)),
        &m,
        n,
        key,
    )?;
    let x0 = monte_carlo_mse(Estimator::Deterministic(&|y| x0_estimate_1d(y, &m)), &m, n, key)?;
    Ok(MseGeometry {
        mmse: mmse.mse,
        sampler: sampler.mse,
        x0: x0.mse,
    })
}

fn stats(mean: &[f64], cov: &[Vec<f64>]) -> Result<GaussianStats<f64>> {
    Ok(GaussianStats::from_moments(mean.to_vec(), Tensor::matrix(cov)?)?)
}

/// Worst deviation over the Fréchet closed-form cases.
pub fn frechet_closed_form_error() -> Result<(f64, f64)> {
    let i2 = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    let a = stats(&[0.0, 0.0], &i2)?;
    let corr = stats(&[0.3, -0.2], &[vec![2.0, 0.4], vec![0.4, 0.7]])?;
    let identity = frechet_gaussian(&a, &a)?.max(frechet_gaussian(&corr, &corr)?);
    let cases = [
        (stats(&[0.0], &[vec![1.0]])?, stats(&[0.0], &[vec![4.0]])?, 1.0),
        (stats(&[0.0], &[vec![1.0]])?, stats(&[3.0], &[vec![1.0]])?, 3.0),
        (a.clone(), stats(&[1.0, 0.0], &i2)?, 1.0),
        // Diagonal 2-D variance shift: sqrt((1-2)^2 + (1-3)^2).
        (a.clone(), stats(&[0.0, 0.0], &[vec![4.0, 0.0], vec![0.0, 9.0]])?, 5f64.sqrt()),
        // Mean and variance shift together: sqrt(3^2 + 4^2 + (2-1)^2).
        (a, stats(&[3.0, 4.0], &[vec![4.0, 0.0], vec![0.0, 1.0]])?, 26f64.sqrt()),
    ];
    let mut worst = 0.0f64;
    for (x, y, want) in cases {
        worst = worst.max((frechet_gaussian(&x, &y)? - want).abs());
    }
    Ok((identity, worst))
}

/// Max `|DOT restore − X̂₀|` in the scalar Gaussian case with analytic stats.
pub fn dot_x0_error() -> Result<f64> {
    let mut worst = 0.0f64;
    for s in SIGMAS {
        let m = ScalarNoiseModel::new(s)?;
        let v = 1.0 / (1.0 + s * s);
        let model = DotModel {
            map: gaussian_ot_map(&stats(&[0.0], &[vec![v]])?, &stats(&[0.0], &[vec![1.0]])?)?,
            pooling: None,
        };
        let ys = y_grid();
        let xstar = Tensor::new(vec![ys.len(), 1], ys.iter().map(|&y| posterior_mean_1d(y, &m)).collect())?;
        let out = model.transport(&xstar)?;
        for (&o, &y) in out.data().iter().zip(&ys) {
            worst = worst.max((o - x0_estimate_1d(y, &m)).abs());
        }
    }
    Ok(worst)
}

/// Worst relative error between backprop and central differences over
/// `trials` random networks and batches.
///
/// Relative error is `|a − n| / max(|a|, |n|, floor)` with
/// `floor = 1e-6` so that vanishing gradients compare absolutely.
pub fn gradient_check(trials: usize, key: RngKey) -> Result<f64> {
    const H: f64 = 1e-5;
    const FLOOR: f64 = 1e-6;
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let k = key.derive(trial as u64);
        let mut rng = k.derive_str("arch").rng();
        let depth = rng.random_range(1..=3);
        let mut sizes = vec![rng.random_range(1..=4)];
        sizes.extend((0..depth).map(|_| rng.random_range(2..=6)));
        sizes.push(rng.random_range(1..=3));
        let time_frequencies = if rng.random_bool(0.5) { rng.random_range(1..=3) } else { 0 };
        let cond_width = if rng.random_bool(0.5) { rng.random_range(1..=2) } else { 0 };
        let batch = rng.random_range(1..=4);
        let shape = MlpShape {
            layer_sizes: sizes.clone(),
            cond_width,
            time_frequencies,
        };
        let mut params: Mlp64 = mlp_init(&shape, k.derive_str("init"))?;
        // Non-zero biases so every term of the gradient is exercised.
        for (l, layer) in params.layers.iter_mut().enumerate() {
            let b = sample_standard_normal::<f64>(k.derive_str("bias").derive(l as u64), layer.bias.shape());
            layer.bias = b.scale(0.3);
        }
        let data = Batch {
            input: sample_standard_normal(k.derive_str("x"), &[batch, sizes[0]]),
            t: (time_frequencies > 0).then(|| (0..batch).map(|_| rng.random_range(0.0..1.0)).collect()),
            cond: (cond_width > 0).then(|| sample_standard_normal(k.derive_str("c"), &[batch, cond_width])),
            target: sample_standard_normal(k.derive_str("y"), &[batch, *sizes.last().expect("sizes")]),
        };
        let (_, grads) = params.loss_and_grad(&data)?;
        for l in 0..params.layers.len() {
            for which in 0..2 {
                let len = if which == 0 {
                    params.layers[l].weight.len()
                } else {
                    params.layers[l].bias.len()
                };
                for i in 0..len {
                    let orig = *param_mut(&mut params, l, which, i);
                    *param_mut(&mut params, l, which, i) = orig + H;
                    let (lp, _) = params.loss_and_grad(&data)?;
                    *param_mut(&mut params, l, which, i) = orig - H;
                    let (lm, _) = params.loss_and_grad(&data)?;
                    *param_mut(&mut params, l, which, i) = orig;
                    let numeric = (lp - lm) / (2.0 * H);
                    let analytic = if which == 0 {
                        grads.layers[l].weight.data()[i]
                    } else {
                        grads.layers[l].bias.data()[i]
                    };
                    let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR);
                    worst = worst.max(rel);
                }
            }
        }
    }
    Ok(worst)
}

fn param_mut(p: &mut Mlp64, layer: usize, which: usize, i: usize) -> &mut f64 {
    let t: &mut Tensor64 = if which == 0 {
        &mut p.layers[layer].weight
    } else {
        &mut p.layers[layer].bias
    };
    &mut t.data_mut()[i]
}

/// Sample count for the Monte Carlo MSE check.
pub const DEFAULT_MC_SAMPLES: usize = 1_000_000;

/// Run the whole suite.
pub fn run_suite(seed: u64, mc_samples: usize) -> Result<Vec<Check>> {
    let key = RngKey::new(seed, 0);
    let mut out = vec![
        Check::below("pmrf_endpoint_identity", endpoint_identity_error(), 1e-12, "analytic ODE endpoint vs X0".into()),
        Check::below("pmrf_euler_k1000", euler_endpoint_error(1000)?, 1e-3, "relative error of K=1000 Euler vs X0".into()),
        Check::below("flowy_equivalence", flowy_agreement_error(), 1e-12, "flow-from-Y vs PMRF analytic endpoints".into()),
    ];
    let g = mse_geometry(1.0, mc_samples, key.derive_str("mc"))?;
    let exact = analytic_mses(&ScalarNoiseModel::new(1.0)?);
    out.push(Check::below("mmse", (g.mmse - exact.mmse).abs(), 0.005, format!("MC {} vs 0.5", g.mmse)));
    out.push(Check::below("posterior_sampler_mse", (g.sampler - exact.posterior_sampler_mse).abs(), 0.01, format!("MC {} vs 1.0", g.sampler)));
    out.push(Check::below("x0_mse", (g.x0 - 0.5858).abs(), 0.01, format!("MC {} vs 0.5858", g.x0)));
    let ordered = g.mmse < g.x0 && g.x0 < 2.0 * g.mmse;
    out.push(Check {
        name: "mse_ordering".into(),
        passed: ordered,
        value: f64::from(u8::from(ordered)),
        tolerance: 1.0,
        detail: "MMSE < X0-MSE < 2 MMSE".into(),
    });
    let (identity, closed) = frechet_closed_form_error()?;
    out.push(Check::below("frechet_identity", identity, 1e-10, "d(a, a)".into()));
    out.push(Check::below("frechet_closed_forms", closed, 1e-8, "mean/variance shift cases".into()));
    out.push(Check::below("dot_equals_x0", dot_x0_error()?, 1e-6, "scalar Gaussian DOT vs X0".into()));
    out.push(Check::below("gradient_check", gradient_check(100, key.derive_str("grad"))?, 1e-4, "backprop vs central differences".into()));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_checks_pass() {
        assert!(endpoint_identity_error() < 1e-12);
        assert!(flowy_agreement_error() < 1e-12);
        assert!(euler_endpoint_error(1000).unwrap() < 1e-3);
        let (i, c) = frechet_closed_form_error().unwrap();
        assert!(i < 1e-10 && c < 1e-8);
        assert!(dot_x0_error().unwrap() < 1e-6);
    }

    #[test]
    fn gradient_check_small() {
        assert!(gradient_check(10, RngKey::new(1, 0)).unwrap() < 1e-4);
    }

    #[test]
    fn suite_with_few_samples_reports_every_check() {
        let checks = run_suite(0, 10_000).unwrap();
        assert_eq!(checks.len(), 11);
    }
}
