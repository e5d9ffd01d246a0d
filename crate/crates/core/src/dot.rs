//! Gaussian optimal-transport baseline: transport the posterior-mean outputs
//! onto the ground-truth distribution with the closed-form OT map between
//! Gaussian fits of both.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::Regressor;
use crate::linalg::{check_symmetric, matrix_sqrt_psd, sqrt_and_inv_sqrt_pd};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Vectors longer than this are transported through an average-pooled
/// grayscale projection.
pub const MAX_DIRECT_DIM: usize = 4096;

/// Regularization `λ = RIDGE · trace(Σ)/d` added to fitted covariances.
pub const RIDGE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianStats<T = f64> {
    pub mean: Vec<T>,
    pub cov: Tensor<T>,
    pub count: usize,
}

impl<T: Scalar> GaussianStats<T> {
    /// Stats from known moments (no sampling); the covariance is validated
    /// but not regularized.
    pub fn from_moments(mean: Vec<T>, cov: Tensor<T>) -> Result<Self> {
        cov.expect_shape(&[mean.len(), mean.len()])?;
        check_symmetric(&cov)?;
        Ok(Self { mean, cov, count: 0 })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Sample mean and `1/(n−1)` covariance of the rows of `samples`, plus `λI`.
pub fn fit_gaussian<T: Scalar>(samples: &Tensor<T>) -> Result<GaussianStats<T>> {
    let (n, d) = samples.dims2()?;
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let mut mean = vec![0.0f64; d];
    for i in 0..n {
        for (m, &v) in mean.iter_mut().zip(samples.row(i)) {
            *m += v.as_f64();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<f64> = (0..n * d)
        .map(|k| samples.data()[k].as_f64() - mean[k % d])
        .collect();
    let mut cov = vec![0.0f64; d * d];
    f64::gemm(d, n, d, 1.0 / (n as f64 - 1.0), &centered, true, &centered, false, 0.0, &mut cov);
    for i in 0..d {
        for j in (i + 1)..d {
            let s = 0.5 * (cov[i * d + j] + cov[j * d + i]);
            cov[i * d + j] = s;
            cov[j * d + i] = s;
        }
    }
    let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    // A zero-variance sample still gets a positive-definite fit.
    let lambda = if trace > 0.0 { RIDGE * trace / d as f64 } else { RIDGE };
    for i in 0..d {
        cov[i * d + i] += lambda;
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sample covariance".into()));
    }
    Ok(GaussianStats {
        mean: mean.into_iter().map(T::of).collect(),
        cov: Tensor::new(vec![d, d], cov.into_iter().map(T::of).collect())?,
        count: n,
    })
}

/// `x ↦ A x + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineMap<T = f64> {
    pub matrix: Tensor<T>,
    pub offset: Vec<T>,
}

impl<T: Scalar> AffineMap<T> {
    pub fn identity(d: usize) -> Self {
        Self {
            matrix: Tensor::identity(d),
            offset: vec![T::zero(); d],
        }
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    /// Apply to every row of `x: n × d`.
    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, d) = x.dims2()?;
        if d != self.dim() {
            return Err(Error::ShapeMismatch {
                expected: vec![n, self.dim()],
                actual: vec![n, d],
            });
        }
        let mut out = vec![T::zero(); n * d];
        T::gemm(n, d, d, T::one(), x.data(), false, self.matrix.data(), true, T::zero(), &mut out);
        for row in out.chunks_mut(d) {
            for (o, &b) in row.iter_mut().zip(&self.offset) {
                *o += b;
            }
        }
        Tensor::new(vec![n, d], out)
    }
}

/// Closed-form OT map between Gaussians:
/// `A = Σs^{-1/2} (Σs^{1/2} Σt Σs^{1/2})^{1/2} Σs^{-1/2}`, `b = μt − A μs`.
pub fn gaussian_ot_map<T: Scalar>(src: &GaussianStats<T>, tgt: &GaussianStats<T>) -> Result<AffineMap<T>> {
    let d = src.dim();
    if tgt.dim() != d {
        return Err(Error::ShapeMismatch {
            expected: vec![d],
            actual: vec![tgt.dim()],
        });
    }
    let (s_half, s_inv_half) = sqrt_and_inv_sqrt_pd(&src.cov)?;
    let middle = matrix_sqrt_psd(&s_half.matmul(&tgt.cov)?.matmul(&s_half)?)?;
    let mut a = s_inv_half.matmul(&middle)?.matmul(&s_inv_half)?;
    symmetrize(&mut a, d);
    let a_mu = a.matvec(&src.mean)?;
    let offset: Vec<T> = tgt.mean.iter().zip(&a_mu).map(|(&m, &am)| m - am).collect();
    if !a.all_finite() || offset.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Gaussian OT map".into()));
    }
    Ok(AffineMap { matrix: a, offset })
}

fn symmetrize<T: Scalar>(a: &mut Tensor<T>, d: usize) {
    let data = a.data_mut();
    for i in 0..d {
        for j in (i + 1)..d {
            let s = (data[i * d + j] + data[j * d + i]) * T::of(0.5);
            data[i * d + j] = s;
            data[j * d + i] = s;
        }
    }
}

/// Average-pool grayscale projection of flattened `H×W×C` images.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pooling {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub factor: usize,
}

impl Pooling {
    /// Smallest integer pooling factor bringing the projection to at most
    /// [`MAX_DIRECT_DIM`] values (so at most 64×64 for square images).
    pub fn for_image(height: usize, width: usize, channels: usize) -> Self {
        let mut factor = 1;
        while height.div_ceil(factor) * width.div_ceil(factor) > MAX_DIRECT_DIM {
            factor += 1;
        }
        Self {
            height,
            width,
            channels,
            factor,
        }
    }

    pub fn pooled_dims(&self) -> (usize, usize) {
        (self.height.div_ceil(self.factor), self.width.div_ceil(self.factor))
    }

    pub fn full_dim(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn pooled_dim(&self) -> usize {
        let (h, w) = self.pooled_dims();
        h * w
    }

    fn cell(&self, i: usize, j: usize) -> usize {
        let (_, pw) = self.pooled_dims();
        (i / self.factor) * pw + j / self.factor
    }

    /// `n × HWC` to `n × h'w'` (mean over each block and every channel).
    pub fn project<T: Scalar>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, d) = x.dims2()?;
        if d != self.full_dim() {
            return Err(Error::ShapeMismatch {
                expected: vec![n, self.full_dim()],
                actual: vec![n, d],
            });
        }
        let p = self.pooled_dim();
        let mut counts = vec![0usize; p];
        for i in 0..self.height {
            for j in 0..self.width {
                counts[self.cell(i, j)] += self.channels;
            }
        }
        let mut out = vec![T::zero(); n * p];
        for s in 0..n {
            let row = x.row(s);
            let dst = &mut out[s * p..(s + 1) * p];
            for i in 0..self.height {
                for j in 0..self.width {
                    let base = (i * self.width + j) * self.channels;
                    let c = self.cell(i, j);
                    for k in 0..self.channels {
                        dst[c] += row[base + k];
                    }
                }
            }
            for (v, &cnt) in dst.iter_mut().zip(&counts) {
                *v /= T::of(cnt as f64);
            }
        }
        Tensor::new(vec![n, p], out)
    }

    /// Add a pooled-space correction back to every pixel and channel of its block.
    pub fn lift_residual<T: Scalar>(&self, x: &Tensor<T>, delta: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, _) = x.dims2()?;
        delta.expect_shape(&[n, self.pooled_dim()])?;
        let mut out = x.clone();
        for s in 0..n {
            let dr = delta.row(s).to_vec();
            let row = out.row_mut(s);
            for i in 0..self.height {
                for j in 0..self.width {
                    let base = (i * self.width + j) * self.channels;
                    let v = dr[self.cell(i, j)];
                    for k in 0..self.channels {
                        row[base + k] += v;
                    }
                }
            }
        }
        Ok(out)
    }
}

/// A fitted DOT model: the OT map, optionally acting on a pooled projection
/// with the residual carried untouched.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DotModel<T = f64> {
    pub map: AffineMap<T>,
    pub pooling: Option<Pooling>,
}

impl<T: Scalar> DotModel<T> {
    /// Fit on posterior-mean outputs (`source`) and ground-truth samples
    /// (`target`), both `n × d`. `image` gives the `(H, W, C)` layout used
    /// for pooling when `d` exceeds [`MAX_DIRECT_DIM`].
    pub fn fit(source: &Tensor<T>, target: &Tensor<T>, image: Option<(usize, usize, usize)>) -> Result<Self> {
        let (_, d) = source.dims2()?;
        let (_, dt) = target.dims2()?;
        if d != dt {
            return Err(Error::ShapeMismatch {
                expected: vec![d],
                actual: vec![dt],
            });
        }
        if d <= MAX_DIRECT_DIM {
            let map = gaussian_ot_map(&fit_gaussian(source)?, &fit_gaussian(target)?)?;
            return Ok(Self { map, pooling: None });
        }
        let (h, w, c) = image.ok_or_else(|| {
            Error::InvalidArgument(format!("dimension {d} needs an image layout for the pooled projection"))
        })?;
        let pooling = Pooling::for_image(h, w, c);
        let map = gaussian_ot_map(
            &fit_gaussian(&pooling.project(source)?)?,
            &fit_gaussian(&pooling.project(target)?)?,
        )?;
        Ok(Self {
            map,
            pooling: Some(pooling),
        })
    }

    /// Transport already-computed posterior-mean outputs.
    pub fn transport(&self, xstar: &Tensor<T>) -> Result<Tensor<T>> {
        match &self.pooling {
            None => self.map.apply(xstar),
            Some(p) => {
                let low = p.project(xstar)?;
                let moved = self.map.apply(&low)?;
                p.lift_residual(xstar, &moved.sub(&low)?)
            }
        }
    }
}

/// `A · f*(y) + b`.
pub fn dot_restore<T: Scalar, R: Regressor<T> + ?Sized>(fstar: &R, model: &DotModel<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    model.transport(&fstar.predict(y)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::FnRegressor;
    use crate::oracle::{x0_estimate_1d, ScalarNoiseModel};
    use crate::rng::{sample_standard_normal, RngKey};
    use proptest::prelude::*;

    fn stats(mean: &[f64], cov: &[Vec<f64>]) -> GaussianStats<f64> {
        GaussianStats::from_moments(mean.to_vec(), Tensor::matrix(cov).unwrap()).unwrap()
    }

    #[test]
    fn constant_samples_give_ridge_cov() {
        let s = Tensor::full(&[5, 2], 0.7f64);
        let g = fit_gaussian(&s).unwrap();
        assert!(g.mean.iter().all(|&m| (m - 0.7).abs() < 1e-15));
        assert_eq!(g.cov.at(0, 1), 0.0);
        assert!(g.cov.at(0, 0) > 0.0 && g.cov.at(0, 0) < 1e-5);
    }

    #[test]
    fn two_point_fit() {
        let s = Tensor::matrix(&[vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap();
        let g = fit_gaussian(&s).unwrap();
        assert_eq!(g.mean, vec![1.0, 0.0]);
        let lambda = RIDGE * 2.0 / 2.0;
        assert!((g.cov.at(0, 0) - (2.0 + lambda)).abs() < 1e-15);
        assert!((g.cov.at(1, 1) - lambda).abs() < 1e-15);
        assert_eq!(g.count, 2);
        assert!(matches!(
            fit_gaussian(&Tensor::<f64>::zeros(&[1, 2])),
            Err(Error::TooFewSamples { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn standard_normal_cov_near_identity() {
        let s = sample_standard_normal::<f64>(RngKey::new(11, 0), &[100_000, 3]);
        let g = fit_gaussian(&s).unwrap();
        assert!(g.cov.sub(&Tensor::identity(3)).unwrap().max_abs() < 0.02);
    }

    #[test]
    fn identity_map() {
        let g = stats(&[1.0, -2.0], &[vec![2.0, 0.5], vec![0.5, 1.0]]);
        let m = gaussian_ot_map(&g, &g).unwrap();
        assert!(m.matrix.sub(&Tensor::identity(2)).unwrap().max_abs() < 1e-8);
        assert!(m.offset.iter().all(|b| b.abs() < 1e-8));
    }

    #[test]
    fn one_dimensional_map() {
        let m = gaussian_ot_map(&stats(&[0.0], &[vec![1.0]]), &stats(&[2.0], &[vec![4.0]])).unwrap();
        let out = m.apply(&Tensor::new(vec![1, 1], vec![1.0]).unwrap()).unwrap();
        assert!((out.data()[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_map() {
        let src = stats(&[0.0, 0.0], &[vec![1.0, 0.0], vec![0.0, 4.0]]);
        let tgt = stats(&[0.0, 0.0], &[vec![4.0, 0.0], vec![0.0, 1.0]]);
        let m = gaussian_ot_map(&src, &tgt).unwrap();
        assert!(m.matrix.sub(&Tensor::diag(&[2.0, 0.5])).unwrap().max_abs() < 1e-12);
        let out = m.apply(&Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap()).unwrap();
        assert!((out.data()[0] - 2.0).abs() < 1e-12 && (out.data()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn singular_source_rejected() {
        let src = stats(&[0.0, 0.0], &[vec![1.0, 1.0], vec![1.0, 1.0]]);
        let tgt = stats(&[0.0, 0.0], &[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(matches!(gaussian_ot_map(&src, &tgt), Err(Error::Singular(_))));
    }

    #[test]
    fn scalar_gaussian_dot_is_x0() {
        for sigma in [0.3, 1.0, 2.0] {
            let model = ScalarNoiseModel::new(sigma).unwrap();
            let v = 1.0 / (1.0 + sigma * sigma);
            let map = gaussian_ot_map(&stats(&[0.0], &[vec![v]]), &stats(&[0.0], &[vec![1.0]])).unwrap();
            let dm = DotModel { map, pooling: None };
            let fstar = FnRegressor(move |y: &Tensor<f64>| Ok(y.scale(v)));
            let ys: Vec<f64> = (0..=80).map(|i| -4.0 + 0.1 * i as f64).collect();
            let y = Tensor::new(vec![ys.len(), 1], ys.clone()).unwrap();
            let out = dot_restore(&fstar, &dm, &y).unwrap();
            for (o, &yv) in out.data().iter().zip(&ys) {
                assert!((o - x0_estimate_1d(yv, &model)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn pushforward_matches_target_moments() {
        let n = 100_000;
        let z = sample_standard_normal::<f64>(RngKey::new(1, 1), &[n, 2]);
        // Source: correlated Gaussian via a fixed mixing matrix.
        let mix = Tensor::matrix(&[vec![1.0, 0.0], vec![0.6, 0.5]]).unwrap();
        let src = z.matmul(&mix.transpose().unwrap()).unwrap();
        let tgt_mean = [0.5, -1.0];
        let tgt = stats(&tgt_mean, &[vec![2.0, -0.3], vec![-0.3, 0.5]]);
        let m = gaussian_ot_map(&fit_gaussian(&src).unwrap(), &tgt).unwrap();
        let moved = fit_gaussian(&m.apply(&src).unwrap()).unwrap();
        for (i, &mu) in tgt_mean.iter().enumerate() {
            assert!((moved.mean[i] - mu).abs() < 0.02);
            for j in 0..2 {
                let t = tgt.cov.at(i, j);
                assert!((moved.cov.at(i, j) - t).abs() <= 0.02 * t.abs().max(0.3));
            }
        }
    }

    #[test]
    fn pooled_projection_round_trip() {
        let p = Pooling::for_image(130, 70, 3);
        assert!(p.pooled_dim() <= MAX_DIRECT_DIM);
        assert_eq!(p.factor, 2);
        let x = Tensor::full(&[2, p.full_dim()], 0.25f64);
        let low = p.project(&x).unwrap();
        assert!(low.data().iter().all(|v| (v - 0.25).abs() < 1e-15));
        let back = p.lift_residual(&x, &Tensor::full(&[2, p.pooled_dim()], 0.5)).unwrap();
        assert!(back.data().iter().all(|v| (v - 0.75).abs() < 1e-15));
    }

    #[test]
    fn pooled_model_needs_layout() {
        let x = Tensor::<f64>::zeros(&[3, MAX_DIRECT_DIM + 1]);
        assert!(DotModel::fit(&x, &x, None).is_err());
    }

    proptest! {
        #[test]
        fn self_map_is_identity(a in -2.0f64..2.0, b in -2.0f64..2.0, c in 0.1f64..3.0) {
            // Random PD covariance as LLᵀ + cI.
            let l = Tensor::matrix(&[vec![a, 0.0], vec![b, 1.0]]).unwrap();
            let cov = l.matmul(&l.transpose().unwrap()).unwrap().add(&Tensor::diag(&[c, c])).unwrap();
            let g = GaussianStats::from_moments(vec![a, b], cov).unwrap();
            let m = gaussian_ot_map(&g, &g).unwrap();
            prop_assert!(m.matrix.sub(&Tensor::identity(2)).unwrap().max_abs() < 1e-8);
        }
    }
}
