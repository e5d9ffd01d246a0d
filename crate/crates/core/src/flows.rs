//! Rectified-flow frameworks for restoration.
//!
//! All four methods share one loss, `‖(Z₁ − Z₀) − v(Z_t, t[, c])‖²` with
//! `Z_t = t Z₁ + (1 − t) Z₀` and `Z₁ = X`; they differ only in the source
//! `Z₀` and the optional condition `c`:
//!
//! | method          | `Z₀`                 | condition |
//! |-----------------|----------------------|-----------|
//! | `pmrf`          | `f*(Y) + σ_s ε`      | none      |
//! | `cond_on_y`     | `ε`                  | `Y`       |
//! | `cond_on_xstar` | `ε`                  | `f*(Y)`   |
//! | `flow_from_y`   | `Y† + σ_s ε`         | none      |
//!
//! Inference is `K` Euler steps at times `i/K`, `i = 0..K-1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{fit, mlp_init, Batch, Grads, MlpParams, MlpShape, TrainConfig, TrainReport};
use crate::rng::{permutation, sample_standard_normal, sample_uniform, RngKey};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowMethod {
    Pmrf,
    CondOnY,
    CondOnXstar,
    FlowFromY,
}

impl FlowMethod {
    pub const ALL: [FlowMethod; 4] = [Self::Pmrf, Self::CondOnY, Self::CondOnXstar, Self::FlowFromY];

    pub fn name(self) -> &'static str {
        match self {
            Self::Pmrf => "pmrf",
            Self::CondOnY => "cond_on_y",
            Self::CondOnXstar => "cond_on_xstar",
            Self::FlowFromY => "flow_from_y",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown flow method {s:?}")))
    }

    /// Whether training and inference need the posterior-mean predictor.
    pub fn needs_posterior_mean(self) -> bool {
        matches!(self, Self::Pmrf | Self::CondOnXstar)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub method: FlowMethod,
    pub sigma_s: f64,
    pub steps_k: usize,
}

impl FlowSpec {
    pub fn new(method: FlowMethod, sigma_s: f64, steps_k: usize) -> Result<Self> {
        let s = Self { method, sigma_s, steps_k };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_s >= 0.0) {
            return Err(Error::InvalidArgument(format!("sigma_s {} is negative", self.sigma_s)));
        }
        if self.steps_k == 0 {
            return Err(Error::InvalidArgument("at least one Euler step is required".into()));
        }
        Ok(())
    }
}

/// Batched source/target pairs (`B × d` each) plus the optional condition.
#[derive(Clone, Debug, PartialEq)]
pub struct Coupling<T = f64> {
    pub z0: Tensor<T>,
    pub z1: Tensor<T>,
    pub cond: Option<Tensor<T>>,
}

/// A time-dependent vector field evaluated on a batch `z: B × d`.
pub trait VectorField<T: Scalar> {
    fn velocity(&self, z: &Tensor<T>, t: T, cond: Option<&Tensor<T>>) -> Result<Tensor<T>>;
}

impl<T: Scalar> VectorField<T> for MlpParams<T> {
    fn velocity(&self, z: &Tensor<T>, t: T, cond: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let (b, _) = z.dims2()?;
        self.forward(z, Some(&vec![t; b]), cond)
    }
}

/// Vector field from a closure `(z, t, cond) -> v`.
pub struct FnField<F>(pub F);

impl<T, F> VectorField<T> for FnField<F>
where
    T: Scalar,
    F: Fn(&Tensor<T>, T, Option<&Tensor<T>>) -> Result<Tensor<T>>,
{
    fn velocity(&self, z: &Tensor<T>, t: T, cond: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        (self.0)(z, t, cond)
    }
}

/// Elementwise scalar field `v(z, t)` applied to every component.
pub struct ElementwiseField<F>(pub F);

impl<T, F> VectorField<T> for ElementwiseField<F>
where
    T: Scalar,
    F: Fn(T, T) -> T,
{
    fn velocity(&self, z: &Tensor<T>, t: T, _cond: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        Ok(z.map(|v| (self.0)(v, t)))
    }
}

/// Posterior-mean predictor `f*` mapping measurements `B × d_y` to `B × d_x`.
pub trait Regressor<T: Scalar> {
    fn predict(&self, y: &Tensor<T>) -> Result<Tensor<T>>;
}

impl<T: Scalar> Regressor<T> for MlpParams<T> {
    fn predict(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward(y, None, None)
    }
}

/// Regressor from a closure.
pub struct FnRegressor<F>(pub F);

impl<T, F> Regressor<T> for FnRegressor<F>
where
    T: Scalar,
    F: Fn(&Tensor<T>) -> Result<Tensor<T>>,
{
    fn predict(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        (self.0)(y)
    }
}

/// Stratified times: `t_i = (π(i) + u_i) / B` for a random permutation `π`,
/// so each stratum `[j/B, (j+1)/B)` holds exactly one sample.
pub fn sample_t_stratified(batch_size: usize, key: RngKey) -> Result<Vec<f64>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("stratified sampling needs a positive batch".into()));
    }
    let perm = permutation(key.derive_str("perm"), batch_size);
    let u = sample_uniform(key.derive_str("jitter"), batch_size);
    Ok(stratified_from(&perm, &u))
}

/// Deterministic core of [`sample_t_stratified`].
pub fn stratified_from(perm: &[usize], u: &[f64]) -> Vec<f64> {
    let b = perm.len() as f64;
    perm.iter()
        .zip(u)
        .map(|(&p, &ui)| ((p as f64 + ui) / b).min(1.0 - f64::EPSILON))
        .collect()
}

/// Build the training pair for one batch.
///
/// `x` is `B × d`; `y` is `B × d_y` (for `flow_from_y` it must already be
/// up-scaled to `d`); `xstar` is `f*(y)` and is required by `pmrf` and
/// `cond_on_xstar`.
pub fn make_coupling<T: Scalar>(
    method: FlowMethod,
    x: &Tensor<T>,
    y: &Tensor<T>,
    xstar: Option<&Tensor<T>>,
    sigma_s: f64,
    key: RngKey,
) -> Result<Coupling<T>> {
    let (b, _) = x.dims2()?;
    let (by, _) = y.dims2()?;
    if by != b {
        return Err(Error::ShapeMismatch {
            expected: vec![b],
            actual: vec![by],
        });
    }
    let noise = || sample_standard_normal::<T>(key, x.shape());
    let plus_noise = |base: &Tensor<T>| -> Result<Tensor<T>> {
        base.expect_shape(x.shape())?;
        if sigma_s == 0.0 {
            return Ok(base.clone());
        }
        let mut z = base.clone();
        z.axpy(T::of(sigma_s), &noise())?;
        Ok(z)
    };
    let need_xstar = || {
        xstar.ok_or_else(|| Error::InvalidArgument(format!("{} needs the posterior-mean prediction", method.name())))
    };
    let (z0, cond) = match method {
        FlowMethod::Pmrf => (plus_noise(need_xstar()?)?, None),
        FlowMethod::FlowFromY => (plus_noise(y)?, None),
        FlowMethod::CondOnY => (noise(), Some(y.clone())),
        FlowMethod::CondOnXstar => {
            let xs = need_xstar()?;
            xs.expect_shape(x.shape())?;
            (noise(), Some(xs.clone()))
        }
    };
    Ok(Coupling {
        z0,
        z1: x.clone(),
        cond,
    })
}

/// Batch estimate of the rectified-flow loss and its gradient, with one time
/// per pair.
pub fn rf_training_step<T: Scalar>(vparams: &MlpParams<T>, coupling: &Coupling<T>, t: &[f64]) -> Result<(T, Grads<T>)> {
    vparams.loss_and_grad(&rf_batch(coupling, t)?)
}

fn rf_batch<T: Scalar>(c: &Coupling<T>, t: &[f64]) -> Result<Batch<T>> {
    c.z1.expect_shape(c.z0.shape())?;
    let (b, d) = c.z0.dims2()?;
    if t.len() != b {
        return Err(Error::BadShape(format!("{} times for {b} pairs", t.len())));
    }
    let mut zt = Vec::with_capacity(b * d);
    let mut target = Vec::with_capacity(b * d);
    for (i, &ti) in t.iter().enumerate() {
        let ti = T::of(ti);
        for (&a, &z) in c.z0.row(i).iter().zip(c.z1.row(i)) {
            zt.push(ti * z + (T::one() - ti) * a);
            target.push(z - a);
        }
    }
    Ok(Batch {
        input: Tensor::new(vec![b, d], zt)?,
        t: Some(t.iter().map(|&v| T::of(v)).collect()),
        cond: c.cond.clone(),
        target: Tensor::new(vec![b, d], target)?,
    })
}

/// `K` explicit Euler steps `z ← z + v(z, i/K)/K` from `z0`.
pub fn euler_integrate<T: Scalar, V: VectorField<T> + ?Sized>(
    field: &V,
    z0: &Tensor<T>,
    steps_k: usize,
    cond: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    if steps_k == 0 {
        return Err(Error::InvalidArgument("at least one Euler step is required".into()));
    }
    let h = T::of(1.0 / steps_k as f64);
    let mut z = z0.clone();
    for i in 0..steps_k {
        let t = T::of(i as f64 / steps_k as f64);
        let v = field.velocity(&z, t, cond)?;
        z.axpy(h, &v)?;
        if !z.all_finite() {
            return Err(Error::NonFinite(format!("Euler state at step {i}")));
        }
    }
    Ok(z)
}

/// PMRF inference: `x̂ = f*(y) + σ_s ε`, then `K` Euler steps.
pub fn pmrf_restore<T: Scalar, R: Regressor<T> + ?Sized, V: VectorField<T> + ?Sized>(
    fstar: &R,
    vfield: &V,
    y: &Tensor<T>,
    spec: &FlowSpec,
    key: RngKey,
) -> Result<Tensor<T>> {
    if spec.method != FlowMethod::Pmrf {
        return Err(Error::InvalidArgument(format!("pmrf_restore got method {}", spec.method.name())));
    }
    spec.validate()?;
    let xstar = fstar.predict(y)?;
    let z0 = noisy(&xstar, spec.sigma_s, key);
    euler_integrate(vfield, &z0, spec.steps_k, None)
}

fn noisy<T: Scalar>(base: &Tensor<T>, sigma: f64, key: RngKey) -> Tensor<T> {
    if sigma == 0.0 {
        return base.clone();
    }
    let mut z = base.clone();
    let e = sample_standard_normal::<T>(key, base.shape());
    z.axpy(T::of(sigma), &e).expect("same shape");
    z
}

/// Baseline inference.
///
/// `input` is `y` for `cond_on_y`, `f*(y)` for `cond_on_xstar` and the
/// up-scaled `y†` for `flow_from_y`. `x_width` is the reconstruction width
/// (the field's output width).
pub fn baseline_restore<T: Scalar, V: VectorField<T> + ?Sized>(
    method: FlowMethod,
    vfield: &V,
    input: &Tensor<T>,
    x_width: usize,
    spec: &FlowSpec,
    key: RngKey,
) -> Result<Tensor<T>> {
    spec.validate()?;
    let (b, _) = input.dims2()?;
    match method {
        FlowMethod::Pmrf => Err(Error::InvalidArgument("use pmrf_restore for pmrf".into())),
        FlowMethod::CondOnY | FlowMethod::CondOnXstar => {
            let z0 = sample_standard_normal::<T>(key, &[b, x_width]);
            euler_integrate(vfield, &z0, spec.steps_k, Some(input))
        }
        FlowMethod::FlowFromY => {
            input.expect_shape(&[b, x_width])?;
            euler_integrate(vfield, &noisy(input, spec.sigma_s, key), spec.steps_k, None)
        }
    }
}

/// Training inputs for [`train_flow`] and [`reflow`]: rows of `x` pair with
/// rows of `y`. For `flow_from_y`, `y` must already be up-scaled to `x`'s
/// width.
#[derive(Clone, Copy, Debug)]
pub struct PairedData<'a, T: Scalar = f64> {
    pub x: &'a Tensor<T>,
    pub y: &'a Tensor<T>,
}

impl<T: Scalar> PairedData<'_, T> {
    fn check(&self) -> Result<(usize, usize, usize)> {
        let (n, dx) = self.x.dims2()?;
        let (ny, dy) = self.y.dims2()?;
        if n != ny {
            return Err(Error::ShapeMismatch {
                expected: vec![n, dy],
                actual: vec![ny, dy],
            });
        }
        if n == 0 {
            return Err(Error::TooFewSamples { needed: 1, got: 0 });
        }
        Ok((n, dx, dy))
    }
}

/// Fit the posterior-mean regressor `f_ω(y) ≈ E[X | Y = y]` by least squares.
/// Returns the EMA weights.
pub fn train_mmse<T: Scalar>(cfg: &TrainConfig, data: PairedData<'_, T>) -> Result<(MlpParams<T>, TrainReport)> {
    let (n, dx, dy) = data.check()?;
    let key = cfg.key().derive_str("mmse");
    let init = mlp_init(
        &MlpShape {
            layer_sizes: cfg.layer_sizes(dy, dx),
            cond_width: 0,
            time_frequencies: 0,
        },
        key.derive_str("init"),
    )?;
    fit(init, cfg, n, key, |idx, _| {
        Ok(Batch {
            input: data.y.gather_rows(idx),
            t: None,
            cond: None,
            target: data.x.gather_rows(idx),
        })
    })
}

fn field_shape(method: FlowMethod, cfg: &TrainConfig, dx: usize, dy: usize) -> MlpShape {
    MlpShape {
        layer_sizes: cfg.layer_sizes(dx, dx),
        cond_width: match method {
            FlowMethod::CondOnY => dy,
            FlowMethod::CondOnXstar => dx,
            _ => 0,
        },
        time_frequencies: cfg.time_frequencies,
    }
}

fn predict_all<T: Scalar, R: Regressor<T> + ?Sized>(fstar: &R, y: &Tensor<T>) -> Result<Tensor<T>> {
    // Chunked so large datasets do not allocate one huge activation buffer.
    let (n, _) = y.dims2()?;
    let mut rows = Vec::new();
    let mut width = 0;
    for start in (0..n).step_by(1024) {
        let idx: Vec<usize> = (start..(start + 1024).min(n)).collect();
        let p = fstar.predict(&y.gather_rows(&idx))?;
        width = p.dims2()?.1;
        rows.extend(p.into_data());
    }
    Tensor::new(vec![n, width], rows)
}

/// Train the vector field of `spec.method` on fresh couplings every step
/// with stratified times. Returns the EMA weights.
pub fn train_flow<T: Scalar, R: Regressor<T> + ?Sized>(
    cfg: &TrainConfig,
    data: PairedData<'_, T>,
    fstar: Option<&R>,
    spec: &FlowSpec,
) -> Result<(MlpParams<T>, TrainReport)> {
    spec.validate()?;
    let (n, dx, dy) = data.check()?;
    if spec.method == FlowMethod::FlowFromY && dy != dx {
        return Err(Error::ShapeMismatch {
            expected: vec![n, dx],
            actual: vec![n, dy],
        });
    }
    let xstar = match (spec.method.needs_posterior_mean(), fstar) {
        (true, Some(f)) => Some(predict_all(f, data.y)?),
        (true, None) => {
            return Err(Error::InvalidArgument(format!(
                "{} needs a posterior-mean predictor",
                spec.method.name()
            )))
        }
        (false, _) => None,
    };
    let key = cfg.key().derive_str("flow").derive_str(spec.method.name());
    let init = mlp_init(&field_shape(spec.method, cfg, dx, dy), key.derive_str("init"))?;
    fit(init, cfg, n, key, |idx, step| {
        let step_key = key.derive_str("step").derive(step);
        let xs = xstar.as_ref().map(|t| t.gather_rows(idx));
        let coupling = make_coupling(
            spec.method,
            &data.x.gather_rows(idx),
            &data.y.gather_rows(idx),
            xs.as_ref(),
            spec.sigma_s,
            step_key.derive_str("coupling"),
        )?;
        let t = sample_t_stratified(idx.len(), step_key.derive_str("t"))?;
        rf_batch(&coupling, &t)
    })
}

/// Result of one reflow round.
#[derive(Clone, Debug)]
pub struct ReflowOutcome<T: Scalar = f64> {
    pub params: MlpParams<T>,
    pub report: TrainReport,
    /// `E‖Ẑ₁ − Z₀‖²` of the previous flow on the frozen sources.
    pub cost_before: f64,
    /// The same cost for the reflowed field.
    pub cost_after: f64,
}

/// Mean squared transport distance `E‖a − b‖²` (summed over components).
pub fn transport_cost<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    let (n, _) = a.dims2()?;
    b.expect_shape(a.shape())?;
    let s: f64 = a.data().iter().zip(b.data()).map(|(&p, &q)| (p - q).as_f64().powi(2)).sum();
    Ok(s / n as f64)
}

/// One reflow round: freeze a source `Z₀` per sample, generate targets
/// `Ẑ₁` by integrating `prev` from it, and train a new field on the
/// `(Z₀, Ẑ₁)` pairs.
pub fn reflow<T: Scalar, R: Regressor<T> + ?Sized, V: VectorField<T> + ?Sized>(
    cfg: &TrainConfig,
    data: PairedData<'_, T>,
    fstar: Option<&R>,
    spec: &FlowSpec,
    prev: &V,
) -> Result<ReflowOutcome<T>> {
    spec.validate()?;
    let (n, dx, dy) = data.check()?;
    let key = cfg.key().derive_str("reflow").derive_str(spec.method.name());
    let xstar = match (spec.method.needs_posterior_mean(), fstar) {
        (true, Some(f)) => Some(predict_all(f, data.y)?),
        (true, None) => return Err(Error::InvalidArgument("reflow needs a posterior-mean predictor".into())),
        (false, _) => None,
    };
    let frozen = make_coupling(spec.method, data.x, data.y, xstar.as_ref(), spec.sigma_s, key.derive_str("z0"))?;
    let z0 = frozen.z0;
    let cond = frozen.cond;
    let targets = euler_integrate(prev, &z0, spec.steps_k, cond.as_ref())?;
    let cost_before = transport_cost(&targets, &z0)?;

    let init = mlp_init(&field_shape(spec.method, cfg, dx, dy), key.derive_str("init"))?;
    let (params, report) = fit(init, cfg, n, key, |idx, step| {
        let pair = Coupling {
            z0: z0.gather_rows(idx),
            z1: targets.gather_rows(idx),
            cond: cond.as_ref().map(|c| c.gather_rows(idx)),
        };
        let t = sample_t_stratified(idx.len(), key.derive_str("t").derive(step))?;
        rf_batch(&pair, &t)
    })?;
    let ends = euler_integrate(&params, &z0, spec.steps_k, cond.as_ref())?;
    Ok(ReflowOutcome {
        cost_after: transport_cost(&ends, &z0)?,
        params,
        report,
        cost_before,
    })
}
