use serde::{Deserialize, Serialize};

use super::mlp::{Dense, Grads, MlpParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

/// First and second moments for every parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState<T = f64> {
    pub config: AdamWConfig,
    pub step: u64,
    m: Vec<Dense<T>>,
    v: Vec<Dense<T>>,
}

impl<T: Scalar> OptimState<T> {
    pub fn new(config: AdamWConfig, params: &MlpParams<T>) -> Self {
        let zeros = || {
            params
                .layers
                .iter()
                .map(|l| Dense {
                    weight: Tensor::zeros(l.weight.shape()),
                    bias: Tensor::zeros(l.bias.shape()),
                })
                .collect()
        };
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

fn update<T: Scalar>(p: &mut [T], g: &[T], m: &mut [T], v: &mut [T], k: &Coeffs<T>) {
    for i in 0..p.len() {
        p[i] -= k.decay * p[i];
        m[i] = k.b1 * m[i] + (T::one() - k.b1) * g[i];
        v[i] = k.b2 * v[i] + (T::one() - k.b2) * g[i] * g[i];
        let mhat = m[i] / k.bc1;
        let vhat = v[i] / k.bc2;
        p[i] -= k.lr * mhat / (vhat.sqrt() + k.eps);
    }
}

struct Coeffs<T> {
    lr: T,
    b1: T,
    b2: T,
    eps: T,
    decay: T,
    bc1: T,
    bc2: T,
}

/// One AdamW update: decoupled decay `p ← p − lr·wd·p`, then the
/// bias-corrected Adam step.
pub fn adamw_step<T: Scalar>(state: &mut OptimState<T>, params: &mut MlpParams<T>, grads: &Grads<T>) -> Result<()> {
    if grads.layers.len() != params.layers.len() || state.m.len() != params.layers.len() {
        return Err(Error::BadShape("optimizer, parameter and gradient layer counts differ".into()));
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let k = Coeffs {
        lr: T::of(c.lr),
        b1: T::of(c.beta1),
        b2: T::of(c.beta2),
        eps: T::of(c.eps),
        decay: T::of(c.lr * c.weight_decay),
        bc1: T::of(1.0 - c.beta1.powi(t)),
        bc2: T::of(1.0 - c.beta2.powi(t)),
    };
    for (((p, g), m), v) in params
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        g.weight.expect_shape(p.weight.shape())?;
        g.bias.expect_shape(p.bias.shape())?;
        update(p.weight.data_mut(), g.weight.data(), m.weight.data_mut(), v.weight.data_mut(), &k);
        update(p.bias.data_mut(), g.bias.data(), m.bias.data_mut(), v.bias.data_mut(), &k);
    }
    Ok(())
}
