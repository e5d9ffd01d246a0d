use super::mlp::MlpParams;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Exponential moving average of network weights.
#[derive(Clone, Debug, PartialEq)]
pub struct EmaParams<T = f64> {
    pub shadow: MlpParams<T>,
    pub decay: f64,
    pub updates: u64,
}

impl<T: Scalar> EmaParams<T> {
    pub fn new(params: &MlpParams<T>, decay: f64) -> Result<Self> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::InvalidArgument(format!("EMA decay {decay} outside (0, 1)")));
        }
        Ok(Self {
            shadow: params.clone(),
            decay,
            updates: 0,
        })
    }

    /// `shadow ← decay·shadow + (1 − decay)·params`.
    pub fn update(&mut self, params: &MlpParams<T>) -> Result<()> {
        self.update_with(params, self.decay)
    }

    /// Update with the warm-up schedule `min(decay, (1 + n)/(10 + n))`, so
    /// short runs are not dominated by the initial weights.
    pub fn update_warm(&mut self, params: &MlpParams<T>) -> Result<()> {
        let n = self.updates as f64;
        let d = self.decay.min((1.0 + n) / (10.0 + n));
        self.update_with(params, d)
    }

    fn update_with(&mut self, params: &MlpParams<T>, decay: f64) -> Result<()> {
        if params.layers.len() != self.shadow.layers.len() {
            return Err(Error::BadShape("EMA shadow and parameters differ in depth".into()));
        }
        let d = T::of(decay);
        let e = T::one() - d;
        for (s, p) in self.shadow.layers.iter_mut().zip(&params.layers) {
            p.weight.expect_shape(s.weight.shape())?;
            p.bias.expect_shape(s.bias.shape())?;
            for (a, &b) in s.weight.data_mut().iter_mut().zip(p.weight.data()) {
                *a = d * *a + e * b;
            }
            for (a, &b) in s.bias.data_mut().iter_mut().zip(p.bias.data()) {
                *a = d * *a + e * b;
            }
        }
        self.updates += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::mlp::Dense;
    use crate::tensor::Tensor;

    fn constant(v: f64) -> MlpParams<f64> {
        MlpParams {
            layers: vec![Dense {
                weight: Tensor::full(&[1, 1], v),
                bias: Tensor::full(&[1], v),
            }],
            time_freqs: vec![],
            x_width: 1,
            cond_width: 0,
        }
    }

    #[test]
    fn single_update_definition() {
        let mut ema = EmaParams::new(&constant(0.0), 0.9999).unwrap();
        ema.update(&constant(1.0)).unwrap();
        assert!((ema.shadow.layers[0].weight.data()[0] - 1e-4).abs() < 1e-15);
    }

    #[test]
    fn fixed_point() {
        let mut ema = EmaParams::new(&constant(0.3), 0.99).unwrap();
        ema.update(&constant(0.3)).unwrap();
        assert!((ema.shadow.layers[0].weight.data()[0] - 0.3).abs() < 1e-16);
    }

    #[test]
    fn geometric_convergence() {
        let mut ema = EmaParams::new(&constant(0.0), 0.999).unwrap();
        let one = constant(1.0);
        for _ in 0..10_000 {
            ema.update(&one).unwrap();
        }
        let want = 1.0 - 0.999f64.powi(10_000);
        assert!((ema.shadow.layers[0].weight.data()[0] - want).abs() < 1e-9);
        assert!((want - 0.99995).abs() < 1e-5);
    }

    #[test]
    fn warm_start_tracks_early_weights() {
        let mut ema = EmaParams::new(&constant(0.0), 0.9999).unwrap();
        ema.update_warm(&constant(1.0)).unwrap();
        // First warm decay is 1/10.
        assert!((ema.shadow.layers[0].weight.data()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_decay() {
        assert!(EmaParams::new(&constant(0.0), 1.0).is_err());
        assert!(EmaParams::new(&constant(0.0), 0.0).is_err());
    }
}
