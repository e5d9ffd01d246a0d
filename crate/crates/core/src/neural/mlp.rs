use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{sample_standard_normal, RngKey};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Lowest and highest angular frequency of the sinusoidal time features.
const TIME_FREQ_MIN: f64 = 0.5;
const TIME_FREQ_MAX: f64 = 50.0;

/// Fully connected layer; `weight` is `out × in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense<T = f64> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn fan_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[0]
    }

    fn zeros_like(&self) -> Self {
        Self {
            weight: Tensor::zeros(self.weight.shape()),
            bias: Tensor::zeros(self.bias.shape()),
        }
    }
}

/// Architecture of an [`MlpParams`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    /// Data input width, hidden widths, output width.
    pub layer_sizes: Vec<usize>,
    /// Width of the conditioning input concatenated after the time features.
    pub cond_width: usize,
    /// Number of sinusoidal time frequencies; 0 for a plain regressor.
    pub time_frequencies: usize,
}

/// Weights of the MLP. The network input is
/// `[x, sin(ω t), cos(ω t), cond]`; hidden layers use the tanh-form GELU and
/// the output layer is linear.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams<T = f64> {
    pub layers: Vec<Dense<T>>,
    pub time_freqs: Vec<T>,
    pub x_width: usize,
    pub cond_width: usize,
}

/// Layer-shaped gradient of the loss.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads<T = f64> {
    pub layers: Vec<Dense<T>>,
}

/// Geometrically spaced angular frequencies for the time features.
pub fn time_frequencies<T: Scalar>(n: usize) -> Vec<T> {
    match n {
        0 => Vec::new(),
        1 => vec![T::of(TIME_FREQ_MIN)],
        _ => (0..n)
            .map(|j| {
                let r = j as f64 / (n - 1) as f64;
                T::of(TIME_FREQ_MIN * (TIME_FREQ_MAX / TIME_FREQ_MIN).powf(r))
            })
            .collect(),
    }
}

/// Weights `N(0, 1/fan_in)`, zero biases.
pub fn mlp_init<T: Scalar>(shape: &MlpShape, key: RngKey) -> Result<MlpParams<T>> {
    let sizes = &shape.layer_sizes;
    if sizes.len() < 2 {
        return Err(Error::BadShape(format!("an MLP needs at least 2 layer sizes, got {sizes:?}")));
    }
    if sizes.contains(&0) {
        return Err(Error::BadShape(format!("zero layer width in {sizes:?}")));
    }
    let input = sizes[0] + 2 * shape.time_frequencies + shape.cond_width;
    let mut layers = Vec::with_capacity(sizes.len() - 1);
    let mut fan_in = input;
    for (l, &out) in sizes[1..].iter().enumerate() {
        let std = T::of(1.0 / (fan_in as f64).sqrt());
        let weight = sample_standard_normal::<T>(key.derive(l as u64), &[out, fan_in]).scale(std);
        layers.push(Dense {
            weight,
            bias: Tensor::zeros(&[out]),
        });
        fan_in = out;
    }
    Ok(MlpParams {
        layers,
        time_freqs: time_frequencies(shape.time_frequencies),
        x_width: sizes[0],
        cond_width: shape.cond_width,
    })
}

#[inline]
fn gelu<T: Scalar>(x: T) -> T {
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let u = c * (x + T::of(0.044715) * x * x * x);
    T::of(0.5) * x * (T::one() + u.tanh())
}

#[inline]
fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let a = T::of(0.044715);
    let th = (c * (x + a * x * x * x)).tanh();
    let half = T::of(0.5);
    half * (T::one() + th) + half * x * (T::one() - th * th) * c * (T::one() + T::of(3.0) * a * x * x)
}

/// Forward activations kept for backpropagation.
struct Trace<T> {
    /// Layer inputs; `inputs[0]` is the assembled network input.
    inputs: Vec<Vec<T>>,
    /// Pre-activations of every layer.
    pre: Vec<Vec<T>>,
    output: Vec<T>,
}

impl<T: Scalar> MlpParams<T> {
    pub fn shape(&self) -> MlpShape {
        let mut sizes = vec![self.x_width];
        sizes.extend(self.layers.iter().map(Dense::fan_out));
        MlpShape {
            layer_sizes: sizes,
            cond_width: self.cond_width,
            time_frequencies: self.time_freqs.len(),
        }
    }

    pub fn input_width(&self) -> usize {
        self.x_width + 2 * self.time_freqs.len() + self.cond_width
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, Dense::fan_out)
    }

    pub fn uses_time(&self) -> bool {
        !self.time_freqs.is_empty()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn zero_grads(&self) -> Grads<T> {
        Grads {
            layers: self.layers.iter().map(Dense::zeros_like).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weight.all_finite() && l.bias.all_finite())
    }

    fn assemble_input(&self, x: &Tensor<T>, t: Option<&[T]>, cond: Option<&Tensor<T>>) -> Result<(usize, Vec<T>)> {
        let (b, dx) = x.dims2()?;
        if dx != self.x_width {
            return Err(Error::BadShape(format!("input width {dx}, network expects {}", self.x_width)));
        }
        match (t, self.uses_time()) {
            (Some(ts), true) if ts.len() != b => {
                return Err(Error::BadShape(format!("{} time values for a batch of {b}", ts.len())))
            }
            (None, true) => return Err(Error::BadShape("network expects a time input".into())),
            (Some(_), false) => return Err(Error::BadShape("network has no time input".into())),
            _ => {}
        }
        match (cond, self.cond_width) {
            (None, 0) => {}
            (Some(c), w) if w > 0 => {
                if c.dims2()? != (b, w) {
                    return Err(Error::BadShape(format!(
                        "condition shape {:?}, expected [{b}, {w}]",
                        c.shape()
                    )));
                }
            }
            (None, w) => return Err(Error::BadShape(format!("network expects a condition of width {w}"))),
            (Some(_), _) => return Err(Error::BadShape("network takes no condition".into())),
        }
        let width = self.input_width();
        let mut input = Vec::with_capacity(b * width);
        for i in 0..b {
            input.extend_from_slice(x.row(i));
            if let Some(ts) = t {
                let ti = ts[i];
                input.extend(self.time_freqs.iter().map(|&w| (w * ti).sin()));
                input.extend(self.time_freqs.iter().map(|&w| (w * ti).cos()));
            }
            if let Some(c) = cond {
                input.extend_from_slice(c.row(i));
            }
        }
        Ok((b, input))
    }

    fn run(&self, batch: usize, input: Vec<T>, keep: bool) -> Trace<T> {
        let mut inputs = Vec::new();
        let mut pres = Vec::new();
        let mut act = input;
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (out, fan_in) = (layer.fan_out(), layer.fan_in());
            let mut pre = Vec::with_capacity(batch * out);
            for _ in 0..batch {
                pre.extend_from_slice(layer.bias.data());
            }
            T::gemm(batch, fan_in, out, T::one(), &act, false, layer.weight.data(), true, T::one(), &mut pre);
            let next = if l == last {
                pre.clone()
            } else {
                pre.iter().map(|&v| gelu(v)).collect()
            };
            if keep {
                inputs.push(std::mem::replace(&mut act, next));
                pres.push(pre);
            } else {
                act = next;
            }
        }
        Trace {
            inputs,
            pre: pres,
            output: act,
        }
    }

    /// Batched evaluation. `x` is `B × x_width`; `t` holds one time per row
    /// when the network has time features; `cond` is `B × cond_width`.
    pub fn forward(&self, x: &Tensor<T>, t: Option<&[T]>, cond: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let (b, input) = self.assemble_input(x, t, cond)?;
        let trace = self.run(b, input, false);
        Tensor::new(vec![b, self.output_width()], trace.output)
    }

    /// Mean over the batch of the per-sample mean squared error, and its
    /// exact gradient.
    pub fn loss_and_grad(&self, batch: &Batch<T>) -> Result<(T, Grads<T>)> {
        let (b, input) = self.assemble_input(&batch.input, batch.t.as_deref(), batch.cond.as_ref())?;
        if b == 0 {
            return Err(Error::BadShape("empty batch".into()));
        }
        let out_w = self.output_width();
        batch.target.expect_shape(&[b, out_w])?;
        let trace = self.run(b, input, true);

        let scale = T::of(1.0 / (b * out_w) as f64);
        let mut loss = T::zero();
        let mut delta: Vec<T> = trace
            .output
            .iter()
            .zip(batch.target.data())
            .map(|(&o, &y)| {
                let r = o - y;
                loss += r * r;
                T::of(2.0) * scale * r
            })
            .collect();
        loss *= scale;

        let mut grads = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let (out, fan_in) = (layer.fan_out(), layer.fan_in());
            let a_prev = &trace.inputs[l];
            let mut dw = vec![T::zero(); out * fan_in];
            T::gemm(out, b, fan_in, T::one(), &delta, true, a_prev, false, T::zero(), &mut dw);
            let mut db = vec![T::zero(); out];
            for row in delta.chunks(out) {
                for (acc, &v) in db.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            grads.push(Dense {
                weight: Tensor::new(vec![out, fan_in], dw)?,
                bias: Tensor::new(vec![out], db)?,
            });
            if l > 0 {
                let mut da = vec![T::zero(); b * fan_in];
                T::gemm(b, out, fan_in, T::one(), &delta, false, layer.weight.data(), false, T::zero(), &mut da);
                let pre = &trace.pre[l - 1];
                for (d, &p) in da.iter_mut().zip(pre) {
                    *d *= gelu_grad(p);
                }
                delta = da;
            }
        }
        grads.reverse();
        Ok((loss, Grads { layers: grads }))
    }
}

/// One minibatch of regression targets.
#[derive(Clone, Debug)]
pub struct Batch<T = f64> {
    pub input: Tensor<T>,
    pub t: Option<Vec<T>>,
    pub cond: Option<Tensor<T>>,
    pub target: Tensor<T>,
}
