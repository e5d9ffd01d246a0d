//! Forward degradation operators.
//!
//! Images are `H × W × C` tensors with values nominally in `[0, 1]`.
//! Non-image samples (scalars, 2-vectors) only support additive noise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{permutation, sample_standard_normal, sample_uniform, RngKey};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradationKind {
    /// Blur, bilinear down-sampling, noise, then back up to full size.
    Pipeline,
    Denoise,
    SuperResolution,
    Inpaint,
    Colorize,
}

impl DegradationKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Pipeline => "pipeline",
            Self::Denoise => "denoise",
            Self::SuperResolution => "super_resolution",
            Self::Inpaint => "inpaint",
            Self::Colorize => "colorize",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "pipeline" => Self::Pipeline,
            "denoise" => Self::Denoise,
            "super_resolution" => Self::SuperResolution,
            "inpaint" => Self::Inpaint,
            "colorize" => Self::Colorize,
            other => return Err(Error::InvalidArgument(format!("unknown degradation kind {other:?}"))),
        })
    }
}

/// Closed interval `[lo, hi]` sampled uniformly by the pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo <= hi) {
            return Err(Error::InvalidArgument(format!("empty range [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    fn sample(&self, u: f64) -> f64 {
        self.lo + u * (self.hi - self.lo)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub kind: DegradationKind,
    pub blur_sigma: f64,
    pub blur_ksize: usize,
    pub downsample_factor: f64,
    pub noise_sigma: f64,
    pub mask_fraction: f64,
    pub sr_factor: usize,
    pub sigma_range: Range,
    pub r_range: Range,
    pub delta_range: Range,
}

impl Default for DegradationSpec {
    fn default() -> Self {
        Self {
            kind: DegradationKind::Denoise,
            blur_sigma: 0.0,
            blur_ksize: 41,
            downsample_factor: 1.0,
            noise_sigma: 0.35,
            mask_fraction: 0.9,
            sr_factor: 4,
            sigma_range: Range { lo: 0.1, hi: 15.0 },
            r_range: Range { lo: 0.8, hi: 32.0 },
            delta_range: Range { lo: 0.0, hi: 20.0 / 255.0 },
        }
    }
}

impl DegradationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.blur_ksize.is_multiple_of(2) {
            return Err(Error::BadKernel(self.blur_ksize));
        }
        for r in [&self.sigma_range, &self.r_range, &self.delta_range] {
            Range::new(r.lo, r.hi)?;
        }
        if self.blur_sigma < 0.0 || self.noise_sigma < 0.0 {
            return Err(Error::InvalidArgument("negative blur or noise level".into()));
        }
        if !(0.0..=1.0).contains(&self.mask_fraction) {
            return Err(Error::InvalidArgument(format!(
                "mask fraction {} outside [0, 1]",
                self.mask_fraction
            )));
        }
        if self.sr_factor == 0 || self.downsample_factor < 1.0 {
            return Err(Error::InvalidArgument("resampling factors must be at least 1".into()));
        }
        Ok(())
    }
}

fn hwc<T: Scalar>(img: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match img.shape() {
        &[h, w, c] => Ok((h, w, c)),
        other => Err(Error::BadShape(format!("expected an H×W×C image, got {other:?}"))),
    }
}

/// Mirror index into `0..n` without repeating the edge sample.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Normalized 1-D Gaussian taps `exp(-i²/2σ²)/Z` for `i ∈ [-r, r]`.
pub fn gaussian_kernel(sigma: f64, ksize: usize) -> Result<Vec<f64>> {
    if ksize.is_multiple_of(2) {
        return Err(Error::BadKernel(ksize));
    }
    let r = (ksize / 2) as isize;
    if sigma == 0.0 {
        return Ok((-r..=r).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect());
    }
    let taps: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let z: f64 = taps.iter().sum();
    Ok(taps.into_iter().map(|v| v / z).collect())
}

/// Separable Gaussian blur with reflect padding.
pub fn gaussian_blur<T: Scalar>(img: &Tensor<T>, sigma: f64, ksize: usize) -> Result<Tensor<T>> {
    let (h, w, c) = hwc(img)?;
    if sigma < 0.0 {
        return Err(Error::InvalidArgument(format!("negative blur sigma {sigma}")));
    }
    let kernel = gaussian_kernel(sigma, ksize)?;
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let k: Vec<T> = kernel.iter().map(|&v| T::of(v)).collect();
    let r = (ksize / 2) as isize;
    let src = img.data();
    let idx = |y: usize, x: usize, ch: usize| (y * w + x) * c + ch;

    let mut horiz = vec![T::zero(); src.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = T::zero();
                for (j, &kv) in k.iter().enumerate() {
                    let sx = reflect(x as isize + j as isize - r, w);
                    acc += kv * src[idx(y, sx, ch)];
                }
                horiz[idx(y, x, ch)] = acc;
            }
        }
    }
    let mut out = vec![T::zero(); src.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = T::zero();
                for (j, &kv) in k.iter().enumerate() {
                    let sy = reflect(y as isize + j as isize - r, h);
                    acc += kv * horiz[idx(sy, x, ch)];
                }
                out[idx(y, x, ch)] = acc;
            }
        }
    }
    Tensor::new(img.shape().to_vec(), out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Down,
    Up,
}

/// Bilinear resize to `out_h × out_w` with half-pixel centres
/// (`src = (dst + ½)·in/out − ½`, clamped to the valid range).
pub fn resize_bilinear<T: Scalar>(img: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (h, w, c) = hwc(img)?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::DegenerateSize {
            extent: h.min(w),
            factor: 0.0,
        });
    }
    if out_h == h && out_w == w {
        return Ok(img.clone());
    }
    let axis = |n_in: usize, n_out: usize| -> Vec<(usize, usize, T)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|d| {
                let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, T::of(s - i0 as f64))
            })
            .collect()
    };
    let ys = axis(h, out_h);
    let xs = axis(w, out_w);
    let src = img.data();
    let at = |y: usize, x: usize, ch: usize| src[(y * w + x) * c + ch];
    let mut out = Vec::with_capacity(out_h * out_w * c);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for ch in 0..c {
                let top = at(y0, x0, ch) + fx * (at(y0, x1, ch) - at(y0, x0, ch));
                let bot = at(y1, x0, ch) + fx * (at(y1, x1, ch) - at(y1, x0, ch));
                out.push(top + fy * (bot - top));
            }
        }
    }
    Tensor::new(vec![out_h, out_w, c], out)
}

/// Bilinear resampling by `factor ≥ 1`; down divides extents (floor), up
/// multiplies them (rounded).
pub fn resample<T: Scalar>(img: &Tensor<T>, factor: f64, direction: Direction) -> Result<Tensor<T>> {
    let (h, w, _) = hwc(img)?;
    if !(factor >= 1.0) {
        return Err(Error::InvalidArgument(format!("resampling factor {factor} below 1")));
    }
    let size = |n: usize| -> Result<usize> {
        let out = match direction {
            Direction::Down => (n as f64 / factor).floor() as usize,
            Direction::Up => (n as f64 * factor).round() as usize,
        };
        if out == 0 {
            return Err(Error::DegenerateSize { extent: n, factor });
        }
        Ok(out)
    };
    resize_bilinear(img, size(h)?, size(w)?)
}

/// Nearest-neighbour up-scaling by an integer factor.
pub fn upscale_nearest<T: Scalar>(img: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let (h, w, c) = hwc(img)?;
    if factor == 0 {
        return Err(Error::DegenerateSize { extent: h.min(w), factor: 0.0 });
    }
    let (oh, ow) = (h * factor, w * factor);
    let src = img.data();
    Ok(Tensor::from_fn(&[oh, ow, c], |i| {
        let ch = i % c;
        let x = (i / c) % ow / factor;
        let y = i / (c * ow) / factor;
        src[(y * w + x) * c + ch]
    }))
}

/// `img + δ·ε` with `ε` standard normal; no clipping.
pub fn add_noise<T: Scalar>(img: &Tensor<T>, delta: f64, key: RngKey) -> Result<Tensor<T>> {
    if delta < 0.0 {
        return Err(Error::InvalidArgument(format!("negative noise level {delta}")));
    }
    if delta == 0.0 {
        return Ok(img.clone());
    }
    let noise: Tensor<T> = sample_standard_normal(key, img.shape());
    let d = T::of(delta);
    img.zip_map(&noise, |a, e| a + d * e)
}

/// Zero `round(fraction·H·W)` pixel positions (all channels), chosen
/// uniformly without replacement. Returns the masked image and an
/// `H × W × 1` mask holding 1 for kept pixels and 0 for masked ones.
pub fn mask_pixels<T: Scalar>(img: &Tensor<T>, fraction: f64, key: RngKey) -> Result<(Tensor<T>, Tensor<T>)> {
    let (h, w, c) = hwc(img)?;
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!("mask fraction {fraction} outside [0, 1]")));
    }
    let count = (fraction * (h * w) as f64).round() as usize;
    let mut mask = vec![T::one(); h * w];
    for &p in permutation(key, h * w).iter().take(count) {
        mask[p] = T::zero();
    }
    let masked = Tensor::from_fn(img.shape(), |i| img.data()[i] * mask[i / c]);
    Ok((masked, Tensor::new(vec![h, w, 1], mask)?))
}

/// Replace every pixel's channels by their mean.
pub fn desaturate<T: Scalar>(img: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, _, c) = hwc(img)?;
    if c != 3 {
        return Err(Error::BadChannels { expected: 3, actual: c });
    }
    let third = T::of(1.0 / 3.0);
    let src = img.data();
    Ok(Tensor::from_fn(img.shape(), |i| {
        let p = i / 3 * 3;
        (src[p] + src[p + 1] + src[p + 2]) * third
    }))
}

/// Largest odd kernel size not exceeding `ksize` or the shorter image side.
pub fn effective_ksize(ksize: usize, h: usize, w: usize) -> usize {
    let side = h.min(w);
    let cap = if side % 2 == 1 { side } else { side - 1 };
    ksize.min(cap).max(1)
}

/// Parameters drawn by one pipeline application.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PipelineDraw {
    pub sigma: f64,
    /// Down-sampling factor after clamping to `[1, min(H, W)]`.
    pub r: f64,
    /// Factor as drawn, before clamping.
    pub r_raw: f64,
    pub delta: f64,
}

/// Key the pipeline uses for its noise field.
pub fn pipeline_noise_key(key: RngKey) -> RngKey {
    key.derive_str("noise")
}

/// Blur → bilinear down by `R` → noise → bilinear up to the input size, with
/// `(σ, R, δ)` drawn uniformly from the configured ranges.
pub fn apply_pipeline<T: Scalar>(img: &Tensor<T>, spec: &DegradationSpec, key: RngKey) -> Result<Tensor<T>> {
    apply_pipeline_traced(img, spec, key).map(|(out, _)| out)
}

pub fn apply_pipeline_traced<T: Scalar>(
    img: &Tensor<T>,
    spec: &DegradationSpec,
    key: RngKey,
) -> Result<(Tensor<T>, PipelineDraw)> {
    if spec.kind != DegradationKind::Pipeline {
        return Err(Error::InvalidArgument(format!(
            "apply_pipeline needs a pipeline spec, got {}",
            spec.kind.name()
        )));
    }
    spec.validate()?;
    let (h, w, _) = hwc(img)?;
    let u = sample_uniform(key.derive_str("params"), 3);
    let sigma = spec.sigma_range.sample(u[0]);
    let r_raw = spec.r_range.sample(u[1]);
    let delta = spec.delta_range.sample(u[2]);
    let r = r_raw.clamp(1.0, h.min(w) as f64);
    if r != r_raw {
        log::debug!("pipeline down-sampling factor {r_raw} clamped to {r}");
    }
    let blurred = gaussian_blur(img, sigma, effective_ksize(spec.blur_ksize, h, w))?;
    let small = resample(&blurred, r, Direction::Down)?;
    let noisy = add_noise(&small, delta, pipeline_noise_key(key))?;
    let out = resize_bilinear(&noisy, h, w)?;
    Ok((out, PipelineDraw { sigma, r, r_raw, delta }))
}

/// Apply the degradation named by `spec.kind`.
///
/// Controlled tasks: denoise adds noise; super-resolution down-samples by
/// `sr_factor` then adds noise; inpainting masks then adds noise;
/// colorization desaturates then adds noise. Non-image samples accept only
/// `denoise`.
pub fn degrade<T: Scalar>(img: &Tensor<T>, spec: &DegradationSpec, key: RngKey) -> Result<Tensor<T>> {
    let noise_key = key.derive_str("noise");
    match spec.kind {
        DegradationKind::Denoise => add_noise(img, spec.noise_sigma, noise_key),
        DegradationKind::Pipeline => apply_pipeline(img, spec, key),
        DegradationKind::SuperResolution => {
            let small = resample(img, spec.sr_factor as f64, Direction::Down)?;
            add_noise(&small, spec.noise_sigma, noise_key)
        }
        DegradationKind::Inpaint => {
            let (masked, _) = mask_pixels(img, spec.mask_fraction, key.derive_str("mask"))?;
            add_noise(&masked, spec.noise_sigma, noise_key)
        }
        DegradationKind::Colorize => add_noise(&desaturate(img)?, spec.noise_sigma, noise_key),
    }
}
