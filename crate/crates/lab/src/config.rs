//! Experiment configuration.
//!
//! # Grammar
//!
//! The file is UTF-8 text, read line by line:
//!
//! ```text
//! file    = { line } ;
//! line    = blank | comment | section | entry ;
//! comment = ws ( "#" | ";" ) any-text ;
//! section = ws "[" name "]" ws ;
//! entry   = ws key ws "=" ws value ws ;
//! key     = name ;
//! name    = ( "a".."z" | "0".."9" | "_" ) { "a".."z" | "0".."9" | "_" } ;
//! ```
//!
//! Entries belong to the most recent section; entries before any section
//! are an error, as are duplicate keys, unknown sections and unknown keys.
//! Values are taken verbatim after trimming. Lists are comma separated and
//! ranges are written `lo, hi`.
//!
//! Sections and keys (defaults in brackets):
//!
//! - `[experiment]` `task` (denoise | super_resolution | inpaint | colorize |
//!   pipeline | gauss1d), `dataset` (synthetic_sprites | two_moons_2d | gauss1d
//!   | `idx:<path>`), `n_samples` [2000], `test_size` [1000, capped at half
//!   of n_samples], `seed` (mandatory unless given on the command line), `output`,
//!   `dot_fit_samples` [1000], `frechet_pool` [false]
//! - `[degradation]` `noise_sigma` [0.35], `blur_sigma` [0], `blur_ksize` [41],
//!   `downsample_factor` [1], `mask_fraction` [0.9], `sr_factor` [4],
//!   `sigma_range` [0.1, 15], `r_range` [0.8, 32], `delta_range` [0, 20/255]
//! - `[flow]` `methods` (any of pmrf, cond_on_y, cond_on_xstar, flow_from_y,
//!   dot, posterior_mean) [all], `steps` [3, 5, 10, 25, 50, 100],
//!   `sigma_s` [0.025]
//! - `[train]` `epochs` [10], `batch` [64], `lr` [5e-4], `beta1` [0.9],
//!   `beta2` [0.95], `eps` [1e-8], `weight_decay` [0.01], `ema_decay`
//!   [0.9999], `hidden` [128, 128], `time_frequencies` [16]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use pmrf_core::degrade::{DegradationKind, DegradationSpec, Range};
use pmrf_core::flows::FlowMethod;
use pmrf_core::neural::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Denoise,
    SuperResolution,
    Inpaint,
    Colorize,
    Pipeline,
    Gauss1d,
}

impl Task {
    pub const ALL: [Task; 6] = [
        Self::Denoise,
        Self::SuperResolution,
        Self::Inpaint,
        Self::Colorize,
        Self::Pipeline,
        Self::Gauss1d,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Denoise => "denoise",
            Self::SuperResolution => "super_resolution",
            Self::Inpaint => "inpaint",
            Self::Colorize => "colorize",
            Self::Pipeline => "pipeline",
            Self::Gauss1d => "gauss1d",
        }
    }

    /// The degradation applied to each sample; the scalar Gaussian task is
    /// additive noise.
    pub fn degradation_kind(self) -> DegradationKind {
        match self {
            Self::Denoise | Self::Gauss1d => DegradationKind::Denoise,
            Self::SuperResolution => DegradationKind::SuperResolution,
            Self::Inpaint => DegradationKind::Inpaint,
            Self::Colorize => DegradationKind::Colorize,
            Self::Pipeline => DegradationKind::Pipeline,
        }
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown task {s:?}"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dataset {
    SyntheticSprites,
    TwoMoons2d,
    Gauss1d,
    Idx(PathBuf),
}

impl Dataset {
    pub fn name(&self) -> String {
        match self {
            Self::SyntheticSprites => "synthetic_sprites".into(),
            Self::TwoMoons2d => "two_moons_2d".into(),
            Self::Gauss1d => "gauss1d".into(),
            Self::Idx(p) => format!("idx:{}", p.display()),
        }
    }

    pub fn is_image(&self) -> bool {
        matches!(self, Self::SyntheticSprites | Self::Idx(_))
    }
}

impl FromStr for Dataset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "synthetic_sprites" => Ok(Self::SyntheticSprites),
            "two_moons_2d" => Ok(Self::TwoMoons2d),
            "gauss1d" => Ok(Self::Gauss1d),
            _ => match s.strip_prefix("idx:") {
                Some(p) if !p.trim().is_empty() => Ok(Self::Idx(PathBuf::from(p.trim()))),
                _ => Err(format!("unknown dataset {s:?}")),
            },
        }
    }
}

/// A restoration method compared by the harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Flow(FlowMethod),
    Dot,
    PosteriorMean,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Self::Flow(FlowMethod::Pmrf),
        Self::Flow(FlowMethod::CondOnY),
        Self::Flow(FlowMethod::CondOnXstar),
        Self::Flow(FlowMethod::FlowFromY),
        Self::Dot,
        Self::PosteriorMean,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Flow(m) => m.name(),
            Self::Dot => "dot",
            Self::PosteriorMean => "posterior_mean",
        }
    }

    /// Whether the reconstruction changes with the Euler step count.
    pub fn uses_steps(self) -> bool {
        matches!(self, Self::Flow(_))
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method {s:?}"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: Task,
    pub dataset: Dataset,
    pub n_samples: usize,
    pub test_size: usize,
    pub seed: u64,
    pub dot_fit_samples: usize,
    pub frechet_pool: bool,
    pub degradation: DegradationSpec,
    pub methods: Vec<Method>,
    pub steps: Vec<usize>,
    pub sigma_s: f64,
    pub train: TrainConfig,
    /// Where reports and checkpoints go; not part of the config hash.
    #[serde(skip)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string(), seed_override)
    }

    pub fn parse(text: &str, origin: &str, seed_override: Option<u64>) -> Result<Self> {
        let mut ini = Ini::parse(text, origin)?;
        let cfg = build(&mut ini, seed_override)?;
        ini.finish()?;
        cfg.validate().map_err(|message| LabError::Config {
            path: origin.into(),
            line: 0,
            message,
        })?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.degradation.validate().map_err(|e| e.to_string())?;
        self.train.validate().map_err(|e| e.to_string())?;
        if self.methods.is_empty() {
            return Err("no methods configured".into());
        }
        if self.steps.is_empty() || self.steps.contains(&0) {
            return Err("steps must be a non-empty list of positive integers".into());
        }
        if !(self.sigma_s >= 0.0) {
            return Err(format!("sigma_s {} is negative", self.sigma_s));
        }
        if self.test_size == 0 || self.test_size + 2 > self.n_samples {
            return Err(format!(
                "test_size {} leaves too few of {} samples for training",
                self.test_size, self.n_samples
            ));
        }
        let data_ok = match self.task {
            Task::Gauss1d => self.dataset == Dataset::Gauss1d,
            Task::Denoise => true,
            _ => self.dataset.is_image(),
        };
        if !data_ok {
            return Err(format!(
                "task {} cannot run on dataset {}",
                self.task.name(),
                self.dataset.name()
            ));
        }
        Ok(())
    }

    pub fn train_size(&self) -> usize {
        self.n_samples - self.test_size
    }

    /// Steps reported for a method: the configured list for flows, a single
    /// row per K for step-independent methods.
    pub fn cells(&self) -> Vec<(Method, usize)> {
        self.methods
            .iter()
            .flat_map(|&m| self.steps.iter().map(move |&k| (m, k)))
            .collect()
    }

    /// Hex SHA-256 of the canonical JSON form (output directory excluded).
    pub fn hash(&self) -> String {
        let canon = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&canon);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn build(ini: &mut Ini, seed_override: Option<u64>) -> Result<ExperimentConfig> {
    let defaults = TrainConfig::default();
    let deg = DegradationSpec::default();

    let task: Task = ini.req("experiment", "task")?;
    let dataset: Dataset = ini.req("experiment", "dataset")?;
    let n_samples = ini.opt("experiment", "n_samples")?.unwrap_or(2000usize);
    let test_size = ini.opt("experiment", "test_size")?.unwrap_or(1000.min(n_samples / 2).max(1));
    let seed = match (seed_override, ini.opt::<u64>("experiment", "seed")?) {
        (Some(s), _) | (None, Some(s)) => s,
        (None, None) => {
            return Err(ini.error(0, "seed is mandatory: set [experiment] seed or pass --seed".into()));
        }
    };
    let output = ini.opt::<String>("experiment", "output")?.map(PathBuf::from);
    let dot_fit_samples = ini.opt("experiment", "dot_fit_samples")?.unwrap_or(1000);
    let frechet_pool = ini.opt_bool("experiment", "frechet_pool")?.unwrap_or(false);

    let degradation = DegradationSpec {
        kind: task.degradation_kind(),
        blur_sigma: ini.opt("degradation", "blur_sigma")?.unwrap_or(deg.blur_sigma),
        blur_ksize: ini.opt("degradation", "blur_ksize")?.unwrap_or(deg.blur_ksize),
        downsample_factor: ini.opt("degradation", "downsample_factor")?.unwrap_or(deg.downsample_factor),
        noise_sigma: ini.opt("degradation", "noise_sigma")?.unwrap_or(deg.noise_sigma),
        mask_fraction: ini.opt("degradation", "mask_fraction")?.unwrap_or(deg.mask_fraction),
        sr_factor: ini.opt("degradation", "sr_factor")?.unwrap_or(deg.sr_factor),
        sigma_range: ini.opt_range("degradation", "sigma_range")?.unwrap_or(deg.sigma_range),
        r_range: ini.opt_range("degradation", "r_range")?.unwrap_or(deg.r_range),
        delta_range: ini.opt_range("degradation", "delta_range")?.unwrap_or(deg.delta_range),
    };

    let methods = ini.opt_list("flow", "methods")?.unwrap_or_else(|| Method::ALL.to_vec());
    let steps = ini.opt_list("flow", "steps")?.unwrap_or_else(|| vec![3, 5, 10, 25, 50, 100]);
    let sigma_s = ini.opt("flow", "sigma_s")?.unwrap_or(0.025);

    let mut optimizer = defaults.optimizer;
    optimizer.lr = ini.opt("train", "lr")?.unwrap_or(optimizer.lr);
    optimizer.beta1 = ini.opt("train", "beta1")?.unwrap_or(optimizer.beta1);
    optimizer.beta2 = ini.opt("train", "beta2")?.unwrap_or(optimizer.beta2);
    optimizer.eps = ini.opt("train", "eps")?.unwrap_or(optimizer.eps);
    optimizer.weight_decay = ini.opt("train", "weight_decay")?.unwrap_or(optimizer.weight_decay);
    let train = TrainConfig {
        epochs: ini.opt("train", "epochs")?.unwrap_or(defaults.epochs),
        batch: ini.opt("train", "batch")?.unwrap_or(defaults.batch),
        optimizer,
        ema_decay: ini.opt("train", "ema_decay")?.unwrap_or(defaults.ema_decay),
        seed,
        hidden: ini.opt_list("train", "hidden")?.unwrap_or(defaults.hidden),
        time_frequencies: ini.opt("train", "time_frequencies")?.unwrap_or(defaults.time_frequencies),
    };

    Ok(ExperimentConfig {
        task,
        dataset,
        n_samples,
        test_size,
        seed,
        dot_fit_samples,
        frechet_pool,
        degradation,
        methods,
        steps,
        sigma_s,
        train,
        output,
    })
}

const SECTIONS: [&str; 4] = ["experiment", "degradation", "flow", "train"];

struct Ini {
    origin: String,
    // section -> key -> (value, line)
    entries: BTreeMap<String, BTreeMap<String, (String, usize)>>,
}

fn valid_name(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

impl Ini {
    fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut ini = Ini {
            origin: origin.into(),
            entries: BTreeMap::new(),
        };
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| ini.error(line_no, "unterminated section header".into()))?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(ini.error(line_no, format!("unknown section [{name}]")));
                }
                ini.entries.entry(name.to_string()).or_default();
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ini.error(line_no, format!("expected key = value, got {line:?}")))?;
            let key = key.trim();
            if !valid_name(key) {
                return Err(ini.error(line_no, format!("invalid key {key:?}")));
            }
            let sec = section
                .clone()
                .ok_or_else(|| ini.error(line_no, "entry before any section".into()))?;
            let slot = ini.entries.get_mut(&sec).expect("section registered");
            if slot.contains_key(key) {
                return Err(ini.error(line_no, format!("duplicate key {key:?} in [{sec}]")));
            }
            slot.insert(key.to_string(), (value.trim().to_string(), line_no));
        }
        Ok(ini)
    }

    fn error(&self, line: usize, message: String) -> LabError {
        LabError::Config {
            path: self.origin.clone(),
            line,
            message,
        }
    }

    fn take(&mut self, section: &str, key: &str) -> Option<(String, usize)> {
        self.entries.get_mut(section).and_then(|s| s.remove(key))
    }

    fn opt<T: FromStr>(&mut self, section: &str, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.take(section, key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse()
                .map(Some)
                .map_err(|e| self.error(line, format!("[{section}] {key}: {e}"))),
        }
    }

    fn req<T: FromStr>(&mut self, section: &str, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.opt(section, key)?
            .ok_or_else(|| self.error(0, format!("missing required key [{section}] {key}")))
    }

    fn opt_bool(&mut self, section: &str, key: &str) -> Result<Option<bool>> {
        self.opt(section, key)
    }

    fn opt_list<T: FromStr>(&mut self, section: &str, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        let Some((v, line)) = self.take(section, key) else {
            return Ok(None);
        };
        v.split(',')
            .map(|item| {
                item.trim()
                    .parse()
                    .map_err(|e| self.error(line, format!("[{section}] {key}: {e}")))
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    fn opt_range(&mut self, section: &str, key: &str) -> Result<Option<Range>> {
        let line = self
            .entries
            .get(section)
            .and_then(|s| s.get(key))
            .map(|(_, l)| *l)
            .unwrap_or(0);
        match self.opt_list::<f64>(section, key)? {
            None => Ok(None),
            Some(v) if v.len() == 2 => Range::new(v[0], v[1])
                .map(Some)
                .map_err(|e| self.error(line, format!("[{section}] {key}: {e}"))),
            Some(v) => Err(self.error(line, format!("[{section}] {key}: expected lo, hi; got {} values", v.len()))),
        }
    }

    /// Fail on any entry no builder consumed.
    fn finish(self) -> Result<()> {
        for (sec, keys) in &self.entries {
            if let Some((key, (_, line))) = keys.iter().next() {
                return Err(self.error(*line, format!("unknown key {key:?} in [{sec}]")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[experiment]\ntask = gauss1d\ndataset = gauss1d\nseed = 3\n";

    #[test]
    fn minimal_config_uses_defaults() {
        let c = ExperimentConfig::parse(MINIMAL, "t", None).unwrap();
        assert_eq!(c.task, Task::Gauss1d);
        assert_eq!(c.seed, 3);
        assert_eq!(c.train.seed, 3);
        assert_eq!(c.n_samples, 2000);
        assert_eq!(c.test_size, 1000);
        assert_eq!(c.methods.len(), 6);
        assert_eq!(c.steps, vec![3, 5, 10, 25, 50, 100]);
        assert_eq!(c.degradation.kind, DegradationKind::Denoise);
    }

    #[test]
    fn full_config() {
        let text = "# comment\n[experiment]\ntask = super_resolution\ndataset = idx:data/a.idx\nn_samples = 50\n\
                    test_size = 5\nseed = 1\noutput = out/x\n\n[degradation]\nsr_factor = 2\nsigma_range = 0.5, 2\n\
                    [flow]\nmethods = pmrf, dot\nsteps = 1, 4\nsigma_s = 0.1\n[train]\nhidden = 8, 4\nlr = 1e-3\n";
        let c = ExperimentConfig::parse(text, "t", Some(9)).unwrap();
        assert_eq!(c.dataset, Dataset::Idx(PathBuf::from("data/a.idx")));
        assert_eq!(c.seed, 9);
        assert_eq!(c.methods, vec![Method::Flow(FlowMethod::Pmrf), Method::Dot]);
        assert_eq!(c.steps, vec![1, 4]);
        assert_eq!(c.degradation.sigma_range, Range { lo: 0.5, hi: 2.0 });
        assert_eq!(c.train.hidden, vec![8, 4]);
        assert_eq!(c.train.optimizer.lr, 1e-3);
        assert_eq!(c.output, Some(PathBuf::from("out/x")));
        assert_eq!(c.cells().len(), 4);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = |t: &str| ExperimentConfig::parse(t, "f.ini", None).unwrap_err().to_string();
        assert!(err("task = x\n").contains("f.ini:1"));
        assert!(err(&format!("{MINIMAL}bogus = 1\n")).contains("unknown key"));
        assert!(err(&format!("{MINIMAL}seed = 4\n")).contains("duplicate"));
        assert!(err("[nope]\n").contains("unknown section"));
        assert!(err("[experiment]\ntask = gauss1d\ndataset = gauss1d\n").contains("seed is mandatory"));
        assert!(err(&format!("{MINIMAL}[flow]\nsteps = 0\n")).contains("steps"));
        assert!(err("[experiment]\ntask = inpaint\ndataset = gauss1d\nseed = 1\n").contains("cannot run"));
    }

    #[test]
    fn hash_ignores_output_and_tracks_seed() {
        let a = ExperimentConfig::parse(MINIMAL, "t", None).unwrap();
        let mut b = a.clone();
        b.output = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        let c = ExperimentConfig::parse(MINIMAL, "t", Some(4)).unwrap();
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
