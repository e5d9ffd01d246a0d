//! Experiment orchestration: degrade a dataset, fit the posterior-mean
//! regressor and every configured method on identical splits, restore the
//! test split at each step count and measure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use pmrf_core::degrade::{degrade, resize_bilinear};
use pmrf_core::dot::{DotModel, Pooling};
use pmrf_core::flows::{
    baseline_restore, pmrf_restore, train_flow, train_mmse, FlowMethod, FlowSpec, PairedData, Regressor,
};
use pmrf_core::metrics::{frechet_from_samples, indrmse, mse_rmse_psnr, DistortionReport};
use pmrf_core::neural::{checkpoint, TrainReport};
use pmrf_core::{DotModel64, Mlp64, RngKey, Tensor, Tensor64};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Method};
use crate::data::load_dataset;
use crate::error::{LabError, Result, StageContext};

/// Degraded dataset split into train and test rows (`n × d` each).
#[derive(Clone, Debug)]
pub struct Prepared {
    pub item_shape: Vec<usize>,
    pub x_train: Tensor64,
    pub y_train: Tensor64,
    pub x_test: Tensor64,
    pub y_test: Tensor64,
}

impl Prepared {
    pub fn x_dim(&self) -> usize {
        self.x_train.shape()[1]
    }

    fn image_layout(&self) -> Option<(usize, usize, usize)> {
        match self.item_shape[..] {
            [h, w, c] => Some((h, w, c)),
            _ => None,
        }
    }
}

fn base_key(cfg: &ExperimentConfig) -> RngKey {
    RngKey::new(cfg.seed, 0)
}

/// Synthesize or load the data, degrade every sample and split it: the
/// first `n − test_size` samples train, the rest test.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let key = base_key(cfg);
    let xs = load_dataset(&cfg.dataset, cfg.n_samples, key.derive_str("data"))?;
    let item_shape = xs[0].shape().to_vec();
    let deg_key = key.derive_str("degrade");
    let ys = xs
        .iter()
        .enumerate()
        .map(|(i, x)| degrade(x, &cfg.degradation, deg_key.derive(i as u64)))
        .collect::<pmrf_core::Result<Vec<_>>>()
        .stage("degrade")?;
    let split = cfg.train_size();
    let flat = |items: &[Tensor64]| Tensor::stack_flat(items).stage("flatten");
    Ok(Prepared {
        item_shape,
        x_train: flat(&xs[..split])?,
        y_train: flat(&ys[..split])?,
        x_test: flat(&xs[split..])?,
        y_test: flat(&ys[split..])?,
    })
}

/// Measurements lifted to the signal's shape for flow-from-Y: unchanged when
/// shapes already agree, bilinearly resized otherwise.
pub fn upscale_measurements(y: &Tensor64, data: &Prepared, y_item: &[usize]) -> Result<Tensor64> {
    let (n, dy) = y.dims2()?;
    if dy == data.x_dim() {
        return Ok(y.clone());
    }
    let Some((h, w, _)) = data.image_layout() else {
        return Err(pmrf_core::Error::BadShape("flow_from_y needs measurements shaped like the signal".into()).into());
    };
    let items = y.unstack(y_item)?;
    let up = items
        .iter()
        .map(|t| resize_bilinear(t, h, w))
        .collect::<pmrf_core::Result<Vec<_>>>()?;
    let out = Tensor::stack_flat(&up)?;
    debug_assert_eq!(out.dims2()?.0, n);
    Ok(out)
}

/// Everything fitted for one experiment.
#[derive(Clone, Debug, Default)]
pub struct Models {
    pub fstar: Option<Mlp64>,
    pub flows: BTreeMap<FlowMethod, Mlp64>,
    pub dot: Option<DotModel64>,
    pub train_reports: BTreeMap<String, TrainReport>,
}

impl Models {
    pub fn fstar(&self) -> Result<&Mlp64> {
        self.fstar.as_ref().ok_or_else(|| LabError::MissingArtifact {
            path: PathBuf::from(MMSE_CKPT),
            hint: "train the posterior-mean regressor first (train-mmse)".into(),
        })
    }
}

pub const MMSE_CKPT: &str = "mmse.ckpt";
pub const DOT_FILE: &str = "dot.json";

pub fn flow_ckpt_name(m: FlowMethod) -> String {
    format!("flow_{}.ckpt", m.name())
}

/// Item shape of a measurement, needed to undo flattening.
pub fn measurement_item_shape(cfg: &ExperimentConfig, data: &Prepared) -> Result<Vec<usize>> {
    let probe = degrade(
        &Tensor64::zeros(&data.item_shape),
        &cfg.degradation,
        base_key(cfg).derive_str("probe"),
    )?;
    Ok(probe.shape().to_vec())
}

pub fn fit_mmse(cfg: &ExperimentConfig, data: &Prepared) -> Result<(Mlp64, TrainReport)> {
    train_mmse(
        &cfg.train,
        PairedData {
            x: &data.x_train,
            y: &data.y_train,
        },
    )
    .stage("train_mmse")
}

pub fn fit_flow(
    cfg: &ExperimentConfig,
    data: &Prepared,
    fstar: &Mlp64,
    method: FlowMethod,
) -> Result<(Mlp64, TrainReport)> {
    let spec = FlowSpec::new(method, cfg.sigma_s, cfg.steps[0]).stage("flow_spec")?;
    let stage = format!("train_flow[{}]", method.name());
    let y = match method {
        FlowMethod::FlowFromY => upscale_measurements(&data.y_train, data, &measurement_item_shape(cfg, data)?)?,
        _ => data.y_train.clone(),
    };
    train_flow(&cfg.train, PairedData { x: &data.x_train, y: &y }, Some(fstar), &spec).stage(stage)
}

/// DOT fitted on the first `dot_fit_samples` training rows.
pub fn fit_dot(cfg: &ExperimentConfig, data: &Prepared, fstar: &Mlp64) -> Result<DotModel64> {
    let n = cfg.dot_fit_samples.min(data.x_train.shape()[0]);
    let idx: Vec<usize> = (0..n).collect();
    let source = fstar.predict(&data.y_train.gather_rows(&idx)).stage("fit_dot")?;
    DotModel::fit(&source, &data.x_train.gather_rows(&idx), data.image_layout()).stage("fit_dot")
}

/// Fit the regressor and every configured method.
pub fn fit_all(cfg: &ExperimentConfig, data: &Prepared) -> Result<Models> {
    let mut models = Models::default();
    let (fstar, rep) = fit_mmse(cfg, data)?;
    models.train_reports.insert("posterior_mean".into(), rep);
    for &m in &cfg.methods {
        match m {
            Method::Flow(f) => {
                let (v, rep) = fit_flow(cfg, data, &fstar, f)?;
                models.train_reports.insert(f.name().into(), rep);
                models.flows.insert(f, v);
            }
            Method::Dot => models.dot = Some(fit_dot(cfg, data, &fstar)?),
            Method::PosteriorMean => {}
        }
    }
    models.fstar = Some(fstar);
    Ok(models)
}

/// Restore the test split with `method` at `k` Euler steps. Every K for a
/// method shares one source-noise draw.
pub fn restore(cfg: &ExperimentConfig, data: &Prepared, models: &Models, method: Method, k: usize) -> Result<Tensor64> {
    let fstar = models.fstar()?;
    let key = base_key(cfg).derive_str("restore").derive_str(method.name());
    let stage = format!("restore[{}, K={k}]", method.name());
    match method {
        Method::PosteriorMean => fstar.predict(&data.y_test).stage(stage),
        Method::Dot => {
            let dot = models.dot.as_ref().ok_or_else(|| LabError::MissingArtifact {
                path: PathBuf::from(DOT_FILE),
                hint: "fit DOT first (train-flow)".into(),
            })?;
            pmrf_core::dot::dot_restore(fstar, dot, &data.y_test).stage(stage)
        }
        Method::Flow(f) => {
            let v = models.flows.get(&f).ok_or_else(|| LabError::MissingArtifact {
                path: PathBuf::from(flow_ckpt_name(f)),
                hint: "train the vector field first (train-flow)".into(),
            })?;
            let spec = FlowSpec::new(f, cfg.sigma_s, k).stage(stage.clone())?;
            match f {
                FlowMethod::Pmrf => pmrf_restore(fstar, v, &data.y_test, &spec, key).stage(stage),
                FlowMethod::CondOnY => baseline_restore(f, v, &data.y_test, data.x_dim(), &spec, key).stage(stage),
                FlowMethod::CondOnXstar => {
                    let xs = fstar.predict(&data.y_test).stage(stage.clone())?;
                    baseline_restore(f, v, &xs, data.x_dim(), &spec, key).stage(stage)
                }
                FlowMethod::FlowFromY => {
                    let ydag = upscale_measurements(&data.y_test, data, &measurement_item_shape(cfg, data)?)?;
                    baseline_restore(f, v, &ydag, data.x_dim(), &spec, key).stage(stage)
                }
            }
        }
    }
}

/// One row of the distortion-perception table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub k: usize,
    pub distortion: DistortionReport,
    pub frechet: f64,
}

/// Distortion against the ground truth, IndRMSE against the regressor and
/// the Fréchet distance between reconstructions and ground truth.
pub fn evaluate(
    cfg: &ExperimentConfig,
    data: &Prepared,
    fstar: &Mlp64,
    method: Method,
    k: usize,
    recon: &Tensor64,
) -> Result<ReportRow> {
    let stage = format!("evaluate[{}, K={k}]", method.name());
    let xstar = fstar.predict(&data.y_test).stage(stage.clone())?;
    let ind = indrmse(recon, &xstar).stage(stage.clone())?;
    let distortion = mse_rmse_psnr(&data.x_test, recon).stage(stage.clone())?.with_ind_rmse(ind);
    let frechet = match (cfg.frechet_pool, data.image_layout()) {
        (true, Some((h, w, c))) => {
            let p = Pooling::for_image(h, w, c);
            frechet_from_samples(&p.project(recon)?, &p.project(&data.x_test)?)
        }
        _ => frechet_from_samples(recon, &data.x_test),
    }
    .stage(stage)?;
    Ok(ReportRow {
        method: method.name().into(),
        k,
        distortion,
        frechet,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub started_unix: u64,
    pub finished_unix: u64,
    pub elapsed_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config_hash: String,
    pub seed: u64,
    pub task: String,
    pub dataset: String,
    pub strict_determinism: bool,
    /// Absent in strict mode so reruns are byte-identical.
    pub timing: Option<Timing>,
    pub train: BTreeMap<String, TrainReport>,
    pub rows: Vec<ReportRow>,
    pub config: ExperimentConfig,
}

impl ExperimentReport {
    pub fn row(&self, method: &str, k: usize) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method && r.k == k)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    pub strict_determinism: bool,
    pub force: bool,
    pub save_checkpoints: bool,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Rows for every configured `(method, K)` cell; step-independent methods
/// are restored once and repeated across K.
pub fn measure_all(cfg: &ExperimentConfig, data: &Prepared, models: &Models) -> Result<Vec<ReportRow>> {
    let fstar = models.fstar()?;
    let mut rows = Vec::with_capacity(cfg.cells().len());
    for &m in &cfg.methods {
        let mut cached: Option<ReportRow> = None;
        for &k in &cfg.steps {
            if !m.uses_steps() {
                if let Some(r) = &cached {
                    rows.push(ReportRow { k, ..r.clone() });
                    continue;
                }
            }
            let recon = restore(cfg, data, models, m, k)?;
            let row = evaluate(cfg, data, fstar, m, k, &recon)?;
            log::info!(
                "{} K={k}: rmse {:.5} frechet {:.5}",
                m.name(),
                row.distortion.rmse,
                row.frechet
            );
            cached = Some(row.clone());
            rows.push(row);
        }
    }
    Ok(rows)
}

/// The full pipeline. Writes report files when `cfg.output` is set.
pub fn run_experiment(cfg: &ExperimentConfig, opts: RunOptions) -> Result<ExperimentReport> {
    if let Some(out) = &cfg.output {
        guard_output(out, &cfg.hash(), opts.force)?;
    }
    let started = (unix_now(), Instant::now());
    let data = prepare(cfg)?;
    let models = fit_all(cfg, &data)?;
    let rows = measure_all(cfg, &data, &models)?;
    let report = ExperimentReport {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        task: cfg.task.name().into(),
        dataset: cfg.dataset.name(),
        strict_determinism: opts.strict_determinism,
        timing: (!opts.strict_determinism).then(|| Timing {
            started_unix: started.0,
            finished_unix: unix_now(),
            elapsed_seconds: started.1.elapsed().as_secs_f64(),
        }),
        train: models.train_reports.clone(),
        rows,
        config: cfg.clone(),
    };
    check_complete(cfg, &report)?;
    if let Some(out) = &cfg.output {
        write_report(out, &report)?;
        if opts.save_checkpoints {
            save_models(out, cfg, &models)?;
        }
    }
    Ok(report)
}

/// Every configured cell must be present exactly once.
pub fn check_complete(cfg: &ExperimentConfig, report: &ExperimentReport) -> Result<()> {
    for (m, k) in cfg.cells() {
        let hits = report.rows.iter().filter(|r| r.method == m.name() && r.k == k).count();
        if hits != 1 {
            return Err(pmrf_core::Error::InvalidArgument(format!(
                "report has {hits} rows for {} at K={k}",
                m.name()
            ))
            .into());
        }
    }
    Ok(())
}

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const PLANE_DAT: &str = "plane.dat";

#[derive(Deserialize)]
struct HashOnly {
    config_hash: String,
}

/// Refuse to overwrite outputs produced by a different config unless forced.
pub fn guard_output(out: &Path, hash: &str, force: bool) -> Result<()> {
    for name in [REPORT_JSON, "run.json", "sweep_k.json", "evaluate.json"] {
        let p = out.join(name);
        if !p.exists() || force {
            continue;
        }
        let existing: HashOnly = serde_json::from_slice(&std::fs::read(&p)?)?;
        if existing.config_hash != hash {
            return Err(LabError::ConfigMismatch {
                path: p,
                existing: existing.config_hash,
                current: hash.into(),
            });
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct CsvRow<'a> {
    config_hash: &'a str,
    method: &'a str,
    k: usize,
    mse: f64,
    rmse: f64,
    psnr: String,
    ind_rmse: Option<f64>,
    frechet: f64,
    n: usize,
}

/// Write `report.json`, `report.csv` and the gnuplot-ready `plane.dat`.
pub fn write_report(out: &Path, report: &ExperimentReport) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let mut json = serde_json::to_vec_pretty(report)?;
    json.push(b'\n');
    std::fs::write(out.join(REPORT_JSON), json)?;
    write_rows_csv(&out.join(REPORT_CSV), &report.config_hash, &report.rows)?;
    std::fs::write(out.join(PLANE_DAT), plane_text(&report.config_hash, &report.rows))?;
    Ok(())
}

pub fn write_rows_csv(path: &Path, hash: &str, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(CsvRow {
            config_hash: hash,
            method: &r.method,
            k: r.k,
            mse: r.distortion.mse,
            rmse: r.distortion.rmse,
            psnr: if r.distortion.psnr.is_infinite() {
                "inf".into()
            } else {
                r.distortion.psnr.to_string()
            },
            ind_rmse: r.distortion.ind_rmse,
            frechet: r.frechet,
            n: r.distortion.n,
        })
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> LabError {
    LabError::Io(std::io::Error::other(e))
}

/// One gnuplot data block per method (`index i`), columns `K frechet rmse`.
pub fn plane_text(hash: &str, rows: &[ReportRow]) -> String {
    let mut s = format!("# config_hash {hash}\n# columns: K frechet rmse\n");
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    for (i, m) in methods.iter().enumerate() {
        if i > 0 {
            s.push_str("\n\n");
        }
        s.push_str(&format!("# {m}\n"));
        for r in rows.iter().filter(|r| r.method == *m) {
            s.push_str(&format!("{} {} {}\n", r.k, r.frechet, r.distortion.rmse));
        }
    }
    s
}

fn sidecar(cfg: &ExperimentConfig, role: &str, report: Option<&TrainReport>) -> serde_json::Value {
    serde_json::json!({
        "config_hash": cfg.hash(),
        "role": role,
        "train": report,
    })
}

/// Persist the regressor, vector fields and DOT map under `out`.
pub fn save_models(out: &Path, cfg: &ExperimentConfig, models: &Models) -> Result<()> {
    std::fs::create_dir_all(out)?;
    if let Some(f) = &models.fstar {
        checkpoint::save(
            &out.join(MMSE_CKPT),
            f,
            &sidecar(cfg, "posterior_mean", models.train_reports.get("posterior_mean")),
        )?;
    }
    for (m, v) in &models.flows {
        checkpoint::save(
            &out.join(flow_ckpt_name(*m)),
            v,
            &sidecar(cfg, m.name(), models.train_reports.get(m.name())),
        )?;
    }
    if let Some(d) = &models.dot {
        let body = serde_json::json!({ "config_hash": cfg.hash(), "model": d });
        std::fs::write(out.join(DOT_FILE), serde_json::to_vec_pretty(&body)?)?;
    }
    Ok(())
}

/// Load whatever models exist under `out`; checkpoints from a different
/// config are rejected.
pub fn load_models(out: &Path, cfg: &ExperimentConfig) -> Result<Models> {
    let hash = cfg.hash();
    let check = |path: &Path, side: Option<&serde_json::Value>| -> Result<()> {
        let found = side
            .and_then(|v| v.get("config_hash"))
            .and_then(|v| v.as_str())
            .unwrap_or("<none>");
        if found != hash {
            return Err(LabError::ConfigMismatch {
                path: path.to_path_buf(),
                existing: found.into(),
                current: hash.clone(),
            });
        }
        Ok(())
    };
    let mut models = Models::default();
    let p = out.join(MMSE_CKPT);
    if p.exists() {
        let (params, side) = checkpoint::load(&p)?;
        check(&p, side.as_ref())?;
        models.fstar = Some(params);
    }
    for m in FlowMethod::ALL {
        let p = out.join(flow_ckpt_name(m));
        if p.exists() {
            let (params, side) = checkpoint::load(&p)?;
            check(&p, side.as_ref())?;
            models.flows.insert(m, params);
        }
    }
    let p = out.join(DOT_FILE);
    if p.exists() {
        let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&p)?)?;
        check(&p, Some(&v))?;
        models.dot = Some(serde_json::from_value(v["model"].clone())?);
    }
    Ok(models)
}

/// Rows produced by the stand-alone `evaluate` and `sweep-k` commands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowsReport {
    pub config_hash: String,
    pub command: String,
    pub seed: u64,
    pub strict_determinism: bool,
    pub timing: Option<Timing>,
    pub rows: Vec<ReportRow>,
}

impl RowsReport {
    pub fn new(cfg: &ExperimentConfig, command: &str, strict: bool, started: (u64, Instant), rows: Vec<ReportRow>) -> Self {
        Self {
            config_hash: cfg.hash(),
            command: command.into(),
            seed: cfg.seed,
            strict_determinism: strict,
            timing: (!strict).then(|| Timing {
                started_unix: started.0,
                finished_unix: unix_now(),
                elapsed_seconds: started.1.elapsed().as_secs_f64(),
            }),
            rows,
        }
    }

    /// Write `<stem>.json`, `<stem>.csv` and `<stem>_plane.dat` under `out`.
    pub fn write(&self, out: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(out)?;
        let mut json = serde_json::to_vec_pretty(self)?;
        json.push(b'\n');
        std::fs::write(out.join(format!("{stem}.json")), json)?;
        write_rows_csv(&out.join(format!("{stem}.csv")), &self.config_hash, &self.rows)?;
        std::fs::write(out.join(format!("{stem}_plane.dat")), plane_text(&self.config_hash, &self.rows))?;
        Ok(())
    }
}

pub fn start_clock() -> (u64, Instant) {
    (unix_now(), Instant::now())
}

pub fn restored_name(method: Method, k: usize) -> String {
    format!("restored_{}_k{k}.tensor", method.name())
}
