use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use pmrf_core::neural::checkpoint;
use pmrf_lab::config::{ExperimentConfig, Method};
use pmrf_lab::data::{read_tensor, write_tensor};
use pmrf_lab::experiment::{
    self, evaluate, fit_dot, fit_flow, fit_mmse, guard_output, load_models, prepare, restore, restored_name,
    save_models, start_clock, Models, RowsReport,
};
use pmrf_lab::oracle_check;
use pmrf_lab::{run_experiment, RunOptions};

#[derive(Parser)]
#[command(name = "pmrf", version, about = "Posterior-mean rectified flow lab")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (key = value with sections).
    #[arg(long)]
    config: Option<PathBuf>,

    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory; overrides the config's `output`.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Omit wall-clock fields so reruns are byte-identical.
    #[arg(long)]
    strict_determinism: bool,

    /// Overwrite outputs produced by a different config.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form oracle and gradient checks (no training).
    OracleCheck {
        #[command(flatten)]
        common: Common,
        /// Monte Carlo sample count for the MSE checks.
        #[arg(long, default_value_t = oracle_check::DEFAULT_MC_SAMPLES)]
        mc_samples: usize,
    },
    /// Fit the posterior-mean regressor.
    TrainMmse {
        #[command(flatten)]
        common: Common,
    },
    /// Fit the vector field of each configured flow method (and DOT).
    TrainFlow {
        #[command(flatten)]
        common: Common,
        /// Only this method.
        #[arg(long)]
        method: Option<Method>,
    },
    /// Restore the test split and save the reconstructions.
    Restore {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        method: Option<Method>,
        /// Only this step count.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Measure saved reconstructions for every configured cell.
    Evaluate {
        #[command(flatten)]
        common: Common,
    },
    /// Restore and measure one method over the configured step counts.
    SweepK {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "pmrf")]
        method: Method,
    },
    /// The full experiment: data, training, restoration and reports.
    Run {
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_config(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let path = common.config.as_ref().context("--config is required")?;
    let mut cfg = ExperimentConfig::load(path, common.seed).with_context(|| format!("loading {}", path.display()))?;
    if let Some(out) = &common.out {
        cfg.output = Some(out.clone());
    }
    let out = cfg.output.clone().context("no output directory: pass --out or set [experiment] output")?;
    Ok((cfg, out))
}

fn loaded(out: &Path, cfg: &ExperimentConfig) -> Result<Models> {
    Ok(load_models(out, cfg)?)
}

fn dispatch(command: Command) -> Result<bool> {
    match command {
        Command::OracleCheck { common, mc_samples } => {
            let seed = match (&common.config, common.seed) {
                (_, Some(s)) => s,
                (Some(p), None) => ExperimentConfig::load(p, None)?.seed,
                (None, None) => 0,
            };
            let checks = oracle_check::run_suite(seed, mc_samples)?;
            for c in &checks {
                println!(
                    "{} {:<24} value {:.3e} tolerance {:.1e}  {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.value,
                    c.tolerance,
                    c.detail
                );
            }
            if let Some(out) = &common.out {
                std::fs::create_dir_all(out)?;
                std::fs::write(out.join("oracle.json"), serde_json::to_vec_pretty(&checks)?)?;
            }
            Ok(checks.iter().all(|c| c.passed))
        }
        Command::TrainMmse { common } => {
            let (cfg, out) = load_config(&common)?;
            guard_output(&out, &cfg.hash(), common.force)?;
            let data = prepare(&cfg)?;
            let (fstar, rep) = fit_mmse(&cfg, &data)?;
            let mut models = Models::default();
            models.train_reports.insert("posterior_mean".into(), rep.clone());
            models.fstar = Some(fstar);
            save_models(&out, &cfg, &models)?;
            println!("posterior-mean regressor: {} steps, final loss {:.6}", rep.steps, rep.final_loss);
            Ok(true)
        }
        Command::TrainFlow { common, method } => {
            let (cfg, out) = load_config(&common)?;
            let mut models = loaded(&out, &cfg)?;
            let fstar = models.fstar()?.clone();
            let data = prepare(&cfg)?;
            let methods: Vec<Method> = match method {
                Some(m) => vec![m],
                None => cfg.methods.clone(),
            };
            for m in methods {
                match m {
                    Method::Flow(f) => {
                        let (v, rep) = fit_flow(&cfg, &data, &fstar, f)?;
                        println!("{}: {} steps, final loss {:.6}", f.name(), rep.steps, rep.final_loss);
                        models.train_reports.insert(f.name().into(), rep);
                        models.flows.insert(f, v);
                    }
                    Method::Dot => {
                        models.dot = Some(fit_dot(&cfg, &data, &fstar)?);
                        println!("dot: fitted");
                    }
                    Method::PosteriorMean => {}
                }
            }
            // Only new artifacts are written; the regressor stays as trained.
            models.fstar = None;
            save_models(&out, &cfg, &models)?;
            Ok(true)
        }
        Command::Restore { common, method, k } => {
            let (cfg, out) = load_config(&common)?;
            let models = loaded(&out, &cfg)?;
            let data = prepare(&cfg)?;
            for (m, kk) in cfg.cells() {
                if method.is_some_and(|x| x != m) || k.is_some_and(|x| x != kk) {
                    continue;
                }
                let recon = restore(&cfg, &data, &models, m, kk)?;
                let path = out.join(restored_name(m, kk));
                write_tensor(&path, &recon)?;
                let side = serde_json::json!({ "config_hash": cfg.hash(), "method": m.name(), "k": kk });
                std::fs::write(checkpoint::sidecar_path(&path), serde_json::to_vec_pretty(&side)?)?;
                println!("{} K={kk}: wrote {}", m.name(), restored_name(m, kk));
            }
            Ok(true)
        }
        Command::Evaluate { common } => {
            let (cfg, out) = load_config(&common)?;
            guard_output(&out, &cfg.hash(), common.force)?;
            let started = start_clock();
            let models = loaded(&out, &cfg)?;
            let fstar = models.fstar()?;
            let data = prepare(&cfg)?;
            let mut rows = Vec::new();
            for (m, k) in cfg.cells() {
                let p = out.join(restored_name(m, k));
                if !p.exists() {
                    bail!("missing reconstruction {} (run restore first)", p.display());
                }
                let side: serde_json::Value = serde_json::from_slice(&std::fs::read(checkpoint::sidecar_path(&p))?)?;
                if side["config_hash"].as_str() != Some(cfg.hash().as_str()) {
                    bail!("{} was restored under a different config; rerun restore", p.display());
                }
                rows.push(evaluate(&cfg, &data, fstar, m, k, &read_tensor(&p)?)?);
            }
            print_rows(&rows);
            RowsReport::new(&cfg, "evaluate", common.strict_determinism, started, rows).write(&out, "evaluate")?;
            Ok(true)
        }
        Command::SweepK { common, method } => {
            let (cfg, out) = load_config(&common)?;
            guard_output(&out, &cfg.hash(), common.force)?;
            let started = start_clock();
            let models = loaded(&out, &cfg)?;
            let fstar = models.fstar()?;
            let data = prepare(&cfg)?;
            let mut rows = Vec::new();
            for &k in &cfg.steps {
                let recon = restore(&cfg, &data, &models, method, k)?;
                rows.push(evaluate(&cfg, &data, fstar, method, k, &recon)?);
            }
            print_rows(&rows);
            RowsReport::new(&cfg, "sweep-k", common.strict_determinism, started, rows).write(&out, "sweep_k")?;
            Ok(true)
        }
        Command::Run { common } => {
            let (cfg, _) = load_config(&common)?;
            let report = run_experiment(
                &cfg,
                RunOptions {
                    strict_determinism: common.strict_determinism,
                    force: common.force,
                    save_checkpoints: true,
                },
            )?;
            print_rows(&report.rows);
            Ok(true)
        }
    }
}

fn print_rows(rows: &[experiment::ReportRow]) {
    println!("{:<16} {:>5} {:>12} {:>10} {:>10} {:>10}", "method", "K", "mse", "psnr", "ind_rmse", "frechet");
    for r in rows {
        println!(
            "{:<16} {:>5} {:>12.6} {:>10.3} {:>10.5} {:>10.5}",
            r.method,
            r.k,
            r.distortion.mse,
            r.distortion.psnr,
            r.distortion.ind_rmse.unwrap_or(f64::NAN),
            r.frechet
        );
    }
}

