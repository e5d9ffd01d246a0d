//! End-to-end harness behaviour: experiment outputs, the overwrite guard,
//! IDX ingestion and the command-line interface.

use std::path::Path;
use std::process::Command;

use pmrf_core::RngKey;
use pmrf_lab::config::Dataset;
use pmrf_lab::data::{synth_dataset, write_idx};
use pmrf_lab::experiment::{REPORT_CSV, REPORT_JSON};
use pmrf_lab::{run_experiment, ExperimentConfig, LabError, RunOptions};

fn tiny(task: &str, dataset: &str, methods: &str, extra: &str) -> String {
    format!(
        "[experiment]\ntask = {task}\ndataset = {dataset}\nn_samples = 120\ntest_size = 20\nseed = 2\n{extra}\n\
         [flow]\nmethods = {methods}\nsteps = 2, 4\n[train]\nepochs = 1\nbatch = 16\nhidden = 8\ntime_frequencies = 2\n"
    )
}

fn run(text: &str, out: Option<&Path>, opts: RunOptions) -> pmrf_lab::Result<pmrf_lab::ExperimentReport> {
    let mut cfg = ExperimentConfig::parse(text, "test", None)?;
    cfg.output = out.map(Path::to_path_buf);
    run_experiment(&cfg, opts)
}

#[test]
fn gauss1d_mse_ordering() {
    let text = "[experiment]\ntask = gauss1d\ndataset = gauss1d\nn_samples = 100000\ntest_size = 20000\nseed = 21\ndot_fit_samples = 50000\n\
                [degradation]\nnoise_sigma = 1\n\
                [flow]\nmethods = pmrf, flow_from_y, cond_on_y, cond_on_xstar, dot\nsteps = 100\nsigma_s = 0\n\
                [train]\nepochs = 4\nbatch = 128\nhidden = 64, 64\ntime_frequencies = 8\n";
    let r = run(text, None, RunOptions::default()).unwrap();
    let mse = |m: &str| r.row(m, 100).unwrap().distortion.mse;
    for m in ["pmrf", "flow_from_y", "dot"] {
        assert!((mse(m) - 0.586).abs() <= 0.03, "{m}: {}", mse(m));
    }
    for m in ["cond_on_y", "cond_on_xstar"] {
        assert!((mse(m) - 1.0).abs() <= 0.05, "{m}: {}", mse(m));
    }
}

#[test]
fn every_task_produces_a_complete_report() {
    let sprites = "synthetic_sprites";
    for (task, dataset, extra) in [
        ("denoise", "two_moons_2d", ""),
        ("denoise", sprites, ""),
        ("super_resolution", sprites, "[degradation]\nsr_factor = 4\nnoise_sigma = 0.05"),
        ("inpaint", sprites, ""),
        ("colorize", sprites, ""),
        ("pipeline", sprites, "[degradation]\nblur_ksize = 7"),
    ] {
        let text = tiny(task, dataset, "pmrf, cond_on_y, cond_on_xstar, flow_from_y, dot, posterior_mean", extra);
        let r = run(&text, None, RunOptions::default()).unwrap_or_else(|e| panic!("{task}: {e}"));
        assert_eq!(r.rows.len(), 12, "{task}");
        assert!(r.rows.iter().all(|row| row.frechet.is_finite() && row.distortion.mse.is_finite()));
        // Step-independent methods repeat across K.
        assert_eq!(r.row("dot", 2).unwrap().distortion, r.row("dot", 4).unwrap().distortion);
        assert!(r.timing.is_some());
    }
}

#[test]
fn outputs_carry_the_config_hash_and_guard_against_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let text = tiny("denoise", "two_moons_2d", "pmrf, posterior_mean", "");
    let strict = RunOptions {
        strict_determinism: true,
        ..RunOptions::default()
    };
    let r = run(&text, Some(dir.path()), strict).unwrap();
    assert!(r.timing.is_none());
    for name in [REPORT_JSON, REPORT_CSV, "plane.dat"] {
        let body = std::fs::read_to_string(dir.path().join(name)).unwrap();
        assert!(body.contains(&r.config_hash), "{name} lacks the hash");
    }
    let csv = std::fs::read_to_string(dir.path().join(REPORT_CSV)).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.starts_with("config_hash,method,k,mse,rmse,psnr,ind_rmse,frechet,n"));

    let other = text.replace("seed = 2", "seed = 3");
    match run(&other, Some(dir.path()), strict) {
        Err(LabError::ConfigMismatch { .. }) => {}
        other => panic!("expected a config mismatch, got {other:?}"),
    }
    let forced = RunOptions { force: true, ..strict };
    assert_ne!(run(&other, Some(dir.path()), forced).unwrap().config_hash, r.config_hash);
}

#[test]
fn idx_dataset_runs_through_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let gray: Vec<_> = synth_dataset(&Dataset::SyntheticSprites, 60, RngKey::new(5, 0))
        .unwrap()
        .iter()
        .map(|t| {
            let d: Vec<f64> = t.data().chunks(3).map(|p| (p.iter().sum::<f64>() / 3.0 * 255.0).round() / 255.0).collect();
            pmrf_core::Tensor::new(vec![16, 16, 1], d).unwrap()
        })
        .collect();
    let path = dir.path().join("sprites.idx");
    write_idx(&path, &gray).unwrap();
    let text = format!(
        "[experiment]\ntask = inpaint\ndataset = idx:{}\nn_samples = 60\ntest_size = 10\nseed = 4\n\
         [flow]\nmethods = pmrf, dot\nsteps = 3\n[train]\nepochs = 1\nbatch = 8\nhidden = 8\ntime_frequencies = 2\n",
        path.display()
    );
    let r = run(&text, None, RunOptions::default()).unwrap();
    assert_eq!(r.rows.len(), 2);

    let too_many = text.replace("n_samples = 60", "n_samples = 61");
    assert!(run(&too_many, None, RunOptions::default()).is_err());
}

fn pmrf() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pmrf"))
}

#[test]
fn cli_stages_compose() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("exp.ini");
    std::fs::write(&cfg_path, tiny("denoise", "two_moons_2d", "pmrf, flow_from_y, dot, posterior_mean", "")).unwrap();
    let out = dir.path().join("out");
    let stage = |args: &[&str]| {
        let status = pmrf()
            .args(args)
            .arg("--config")
            .arg(&cfg_path)
            .arg("--out")
            .arg(&out)
            .arg("--strict-determinism")
            .output()
            .unwrap();
        assert!(status.status.success(), "{args:?}: {}", String::from_utf8_lossy(&status.stderr));
    };
    stage(&["train-mmse"]);
    stage(&["train-flow"]);
    stage(&["restore"]);
    stage(&["evaluate"]);
    stage(&["sweep-k", "--method", "pmrf"]);
    for name in ["mmse.ckpt", "flow_pmrf.ckpt", "dot.json", "restored_pmrf_k4.tensor", "evaluate.json", "sweep_k.csv"] {
        assert!(out.join(name).exists(), "missing {name}");
    }
    let sweep = std::fs::read_to_string(out.join("sweep_k.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 3);

    // A different seed invalidates the saved artifacts.
    let status = pmrf()
        .args(["restore", "--seed", "99", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(!status.status.success());

    // `run` with the stage-wise seed reproduces the evaluate rows exactly.
    let run_out = dir.path().join("run");
    let status = pmrf()
        .args(["run", "--strict-determinism", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&run_out)
        .output()
        .unwrap();
    assert!(status.status.success());
    let rows = |p: &Path| -> serde_json::Value {
        serde_json::from_slice::<serde_json::Value>(&std::fs::read(p).unwrap()).unwrap()["rows"].clone()
    };
    assert_eq!(rows(&out.join("evaluate.json")), rows(&run_out.join(REPORT_JSON)));
}

#[test]
fn cli_oracle_check_and_errors() {
    let ok = pmrf().args(["oracle-check", "--mc-samples", "200000"]).output().unwrap();
    assert!(ok.status.success());
    let text = String::from_utf8_lossy(&ok.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 11);

    let missing = pmrf().args(["run", "--out", "/nonexistent"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("--config"));
}

#[test]
fn bundled_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        ExperimentConfig::load(&path, None).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        n += 1;
    }
    assert!(n >= 2);
}
