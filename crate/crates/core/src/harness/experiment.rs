//! Experiment driver: standard phase, adversarial runs, sweeps, reports.
//!
//! Output layout under `output_dir`:
//!
//! ```text
//! resolved_config.json
//! summary.csv                      (sweep only)
//! std_<variant>/model.bin, train_report.json, eval_report.json
//! runs/<method>_beta<β>_<variant>/model.bin, train_report.json, eval_report.json,
//!                                  landscape_<mode>_<anchor>.csv
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{init_model_with_extra_linear, load_model, save_model, NetworkModel};
use crate::numerics::derive_seed;
use crate::trainers::{train, train_standard, Method, TrainReport, TrainSpec};

use super::config::{DatasetConfig, ExperimentConfig, LandscapeConfig};
use super::data::{load_idx_subset, make_blobs_split, BlobSpec, Dataset, PixelNormalization, Split};
use super::eval::{evaluate, EvalReport};
use super::landscape::{landscape, LandscapeGrid};
use super::write_atomic;

/// Seed streams; every random draw in an experiment derives from the config seed.
mod stream {
    pub const DATA: u64 = 10;
    pub const INIT: u64 = 11;
    pub const STD_TRAIN: u64 = 12;
    pub const ADV_TRAIN: u64 = 13;
    pub const EVAL: u64 = 14;
    pub const LANDSCAPE: u64 = 15;
}

/// One row of the sweep summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: Method,
    pub beta: f64,
    pub hidden_size: Option<usize>,
    pub clean_error: f64,
    pub pgd_error: f64,
}

/// Everything one run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub train: TrainReport,
    pub eval: EvalReport,
}

pub fn load_datasets(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match &cfg.dataset {
        DatasetConfig::Blobs {
            n_train,
            n_test,
            dim,
            classes,
            separation,
            noise_std,
            strong_dims,
            weak_scale,
        } => {
            let base = derive_seed(cfg.seed, &[stream::DATA]);
            let spec = |n| BlobSpec {
                n,
                dim: *dim,
                classes: *classes,
                separation: *separation,
                noise_std: *noise_std,
                strong_dims: *strong_dims,
                weak_scale: *weak_scale,
            };
            let train = make_blobs_split(&spec(*n_train), base, derive_seed(base, &[1]), Split::Train)?;
            let test = make_blobs_split(&spec(*n_test), base, derive_seed(base, &[2]), Split::Test)?;
            Ok((train, test))
        }
        DatasetConfig::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            max_train,
            max_test,
            mean,
            std,
        } => {
            let norm = PixelNormalization { mean: *mean, std: *std };
            let mut train = load_idx_subset(train_images, train_labels, *max_train, norm, Split::Train)?;
            let mut test = load_idx_subset(test_images, test_labels, *max_test, norm, Split::Test)?;
            let classes = train.classes.max(test.classes);
            train.classes = classes;
            test.classes = classes;
            Ok((train, test))
        }
    }
}

fn model_dims(cfg: &ExperimentConfig, data: &Dataset) -> Vec<usize> {
    let mut dims = vec![data.dim()];
    dims.extend(&cfg.model.hidden);
    dims.push(data.classes);
    dims
}

fn variant_name(hidden: Option<usize>) -> String {
    hidden.map_or_else(|| "base".to_string(), |h| format!("h{h}"))
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &to_json(value)?)
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Shortest round-trip decimal form of a float for names and labels.
fn short(v: f64) -> String {
    format!("{v}")
}

/// 17-significant-digit float for CSV cells.
fn csv_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn std_spec(cfg: &ExperimentConfig) -> TrainSpec {
    TrainSpec {
        loss: cfg.standard.loss,
        seed: derive_seed(cfg.seed, &[stream::STD_TRAIN]),
        ..TrainSpec::new(
            Method::Standard,
            cfg.standard.learning_rate,
            cfg.standard.batch_size,
            cfg.standard.epochs,
        )
    }
}

fn adv_spec(cfg: &ExperimentConfig, method: Method, beta: f64, std_path: &Path) -> Result<TrainSpec> {
    let t = &cfg.train;
    let spec = TrainSpec {
        method,
        loss: t.loss,
        beta,
        learning_rate: t.learning_rate,
        batch_size: t.batch_size,
        epochs: t.epochs,
        attack: t.attack.resolve()?,
        seed: derive_seed(cfg.seed, &[stream::ADV_TRAIN]),
        std_model_path: Some(std_path.to_path_buf()),
        freeze_backbone: t.freeze_backbone,
        report_attack: None,
    };
    spec.validate_with_paths()?;
    Ok(spec)
}

/// Trains (or loads) the standard model for one hidden-size variant and
/// writes its artifacts to `dir`.
pub fn standard_phase(
    cfg: &ExperimentConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    hidden: Option<usize>,
    dir: &Path,
) -> Result<RunOutcome> {
    ensure_dir(dir)?;
    let spec = std_spec(cfg);
    let init = match &cfg.standard.model_path {
        Some(path) => load_model(path)?,
        None => init_model_with_extra_linear(
            &model_dims(cfg, train_set),
            hidden,
            derive_seed(cfg.seed, &[stream::INIT, hidden.unwrap_or(0) as u64]),
        )?,
    };
    let spec = if cfg.standard.model_path.is_some() {
        TrainSpec { epochs: 0, ..spec }
    } else {
        spec
    };
    let report = train_standard(train_set, &spec, init)?;
    let eval = evaluate(
        &report.model,
        test_set,
        &cfg.eval_attack.resolve()?,
        derive_seed(cfg.seed, &[stream::EVAL]),
    )?;
    save_model(&report.model, dir.join("model.bin"))?;
    write_json(&dir.join("train_report.json"), &report)?;
    write_json(&dir.join("eval_report.json"), &eval)?;
    Ok(RunOutcome { train: report, eval })
}

/// One adversarial run starting from the standard model stored at `std_path`.
pub fn adversarial_phase(
    cfg: &ExperimentConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    method: Method,
    beta: f64,
    std_model: &NetworkModel,
    std_path: &Path,
    dir: &Path,
) -> Result<RunOutcome> {
    ensure_dir(dir)?;
    let spec = adv_spec(cfg, method, beta, std_path)?;
    // adversarial baselines also start from θ_std, as every method does here
    let report = train(train_set, &spec, std_model.clone())?;
    let eval = evaluate(
        &report.model,
        test_set,
        &cfg.eval_attack.resolve()?,
        derive_seed(cfg.seed, &[stream::EVAL]),
    )?;
    save_model(&report.model, dir.join("model.bin"))?;
    write_json(&dir.join("train_report.json"), &report)?;
    write_json(&dir.join("eval_report.json"), &eval)?;
    Ok(RunOutcome { train: report, eval })
}

/// CSV with header `alpha,beta,loss`, one row per grid point.
pub fn landscape_csv(grid: &LandscapeGrid) -> String {
    let mut out = String::from("alpha,beta,loss\n");
    for (i, row) in grid.values.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{}",
                csv_float(grid.offsets[i]),
                csv_float(grid.offsets[j]),
                csv_float(*v)
            );
        }
    }
    out
}

/// Writes landscape grids for the first `anchors` test samples.
pub fn write_landscapes(
    cfg: &ExperimentConfig,
    lcfg: &LandscapeConfig,
    model: &NetworkModel,
    test_set: &Dataset,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let extent = match lcfg.extent {
        Some(e) => e,
        None => cfg.eval_attack.resolve()?.epsilon,
    };
    let mut written = Vec::new();
    for a in 0..lcfg.anchors.min(test_set.len()) {
        for &mode in &lcfg.modes {
            let grid = landscape(
                model,
                test_set.inputs.row(a),
                test_set.labels[a],
                mode,
                extent,
                lcfg.resolution,
                derive_seed(cfg.seed, &[stream::LANDSCAPE, a as u64]),
            )?;
            let path = dir.join(format!("landscape_{}_{a}.csv", mode.name()));
            write_atomic(&path, landscape_csv(&grid).as_bytes())?;
            written.push(path);
        }
    }
    Ok(written)
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("method,beta,hidden_size,clean_error,pgd_error\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.method.name(),
            csv_float(r.beta),
            r.hidden_size.map_or_else(String::new, |h| h.to_string()),
            csv_float(r.clean_error),
            csv_float(r.pgd_error)
        );
    }
    out
}

fn prepare(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    ensure_dir(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join("resolved_config.json"), cfg)?;
    load_datasets(cfg)
}

/// Full sweep over `methods × betas × hidden sizes`; returns the summary rows.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<SummaryRow>> {
    let (train_set, test_set) = prepare(cfg)?;
    let mut rows = Vec::new();
    for hidden in cfg.hidden_variants() {
        let variant = variant_name(hidden);
        let std_dir = cfg.output_dir.join(format!("std_{variant}"));
        let std_run = standard_phase(cfg, &train_set, &test_set, hidden, &std_dir)?;
        let std_path = std_dir.join("model.bin");
        for method in cfg.methods() {
            for beta in cfg.betas() {
                let run_dir = cfg
                    .output_dir
                    .join("runs")
                    .join(format!("{}_beta{}_{variant}", method.name(), short(beta)));
                let outcome = if method == Method::Standard {
                    ensure_dir(&run_dir)?;
                    write_json(&run_dir.join("eval_report.json"), &std_run.eval)?;
                    std_run.clone()
                } else {
                    adversarial_phase(
                        cfg,
                        &train_set,
                        &test_set,
                        method,
                        beta,
                        &std_run.train.model,
                        &std_path,
                        &run_dir,
                    )?
                };
                if let Some(lcfg) = &cfg.landscape {
                    write_landscapes(cfg, lcfg, &outcome.train.model, &test_set, &run_dir)?;
                }
                log::info!(
                    "{} β={} {}: clean {:.4} pgd {:.4}",
                    method.name(),
                    short(beta),
                    variant,
                    outcome.eval.clean_error,
                    outcome.eval.pgd_error
                );
                rows.push(SummaryRow {
                    method,
                    beta,
                    hidden_size: hidden,
                    clean_error: outcome.eval.clean_error,
                    pgd_error: outcome.eval.pgd_error,
                });
            }
        }
    }
    write_atomic(&cfg.output_dir.join("summary.csv"), summary_csv(&rows).as_bytes())?;
    Ok(rows)
}

/// Loads a config file and runs the full sweep.
pub fn run_experiment(config_path: &Path) -> Result<Vec<SummaryRow>> {
    run_sweep(&ExperimentConfig::load(config_path)?)
}

/// Standard phase plus the single configured run (`train.method`, `train.beta`).
/// Artifacts land in `std/` and `train/`.
pub fn run_train(cfg: &ExperimentConfig) -> Result<(RunOutcome, RunOutcome)> {
    let (train_set, test_set) = prepare(cfg)?;
    let hidden = cfg.model.extra_linear;
    let std_dir = cfg.output_dir.join("std");
    let std_run = standard_phase(cfg, &train_set, &test_set, hidden, &std_dir)?;
    let run_dir = cfg.output_dir.join("train");
    let outcome = if cfg.train.method == Method::Standard {
        ensure_dir(&run_dir)?;
        save_model(&std_run.train.model, run_dir.join("model.bin"))?;
        write_json(&run_dir.join("train_report.json"), &std_run.train)?;
        write_json(&run_dir.join("eval_report.json"), &std_run.eval)?;
        std_run.clone()
    } else {
        adversarial_phase(
            cfg,
            &train_set,
            &test_set,
            cfg.train.method,
            cfg.train.beta,
            &std_run.train.model,
            &std_dir.join("model.bin"),
            &run_dir,
        )?
    };
    Ok((std_run, outcome))
}

/// Evaluates a saved model on the test split; writes `eval/eval_report.json`.
pub fn run_eval(cfg: &ExperimentConfig, model_path: &Path) -> Result<EvalReport> {
    cfg.validate()?;
    let (_, test_set) = load_datasets(cfg)?;
    let model = load_model(model_path)?;
    let report = evaluate(
        &model,
        &test_set,
        &cfg.eval_attack.resolve()?,
        derive_seed(cfg.seed, &[stream::EVAL]),
    )?;
    let dir = cfg.output_dir.join("eval");
    ensure_dir(&dir)?;
    write_json(&dir.join("eval_report.json"), &report)?;
    Ok(report)
}

/// Writes landscape grids for a saved model into `landscape/`.
pub fn run_landscape(cfg: &ExperimentConfig, model_path: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let (_, test_set) = load_datasets(cfg)?;
    let model = load_model(model_path)?;
    let lcfg = cfg.landscape.clone().unwrap_or_default();
    write_landscapes(cfg, &lcfg, &model, &test_set, &cfg.output_dir.join("landscape"))
}
