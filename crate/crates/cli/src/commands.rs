//! The `train`, `eval` and `verify` subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use nslin::checkpoint;
use nslin::model::FlowModel;
use nslin::report::{self, ErrorReport};
use nslin::trainer::{init_model, seeded_rng, TrainRecord, Trainer, EVAL_STREAM};
use serde::Serialize;
use thiserror::Error;

use crate::config::{RunConfig, BENCHMARK_CFG};
use crate::verify;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input: configuration, flags, or a checkpoint that does not fit.
    #[error("{0}")]
    Validation(String),
    /// Failure after validation succeeded, e.g. divergence or IO.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

pub fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    let text = match path {
        Some(p) => fs::read_to_string(p).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?,
        None => BENCHMARK_CFG.to_string(),
    };
    RunConfig::parse(&text).map_err(|e| {
        let origin = path.map(|p| p.display().to_string()).unwrap_or_else(|| "bundled benchmark.cfg".into());
        CliError::Validation(format!("{origin}: {e}"))
    })
}

fn init_threads(cfg: &RunConfig) {
    if let Some(n) = cfg.threads {
        // Fails only if a pool already exists, e.g. a second call in tests.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub dry_run: bool,
}

/// What `train` and `eval` leave behind.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub errors: ErrorReport,
    pub final_loss: Option<f64>,
    pub epochs: usize,
}

pub const LOSS_HISTORY: &str = "loss_history.csv";
pub const MODEL_FILE: &str = "model.json";
pub const GRID_FILE: &str = "grid.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const RESOLVED_CONFIG: &str = "config.toml";

/// Metrics, profiles and the grid for `model` under `cfg`.
pub fn write_reports(cfg: &RunConfig, model: &FlowModel, record: Option<&TrainRecord>, out: &Path) -> Result<Metrics, CliError> {
    let mut rng = seeded_rng(cfg.train.seed, EVAL_STREAM);
    let errors = report::relative_l2(model, &cfg.flow, &cfg.domain, cfg.report.n_eval, &mut rng).map_err(runtime)?;
    let profile = report::line_profile(model, &cfg.flow, &cfg.domain, cfg.report.y0, cfg.report.profile_points)
        .map_err(runtime)?;
    report::write_profiles(&profile, out).map_err(runtime)?;
    let grid = report::field_grid(model, &cfg.flow, &cfg.domain, cfg.report.grid_nx, cfg.report.grid_ny).map_err(runtime)?;
    report::write_grid(&grid, &out.join(GRID_FILE)).map_err(runtime)?;
    let metrics = Metrics {
        errors,
        final_loss: record.and_then(TrainRecord::final_loss),
        epochs: record.map_or(0, |r| r.epochs.len()),
    };
    let json = serde_json::to_string_pretty(&metrics).expect("metrics serialize");
    fs::write(out.join(METRICS_FILE), json).map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
    Ok(metrics)
}

fn prepare_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

/// Returns the output directory; with `dry_run` only the resolved
/// configuration is printed.
pub fn cmd_train(config: &Path, opts: &TrainOptions) -> Result<PathBuf, CliError> {
    let mut cfg = load_config(Some(config))?;
    if let Some(seed) = opts.seed {
        cfg.train.seed = seed;
    }
    if let Some(out) = &opts.out {
        cfg.output_dir = Some(out.clone());
    }
    let out = cfg.resolved_output_dir();
    if opts.dry_run {
        print!("{}", cfg.to_toml());
        return Ok(out);
    }
    init_threads(&cfg);
    prepare_out(&out)?;
    fs::write(out.join(RESOLVED_CONFIG), cfg.to_toml()).map_err(runtime)?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.checkpoint_dir = Some(out.join("checkpoints"));
    let model = init_model(&cfg.network.architecture(), cfg.network.shared, train_cfg.scheme, train_cfg.seed)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    info!(
        "training {} with {} parameters for {} epochs",
        train_cfg.scheme,
        model.num_params(),
        train_cfg.total_epochs()
    );
    let mut trainer = Trainer::new(train_cfg, &cfg.domain, &cfg.flow, model).map_err(|e| CliError::Validation(e.to_string()))?;
    let result = trainer.run();
    // Keep whatever history exists, even after an abort.
    report::write_loss_history(trainer.record(), &out.join(LOSS_HISTORY)).map_err(runtime)?;
    result.map_err(runtime)?;
    let (model, record) = trainer.into_parts();
    checkpoint::save_model(&out.join(MODEL_FILE), &model).map_err(runtime)?;
    let m = write_reports(&cfg, &model, Some(&record), &out)?;
    println!(
        "final loss {:.6e}; relative L2 errors u {:.4e} v {:.4e} p {:.4e} velocity {:.4e}",
        m.final_loss.unwrap_or(f64::NAN),
        m.errors.u.value,
        m.errors.v.value,
        m.errors.p.value,
        m.errors.velocity.value
    );
    println!("outputs written to {}", out.display());
    Ok(out)
}

#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    pub y0: Option<f64>,
    pub out: Option<PathBuf>,
}

pub fn cmd_eval(checkpoint_path: &Path, config: &Path, opts: &EvalOptions) -> Result<Metrics, CliError> {
    let mut cfg = load_config(Some(config))?;
    if let Some(y0) = opts.y0 {
        let r = cfg.domain.rect();
        if !(y0 > r.ymin && y0 < r.ymax) {
            return Err(CliError::Validation(format!("--y0 {y0} must lie strictly between {} and {}", r.ymin, r.ymax)));
        }
        cfg.report.y0 = y0;
    }
    if let Some(out) = &opts.out {
        cfg.output_dir = Some(out.clone());
    }
    init_threads(&cfg);
    let model = checkpoint::load_model(checkpoint_path).map_err(|e| CliError::Validation(e.to_string()))?;
    let expected = init_model(&cfg.network.architecture(), cfg.network.shared, cfg.train.scheme, 0)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    if !model.same_shape(&expected) {
        return Err(CliError::Validation(format!(
            "{}: network shapes do not match the configuration (checkpoint has {} parameters, config implies {})",
            checkpoint_path.display(),
            model.num_params(),
            expected.num_params()
        )));
    }
    let out = cfg.resolved_output_dir();
    prepare_out(&out)?;
    let m = write_reports(&cfg, &model, None, &out)?;
    println!(
        "relative L2 errors u {:.4e} v {:.4e} p {:.4e} velocity {:.4e}",
        m.errors.u.value, m.errors.v.value, m.errors.p.value, m.errors.velocity.value
    );
    Ok(m)
}

#[derive(Clone, Debug, Default)]
pub struct VerifyOptions {
    pub seed: Option<u64>,
    pub checkpoint: Option<PathBuf>,
}

/// Prints one line per property and fails if any property fails.
pub fn cmd_verify(config: Option<&Path>, opts: &VerifyOptions) -> Result<verify::Report, CliError> {
    let cfg = load_config(config)?;
    init_threads(&cfg);
    if let Some(path) = &opts.checkpoint {
        let model = checkpoint::load_model(path).map_err(|e| CliError::Validation(e.to_string()))?;
        println!("checkpoint {} loads ({} parameters)", path.display(), model.num_params());
    }
    let seed = opts.seed.unwrap_or(cfg.train.seed);
    let report = verify::run_suite(seed, &cfg.flow, &cfg.domain);
    for c in &report.checks {
        println!("{c}");
    }
    let failed = report.checks.iter().filter(|c| !c.passed).count();
    println!("{} of {} properties passed", report.checks.len() - failed, report.checks.len());
    if failed > 0 {
        return Err(CliError::Runtime(format!("{failed} propert{} failed", if failed == 1 { "y" } else { "ies" })));
    }
    Ok(report)
}
