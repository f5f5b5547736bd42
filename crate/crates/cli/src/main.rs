use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use chrono::{SecondsFormat, Utc};
use clap::{Args, Parser, Subcommand};
use log::{error, info};
use serde::Serialize;
use surrocal_core::pipeline::{
    eta_sweep, learning_curve, run_pipeline, write_curve_csv, write_sweep_csv, ExperimentConfig,
    SampleScheme,
};
use surrocal_core::validation::{run_all, ValidationOptions};

/// Bundled default: the bivariate toy at full size.
const TOY_CONFIG: &str = include_str!("../configs/toy.toml");

#[derive(Debug, Parser)]
#[command(
    name = "surrocal",
    version,
    about = "Surrogate-accelerated Bayesian calibration of dynamic simulators"
)]
struct Cli {
    /// Log progress at info level.
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (TOML). Defaults to the bundled toy config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for sweep and curve cells.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Full three-phase pipeline.
    Run(Common),
    /// Complexity-factor by sample-scheme grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, required = true, value_delimiter = ',', num_args = 1..)]
        etas: Vec<usize>,
        #[arg(long, required = true, value_delimiter = ',', num_args = 1.., value_parser = parse_scheme)]
        schemes: Vec<SampleScheme>,
    },
    /// Cross-validated metrics on nested training-set prefixes.
    Curve {
        #[command(flatten)]
        common: Common,
        #[arg(long, required = true, value_delimiter = ',', num_args = 1..)]
        sizes: Vec<usize>,
    },
    /// Built-in oracle checks.
    Validate {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Where to write validation.json, if anywhere.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Negative control: perturb the analytic gradient.
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
}

fn parse_scheme(s: &str) -> std::result::Result<SampleScheme, String> {
    s.parse().map_err(|e: surrocal_core::Error| e.to_string())
}

#[derive(Debug, Serialize)]
struct ErrorRecord {
    kind: &'static str,
    message: String,
}

#[derive(Debug, Serialize)]
struct RunManifest {
    command: String,
    tool_version: &'static str,
    config_path: Option<PathBuf>,
    output_dir: PathBuf,
    /// Resolved config as TOML; parsing it gives back the same configuration.
    config: Option<String>,
    started_at: String,
    finished_at: Option<String>,
    status: &'static str,
    error: Option<ErrorRecord>,
}

impl RunManifest {
    fn new(command: &str, common: &Common) -> Self {
        Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION"),
            config_path: common.config.clone(),
            output_dir: common.out.clone(),
            config: None,
            started_at: now(),
            finished_at: None,
            status: "running",
            error: None,
        }
    }

    fn write(&self) -> Result<()> {
        let path = self.output_dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(self)?)
            .with_context(|| format!("writing {}", path.display()))
    }

    fn finish(&mut self, outcome: &Result<()>, kind: &'static str) -> Result<()> {
        self.finished_at = Some(now());
        match outcome {
            Ok(()) => self.status = "ok",
            Err(e) => {
                self.status = "failed";
                self.error = Some(ErrorRecord {
                    kind,
                    message: format!("{e:#}"),
                });
            }
        }
        self.write()
    }
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let text = match &common.config {
        Some(path) => {
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?
        }
        None => TOY_CONFIG.to_string(),
    };
    let mut cfg = ExperimentConfig::from_toml(&text)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg.resolved()?)
}

fn jobs(common: &Common) -> usize {
    common
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1)
}

/// Creates the output directory, resolves the config and writes the manifest
/// before `body` runs; the manifest is rewritten with the outcome.
fn with_manifest(
    name: &str,
    common: &Common,
    body: impl FnOnce(&ExperimentConfig, &Path) -> Result<()>,
) -> Result<()> {
    fs::create_dir_all(&common.out)
        .with_context(|| format!("creating {}", common.out.display()))?;
    let mut manifest = RunManifest::new(name, common);
    let cfg = match load_config(common) {
        Ok(cfg) => cfg,
        Err(e) => {
            let outcome = Err(e);
            manifest.finish(&outcome, "config")?;
            return outcome;
        }
    };
    manifest.config = Some(cfg.to_toml()?);
    manifest.write()?;
    let outcome = body(&cfg, &common.out);
    manifest.finish(&outcome, "execution")?;
    outcome
}

fn cmd_run(common: &Common) -> Result<()> {
    with_manifest("run", common, |cfg, out| {
        let run = run_pipeline(cfg)?;
        run.write_artifacts(out)?;
        let r = &run.report;
        if let Some(cv) = r.cv {
            info!(
                "cross-validation: test rmse {:.5}, pearson {:.5}",
                cv.test_rmse, cv.test_pearson
            );
        }
        if let Some(est) = r.estimation_rmse {
            info!("estimation rmse {est:.5}");
        }
        match &r.error {
            Some(e) => bail!("pipeline incomplete: {e}"),
            None => Ok(()),
        }
    })
}

fn cmd_sweep(common: &Common, etas: &[usize], schemes: &[SampleScheme]) -> Result<()> {
    with_manifest("sweep", common, |cfg, out| {
        let rows = eta_sweep(cfg, etas, schemes, jobs(common))?;
        write_sweep_csv(&out.join("sweep.csv"), &rows)?;
        let failed = rows.iter().filter(|r| r.error.is_some()).count();
        if failed > 0 {
            bail!("{failed} of {} sweep cells failed", rows.len());
        }
        Ok(())
    })
}

fn cmd_curve(common: &Common, sizes: &[usize]) -> Result<()> {
    with_manifest("curve", common, |cfg, out| {
        let rows = learning_curve(cfg, sizes, jobs(common))?;
        write_curve_csv(&out.join("learning_curve.csv"), &rows)?;
        Ok(())
    })
}

fn cmd_validate(seed: u64, out: Option<&Path>, corrupt_gradient: bool) -> Result<()> {
    let records = run_all(seed, ValidationOptions { corrupt_gradient });
    for rec in &records {
        println!("{rec}");
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(
            dir.join("validation.json"),
            serde_json::to_string_pretty(&records)?,
        )?;
    }
    let failed = records.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        bail!("{failed} of {} checks failed", records.len());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let outcome = match &cli.command {
        Command::Run(common) => cmd_run(common),
        Command::Sweep {
            common,
            etas,
            schemes,
        } => cmd_sweep(common, etas, schemes),
        Command::Curve { common, sizes } => cmd_curve(common, sizes),
        Command::Validate {
            seed,
            out,
            corrupt_gradient,
        } => cmd_validate(*seed, out.as_deref(), *corrupt_gradient),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e:#}");
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
