//! Subcommands. Exit status: 0 on success, 1 on usage errors, 2 when the
//! work itself fails.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use conformal_teleop::conformal::{DEFAULT_ALPHA, DEFAULT_GAMMA};
use conformal_teleop::envs::{Catalog, InputScheme, ScenarioDataset};
use conformal_teleop::eval::{
    render_table, report_json, run_experiment, run_stream, summarize, write_outputs, Controller, ExperimentConfig,
    ExperimentReport, Method, ReportHead, StreamSettings,
};
use conformal_teleop::{EnsembleModel, QuantileModel};

use crate::server::{self, AppState, DEFAULT_ADDR};
use crate::session::{load_log, replay, Registry};

#[derive(Debug, Parser)]
#[command(name = "teleopd", version, about = "Calibrated teleoperation: data, training, calibration and live sessions")]
pub struct Cli {
    /// Scenario catalog (JSON); the built-in one when absent.
    #[arg(long, global = true)]
    pub catalog: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Calib,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Family {
    Qr,
    Ensemble,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled demonstration dataset (JSONL).
    Gen {
        #[arg(long)]
        scenario: String,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        profile: Option<String>,
        #[arg(long)]
        scheme: Option<String>,
        /// Trajectory count (per mode for multi-mode scenarios).
        #[arg(long)]
        n: Option<usize>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Train a quantile controller (file) or a Gaussian ensemble (directory).
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "qr")]
        method: Family,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Stream a dataset through a trained controller; writes a report and a trace.
    Calibrate {
        /// Model file, or ensemble directory with `--method ensemble`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "ACQR")]
        method: Method,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long, default_value_t = DEFAULT_GAMMA)]
        gamma: f64,
        /// Monitor threshold; the scenario default when absent.
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        reset_per_traj: bool,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[arg(long, default_value = "calibration")]
        stem: String,
    },
    /// Run experiments end to end: generate, train, calibrate, report.
    Eval {
        /// JSON file with one experiment config or an array of them.
        #[arg(long, conflicts_with_all = ["scenario", "method"])]
        config: Option<PathBuf>,
        /// Repeatable; every catalog scenario when absent.
        #[arg(long)]
        scenario: Vec<String>,
        /// Repeatable; every method when absent.
        #[arg(long)]
        method: Vec<Method>,
        #[arg(long)]
        reset_per_traj: bool,
        #[arg(long, default_value = "results")]
        out_dir: PathBuf,
        /// Print a coverage/length table to stdout.
        #[arg(long)]
        table: bool,
    },
    /// Host live sessions over WebSocket.
    Serve {
        #[arg(long, env = "TELEOPD_ADDR", default_value = DEFAULT_ADDR)]
        addr: String,
        /// Directory of `<name>.json` quantile models.
        #[arg(long, default_value = "models")]
        models: PathBuf,
        /// Directory served for paths outside the API (the cockpit build).
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
        #[arg(long)]
        log_dir: Option<PathBuf>,
    },
    /// Re-feed a session log to a fresh session and compare every reply.
    Replay {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value = "models")]
        models: PathBuf,
    },
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

fn catalog(path: Option<&Path>) -> anyhow::Result<Catalog> {
    match path {
        Some(p) => Catalog::load(p).with_context(|| format!("catalog {}", p.display())),
        None => Ok(Catalog::builtin()),
    }
}

fn load_data(path: &Path) -> anyhow::Result<ScenarioDataset> {
    ScenarioDataset::load(path).with_context(|| format!("load {}", path.display()))
}

pub fn execute(cli: Cli) -> anyhow::Result<()> {
    let cat = catalog(cli.catalog.as_deref())?;
    match cli.command {
        Command::Gen {
            scenario,
            split,
            seed,
            profile,
            scheme,
            n,
            out,
        } => {
            let spec = cat.scenario(&scenario)?;
            let mut s = match split {
                SplitArg::Train => spec.train.clone(),
                SplitArg::Calib => spec.calib.clone(),
            };
            if let Some(v) = seed {
                s.seed = v;
            }
            if let Some(v) = profile {
                s.profile = v;
            }
            if let Some(v) = scheme {
                s.scheme = v;
            }
            if let Some(v) = n {
                s.n = v;
            }
            let data = cat.generate(&scenario, &s)?;
            data.save(&out).with_context(|| format!("write {}", out.display()))?;
            eprintln!("{} trajectories, {} steps -> {}", data.trajectories.len(), data.n_steps(), out.display());
        }
        Command::Train {
            data,
            method,
            alpha,
            epochs,
            batch_size,
            lr,
            seed,
            out,
        } => {
            let data = load_data(&data)?;
            let prov = &data.provenance;
            let env = cat.env(&prov.scenario, &prov.scheme.parse::<InputScheme>()?)?;
            let mut config = cat.scenario(&prov.scenario)?.train_config(alpha);
            config.epochs = epochs.unwrap_or(config.epochs);
            config.batch_size = batch_size.unwrap_or(config.batch_size);
            config.learning_rate = lr.unwrap_or(config.learning_rate);
            config.seed = seed.unwrap_or(config.seed);
            let triples = data.triples()?;
            match method {
                Family::Qr => {
                    let (model, curve) =
                        QuantileModel::train(&triples, env.dims, Some(env.input_scale.clone()), &config)?;
                    model.with_env(env.name).save(&out)?;
                    if let Some(last) = curve.last() {
                        eprintln!("final training loss {last:.6}");
                    }
                }
                Family::Ensemble => {
                    EnsembleModel::train(&triples, env.dims, Some(env.input_scale.clone()), &config)?.save_dir(&out)?;
                }
            }
            eprintln!("model -> {}", out.display());
        }
        Command::Calibrate {
            model,
            data,
            method,
            alpha,
            gamma,
            beta,
            reset_per_traj,
            out_dir,
            stem,
        } => {
            let calib = load_data(&data)?;
            let controller = match method {
                Method::Ensemble => Controller::Ensemble(EnsembleModel::load_dir(&model)?),
                _ => Controller::Quantile(QuantileModel::load(&model)?),
            };
            let beta = match beta {
                Some(b) => b,
                None => cat.scenario(&calib.provenance.scenario)?.beta,
            };
            let settings = StreamSettings {
                method,
                alpha,
                gamma,
                beta,
                reset_per_traj,
            };
            let rows = run_stream(&controller, &calib, settings)?;
            let head = ReportHead {
                scenario: calib.provenance.scenario.clone(),
                method,
                profile: calib.provenance.profile.clone(),
                scheme: calib.provenance.scheme.clone(),
                alpha,
                gamma,
                beta,
            };
            let report = summarize(&rows, head)?;
            let report = write_outputs(&out_dir, &stem, &report, &rows, controller.n_a())?;
            print!("{}", report_json(&report)?);
        }
        Command::Eval {
            config,
            scenario,
            method,
            reset_per_traj,
            out_dir,
            table,
        } => {
            let configs = match config {
                Some(path) => read_configs(&path)?,
                None => {
                    let scenarios = if scenario.is_empty() {
                        cat.scenario_ids().into_iter().map(String::from).collect()
                    } else {
                        scenario
                    };
                    let methods = if method.is_empty() { Method::ALL.to_vec() } else { method };
                    scenarios
                        .iter()
                        .flat_map(|s| methods.iter().map(move |m| ExperimentConfig::new(s, *m)))
                        .collect()
                }
            };
            let mut reports: Vec<ExperimentReport> = Vec::new();
            for (i, mut c) in configs.into_iter().enumerate() {
                c.reset_per_traj |= reset_per_traj;
                let (report, rows) = run_experiment(&cat, &c)?;
                let n_a = rows.first().map_or(0, |r| r.lower.len());
                let stem = format!("{i:02}-{}-{}", c.scenario, c.method.name().to_lowercase());
                reports.push(write_outputs(&out_dir, &stem, &report, &rows, n_a)?);
                eprintln!("{stem}: coverage {:.3}", report.coverage);
            }
            if table {
                print!("{}", render_table(&reports));
            }
        }
        Command::Serve {
            addr,
            models,
            static_dir,
            log_dir,
        } => {
            if let Some(dir) = &log_dir {
                std::fs::create_dir_all(dir).with_context(|| format!("create {}", dir.display()))?;
            }
            let state = Arc::new(AppState::new(Registry::new(cat, models), log_dir));
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(server::serve(&addr, state, static_dir))?;
        }
        Command::Replay { log, models } => {
            let entries = load_log(&log)?;
            let registry = Registry::new(cat, models);
            if let Some((i, want, got)) = replay(&registry, &entries) {
                anyhow::bail!("replay diverges at line {}:\n  recorded {want}\n  replayed {got}", i + 1);
            }
            eprintln!("{} frames replayed identically", entries.len());
        }
    }
    Ok(())
}

fn read_configs(path: &Path) -> anyhow::Result<Vec<ExperimentConfig>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("read {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parse {}", path.display()))?;
    let configs = if value.is_array() {
        serde_json::from_value(value)?
    } else {
        vec![serde_json::from_value(value)?]
    };
    Ok(configs)
}
