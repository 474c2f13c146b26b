//! Metrics, Welch's test and the calibration experiment runner.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::function::beta::checked_beta_reg;

use crate::conformal::{
    calibrated_interval, delta_bounds, monitor, uncertainty_score, write_trace, AcqrState,
    MonitorConfig, PredictionInterval, ScoreKind, TraceRow, DEFAULT_ALPHA, DEFAULT_GAMMA,
};
use crate::envs::{Catalog, InputScheme, ScenarioDataset};
use crate::error::{Error, Result};
use crate::regressor::{EnsembleModel, QuantileModel};

/// Fraction of `(interval, action)` pairs with all-dimension containment.
pub fn coverage<'a, I>(stream: I) -> Result<f64>
where
    I: IntoIterator<Item = (&'a PredictionInterval<f64>, &'a [f64])>,
{
    let (mut hit, mut n) = (0usize, 0usize);
    for (interval, action) in stream {
        hit += usize::from(interval.contains(action));
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyCalibration);
    }
    Ok(hit as f64 / n as f64)
}

/// Mean over dimensions of `upper − lower`.
pub fn interval_length(interval: &PredictionInterval<f64>) -> f64 {
    interval.length()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Welch {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Welch's unequal-variance t-test with a two-sided p-value from the
/// regularized incomplete beta function.
pub fn welch_ttest(a: &[f64], b: &[f64]) -> Result<Welch> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Statistics("each sample needs at least two values".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("t-test sample"));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    if !(se2 > 0.0) {
        return Err(Error::Statistics("both samples have zero variance".into()));
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2
        / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    let p = checked_beta_reg(df / 2.0, 0.5, df / (df + t * t))
        .map_err(|e| Error::Statistics(e.to_string()))?;
    Ok(Welch { t, df, p })
}

/// Prediction error split by the monitor flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorStats {
    pub n_flagged: usize,
    pub n_unflagged: usize,
    pub mean_flagged: Option<f64>,
    pub std_flagged: Option<f64>,
    pub mean_unflagged: Option<f64>,
    pub std_unflagged: Option<f64>,
    /// `None` when either group is too small or both are constant.
    pub welch: Option<Welch>,
}

impl MonitorStats {
    pub fn conclusive(&self) -> bool {
        self.welch.is_some()
    }
}

fn describe(x: &[f64]) -> (Option<f64>, Option<f64>) {
    match x.len() {
        0 => (None, None),
        1 => (Some(x[0]), None),
        _ => {
            let (m, v) = mean_var(x);
            (Some(m), Some(v.sqrt()))
        }
    }
}

/// Splits `(flagged, ‖â − a‖₂)` pairs by flag and compares the groups.
pub fn monitor_separation<I: IntoIterator<Item = (bool, f64)>>(trace: I) -> MonitorStats {
    let (mut hi, mut lo) = (Vec::new(), Vec::new());
    for (flagged, err) in trace {
        if flagged {
            hi.push(err);
        } else {
            lo.push(err);
        }
    }
    let (mean_flagged, std_flagged) = describe(&hi);
    let (mean_unflagged, std_unflagged) = describe(&lo);
    MonitorStats {
        n_flagged: hi.len(),
        n_unflagged: lo.len(),
        mean_flagged,
        std_flagged,
        mean_unflagged,
        std_unflagged,
        welch: welch_ttest(&hi, &lo).ok(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "ACQR")]
    Acqr,
    #[serde(rename = "QR")]
    Qr,
    #[serde(rename = "Ensemble")]
    Ensemble,
    #[serde(rename = "CQR")]
    Cqr,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Acqr, Method::Qr, Method::Ensemble, Method::Cqr];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Acqr => "ACQR",
            Method::Qr => "QR",
            Method::Ensemble => "Ensemble",
            Method::Cqr => "CQR",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// A trained controller of either family.
#[derive(Debug, Clone)]
pub enum Controller {
    Quantile(QuantileModel<f64>),
    Ensemble(EnsembleModel<f64>),
}

impl Controller {
    pub fn n_a(&self) -> usize {
        match self {
            Controller::Quantile(m) => m.dims().n_a,
            Controller::Ensemble(m) => m.dims().n_a,
        }
    }
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_gamma() -> f64 {
    DEFAULT_GAMMA
}

/// One experiment: a scenario, a method, and optional overrides of the
/// catalog's calibration split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub method: Method,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Monitor threshold; the scenario default when absent.
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub calib_profile: Option<String>,
    #[serde(default)]
    pub calib_scheme: Option<String>,
    #[serde(default)]
    pub calib_n: Option<usize>,
    #[serde(default)]
    pub calib_seed: Option<u64>,
    #[serde(default)]
    pub train_seed: Option<u64>,
    /// Start a fresh calibration state for every trajectory.
    #[serde(default)]
    pub reset_per_traj: bool,
}

impl ExperimentConfig {
    pub fn new(scenario: &str, method: Method) -> Self {
        ExperimentConfig {
            scenario: scenario.into(),
            method,
            alpha: DEFAULT_ALPHA,
            gamma: DEFAULT_GAMMA,
            beta: None,
            calib_profile: None,
            calib_scheme: None,
            calib_n: None,
            calib_seed: None,
            train_seed: None,
            reset_per_traj: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scenario: String,
    pub method: Method,
    pub profile: String,
    pub scheme: String,
    pub alpha: f64,
    pub gamma: f64,
    pub beta: f64,
    pub n_trajectories: usize,
    pub n_steps: usize,
    pub coverage: f64,
    /// Mean interval length over steps with a bounded interval.
    pub mean_interval_length: f64,
    /// Steps whose interval was the whole action space.
    pub n_unbounded: usize,
    pub final_alpha_t: f64,
    pub monitor: MonitorStats,
    /// File name of the per-step trace, when written.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<String>,
}

/// Calibration settings of a stream run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamSettings {
    pub method: Method,
    pub alpha: f64,
    pub gamma: f64,
    pub beta: f64,
    pub reset_per_traj: bool,
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Streams the calibration trajectories through `controller` in order and
/// records one trace row per step.
pub fn run_stream(
    controller: &Controller,
    calib: &ScenarioDataset,
    settings: StreamSettings,
) -> Result<Vec<TraceRow>> {
    let monitor_cfg = MonitorConfig::new(settings.beta)?;
    let fresh = || -> Result<Option<AcqrState<f64>>> {
        Ok(match settings.method {
            Method::Acqr => Some(AcqrState::new(settings.alpha, settings.gamma)?),
            Method::Cqr => Some(AcqrState::with_kind(settings.alpha, settings.gamma, ScoreKind::Additive)?),
            Method::Qr | Method::Ensemble => None,
        })
    };
    let mut state = fresh()?;
    let mut rows = Vec::with_capacity(calib.n_steps());
    for (k, traj) in calib.trajectories.iter().enumerate() {
        if settings.reset_per_traj && k > 0 {
            state = fresh()?;
        }
        for triple in traj.triples()? {
            let (interval, center, alpha_t, err) = match (controller, settings.method, &mut state) {
                (Controller::Quantile(m), Method::Acqr | Method::Cqr, Some(s)) => {
                    let pred = m.predict(&triple.state, &triple.low_input)?;
                    let out = s.step(&pred, &triple.action)?;
                    (out.interval, pred.a_hat, out.alpha_t, out.err)
                }
                (Controller::Quantile(m), Method::Qr, _) => {
                    let pred = m.predict(&triple.state, &triple.low_input)?;
                    let mut i = calibrated_interval(&pred, &delta_bounds(&pred, crate::conformal::DEFAULT_EPSILON), 1.0);
                    i.alpha_used = settings.alpha;
                    let err = u8::from(!i.contains(&triple.action));
                    (i, pred.a_hat, settings.alpha, err)
                }
                (Controller::Ensemble(e), Method::Ensemble, _) => {
                    let (mu, sigma) = e.predict(&triple.state, &triple.low_input)?;
                    let mut i = crate::regressor::ensemble_interval(&mu, &sigma);
                    i.alpha_used = settings.alpha;
                    let err = u8::from(!i.contains(&triple.action));
                    (i, mu, settings.alpha, err)
                }
                _ => {
                    return Err(Error::Config(format!(
                        "method {} does not fit this controller",
                        settings.method.name()
                    )))
                }
            };
            let u = uncertainty_score(&interval);
            rows.push(TraceRow {
                t: rows.len() + 1,
                alpha_t,
                lambda_t: interval.lambda,
                err_t: err,
                u_t: u,
                flagged: monitor(u, &monitor_cfg),
                pred_error: l2(&center, &triple.action),
                lower: interval.lower,
                upper: interval.upper,
                traj: k,
            });
        }
    }
    Ok(rows)
}

/// Summarizes a trace into a report.
pub fn summarize(rows: &[TraceRow], head: ReportHead) -> Result<ExperimentReport> {
    if rows.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    let hits = rows.iter().filter(|r| r.err_t == 0).count();
    let bounded: Vec<f64> = rows
        .iter()
        .filter(|r| r.lower.iter().chain(&r.upper).all(|v| v.is_finite()))
        .map(|r| r.upper.iter().zip(&r.lower).map(|(u, l)| u - l).sum::<f64>() / r.upper.len() as f64)
        .collect();
    let mean_len = if bounded.is_empty() {
        0.0
    } else {
        bounded.iter().sum::<f64>() / bounded.len() as f64
    };
    let last = rows.last().expect("non-empty");
    let final_alpha_t = if head.method == Method::Acqr || head.method == Method::Cqr {
        last.alpha_t + head.gamma * (head.alpha - f64::from(last.err_t))
    } else {
        head.alpha
    };
    Ok(ExperimentReport {
        scenario: head.scenario,
        method: head.method,
        profile: head.profile,
        scheme: head.scheme,
        alpha: head.alpha,
        gamma: head.gamma,
        beta: head.beta,
        n_trajectories: rows.last().map_or(0, |r| r.traj + 1),
        n_steps: rows.len(),
        coverage: hits as f64 / rows.len() as f64,
        mean_interval_length: mean_len,
        n_unbounded: rows.len() - bounded.len(),
        final_alpha_t,
        monitor: monitor_separation(rows.iter().map(|r| (r.flagged, r.pred_error))),
        trace: None,
    })
}

/// Identification fields copied into a report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportHead {
    pub scenario: String,
    pub method: Method,
    pub profile: String,
    pub scheme: String,
    pub alpha: f64,
    pub gamma: f64,
    pub beta: f64,
}

/// Trains the controller a method needs on the scenario's training split.
pub fn train_controller(
    catalog: &Catalog,
    scenario: &str,
    method: Method,
    alpha: f64,
    seed: Option<u64>,
) -> Result<Controller> {
    let spec = catalog.scenario(scenario)?;
    let train = catalog.train_set(scenario)?;
    let env = catalog.env(scenario, &spec.train.scheme.parse::<InputScheme>()?)?;
    let mut config = spec.train_config(alpha);
    if let Some(s) = seed {
        config.seed = s;
    }
    let triples = train.triples()?;
    Ok(match method {
        Method::Ensemble => Controller::Ensemble(
            EnsembleModel::train(&triples, env.dims, Some(env.input_scale.clone()), &config)?,
        ),
        _ => {
            let (m, _) = QuantileModel::train(&triples, env.dims, Some(env.input_scale.clone()), &config)?;
            Controller::Quantile(m.with_env(env.name))
        }
    })
}

/// The calibration split of `config`, with its overrides applied.
pub fn calibration_set(catalog: &Catalog, config: &ExperimentConfig) -> Result<ScenarioDataset> {
    let mut split = catalog.scenario(&config.scenario)?.calib.clone();
    if let Some(p) = &config.calib_profile {
        split.profile = p.clone();
    }
    if let Some(s) = &config.calib_scheme {
        split.scheme = s.clone();
    }
    if let Some(n) = config.calib_n {
        split.n = n;
    }
    if let Some(seed) = config.calib_seed {
        split.seed = seed;
    }
    catalog.generate(&config.scenario, &split)
}

/// Calibrates a trained controller on the configured split.
pub fn calibrate(
    catalog: &Catalog,
    config: &ExperimentConfig,
    controller: &Controller,
) -> Result<(ExperimentReport, Vec<TraceRow>)> {
    let spec = catalog.scenario(&config.scenario)?;
    let calib = calibration_set(catalog, config).map_err(Error::at_stage("generate calibration data"))?;
    let beta = config.beta.unwrap_or(spec.beta);
    let settings = StreamSettings {
        method: config.method,
        alpha: config.alpha,
        gamma: config.gamma,
        beta,
        reset_per_traj: config.reset_per_traj,
    };
    let rows = run_stream(controller, &calib, settings).map_err(Error::at_stage("calibrate"))?;
    let head = ReportHead {
        scenario: config.scenario.clone(),
        method: config.method,
        profile: calib.provenance.profile.clone(),
        scheme: calib.provenance.scheme.clone(),
        alpha: config.alpha,
        gamma: config.gamma,
        beta,
    };
    let report = summarize(&rows, head).map_err(Error::at_stage("report"))?;
    Ok((report, rows))
}

/// Generates data, trains, calibrates and reports.
pub fn run_experiment(catalog: &Catalog, config: &ExperimentConfig) -> Result<(ExperimentReport, Vec<TraceRow>)> {
    catalog.scenario(&config.scenario).map_err(Error::at_stage("config"))?;
    let controller = train_controller(catalog, &config.scenario, config.method, config.alpha, config.train_seed)
        .map_err(Error::at_stage("train"))?;
    calibrate(catalog, config, &controller)
}

/// Writes `<stem>.json` and `<stem>.csv` into `dir`.
pub fn write_outputs(
    dir: impl AsRef<Path>,
    stem: &str,
    report: &ExperimentReport,
    rows: &[TraceRow],
    n_a: usize,
) -> Result<ExperimentReport> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let trace_name = format!("{stem}.csv");
    let mut csv = Vec::new();
    write_trace(&mut csv, n_a, rows)?;
    fs::write(dir.join(&trace_name), csv)?;
    let mut report = report.clone();
    report.trace = Some(trace_name);
    fs::write(dir.join(format!("{stem}.json")), report_json(&report)?)?;
    Ok(report)
}

pub fn report_json(report: &ExperimentReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

/// Plain-text grid: one row per report with coverage and interval length.
pub fn render_table(reports: &[ExperimentReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<22} {:<14} {:<20} {:<9} {:>9} {:>10}",
        "scenario", "profile", "scheme", "method", "coverage", "length"
    );
    let _ = writeln!(out, "{}", "-".repeat(89));
    for r in reports {
        let _ = writeln!(
            out,
            "{:<22} {:<14} {:<20} {:<9} {:>9.3} {:>10.3}",
            r.scenario,
            r.profile,
            r.scheme,
            r.method.name(),
            r.coverage,
            r.mean_interval_length
        );
    }
    out
}
