//! Live teleoperation sessions and the per-connection message handler.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use conformal_teleop::conformal::{monitor, uncertainty_score, DEFAULT_GAMMA};
use conformal_teleop::envs::{Catalog, EnvSpec, InputScheme};
use conformal_teleop::{AcqrState, MonitorConfig, QuantileModel, QuantilePrediction};
use serde::{Deserialize, Serialize};

use crate::protocol::{parse_client, to_text, ClientMsg, Mode, ServerMsg};

/// Read-only lookup of scenarios and trained models.
#[derive(Debug, Clone)]
pub struct Registry {
    pub catalog: Catalog,
    pub models_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioInfo {
    pub id: String,
    pub description: String,
    pub env: String,
    pub beta: f64,
    pub n_s: usize,
    pub n_u: usize,
    pub n_a: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub name: String,
    pub env: Option<String>,
    pub alpha: f64,
    pub n_s: usize,
    pub n_u: usize,
    pub n_a: usize,
}

impl Registry {
    pub fn new(catalog: Catalog, models_dir: impl Into<PathBuf>) -> Self {
        Registry {
            catalog,
            models_dir: models_dir.into(),
        }
    }

    /// The environment a scenario's controllers are trained for.
    pub fn env(&self, scenario: &str) -> anyhow::Result<EnvSpec> {
        let spec = self.catalog.scenario(scenario)?;
        let scheme: InputScheme = spec.train.scheme.parse()?;
        Ok(self.catalog.env(scenario, &scheme)?)
    }

    pub fn scenarios(&self) -> Vec<ScenarioInfo> {
        self.catalog
            .scenarios
            .iter()
            .filter_map(|s| {
                let env = self.env(&s.id).ok()?;
                Some(ScenarioInfo {
                    id: s.id.clone(),
                    description: s.description.clone(),
                    env: env.name,
                    beta: s.beta,
                    n_s: env.dims.n_s,
                    n_u: env.dims.n_u,
                    n_a: env.dims.n_a,
                })
            })
            .collect()
    }

    fn model_path(&self, name: &str) -> anyhow::Result<PathBuf> {
        let ok = !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
        anyhow::ensure!(ok && !name.starts_with('.'), "bad model name {name:?}");
        Ok(self.models_dir.join(format!("{name}.json")))
    }

    pub fn load_model(&self, name: &str) -> anyhow::Result<QuantileModel> {
        let path = self.model_path(name)?;
        QuantileModel::load(&path).map_err(|e| anyhow::anyhow!("model {name:?}: {e}"))
    }

    /// Quantile models in the models directory, by name. Files that do not
    /// load as one are skipped.
    pub fn models(&self) -> Vec<ModelInfo> {
        let Ok(entries) = std::fs::read_dir(&self.models_dir) else {
            return Vec::new();
        };
        let mut names: Vec<String> = entries
            .filter_map(|e| {
                let p = e.ok()?.path();
                (p.extension()? == "json").then(|| p.file_stem()?.to_str().map(String::from))?
            })
            .collect();
        names.sort();
        names
            .into_iter()
            .filter_map(|name| {
                let m = self.load_model(&name).ok()?;
                let d = m.dims();
                Some(ModelInfo {
                    env: m.env().map(String::from),
                    alpha: m.alpha(),
                    n_s: d.n_s,
                    n_u: d.n_u,
                    n_a: d.n_a,
                    name,
                })
            })
            .collect()
    }
}

struct Pending {
    id: u64,
    pred: QuantilePrediction,
}

/// One live session: an environment, its current state, a controller and
/// the calibration state that wraps it.
pub struct Session {
    env: EnvSpec,
    model: QuantileModel,
    acqr: AcqrState,
    monitor: MonitorConfig,
    mode: Mode,
    state: Vec<f64>,
    pending: Option<Pending>,
}

fn check_vec(what: &str, v: &[f64], len: usize) -> Result<(), String> {
    if v.len() != len {
        return Err(format!("{what} needs {len} entries, got {}", v.len()));
    }
    if !v.iter().all(|x| x.is_finite()) {
        return Err(format!("{what} has a non-finite entry"));
    }
    Ok(())
}

impl Session {
    pub fn new(env: EnvSpec, model: QuantileModel, mode: Mode, beta: f64) -> anyhow::Result<Self> {
        anyhow::ensure!(
            model.dims() == env.dims,
            "model dims {:?} do not fit env {} {:?}",
            model.dims(),
            env.name,
            env.dims
        );
        if let Some(name) = model.env() {
            anyhow::ensure!(name == env.name, "model was trained for {name}, not {}", env.name);
        }
        Ok(Session {
            acqr: AcqrState::new(model.alpha(), DEFAULT_GAMMA)?,
            monitor: MonitorConfig::new(beta)?,
            state: env.start.clone(),
            env,
            model,
            mode,
            pending: None,
        })
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn acqr(&self) -> &AcqrState {
        &self.acqr
    }

    fn predict(&self, h: &[f64]) -> Result<QuantilePrediction, String> {
        check_vec("h", h, self.env.dims.n_u)?;
        if h.iter().any(|x| x.abs() > 1.0) {
            return Err("h entries must lie in [-1, 1]".into());
        }
        self.model.predict(&self.state, h).map_err(|e| e.to_string())
    }

    /// Predicts, applies `â` through the dynamics and reports the interval
    /// the current calibration state gives. Calibration itself is untouched.
    pub fn step(&mut self, id: u64, h: &[f64]) -> Result<ServerMsg, String> {
        let pred = self.predict(h)?;
        let interval = self.acqr.interval_for(&pred);
        let u = uncertainty_score(&interval);
        let next = self.env.step(&self.state, &pred.a_hat).map_err(|e| e.to_string())?;
        self.state = next;
        let msg = ServerMsg::Step {
            id,
            state: self.state.clone(),
            a_hat: pred.a_hat.clone(),
            lower: interval.lower,
            upper: interval.upper,
            u,
            flagged: monitor(u, &self.monitor),
            alpha_t: self.acqr.alpha_t(),
            lambda: self.acqr.current_lambda(),
        };
        if self.mode == Mode::Supervised {
            // An unlabeled earlier step simply stays unlabeled.
            self.pending = Some(Pending { id, pred });
        }
        Ok(msg)
    }

    /// Reveals the intended action of the pending step.
    pub fn label(&mut self, id: u64, a: &[f64]) -> Result<ServerMsg, String> {
        if self.mode == Mode::Frozen {
            return Err("labels are refused in frozen mode".into());
        }
        check_vec("a", a, self.env.dims.n_a)?;
        let pending = self.pending.take().ok_or("no pending step to label")?;
        let out = self.acqr.step(&pending.pred, a).map_err(|e| e.to_string())?;
        Ok(ServerMsg::Ack {
            id,
            step: pending.id,
            err: out.err,
            score: out.score,
            alpha_t: out.alpha_next,
            lambda: self.acqr.current_lambda(),
        })
    }

    pub fn probe(&self, id: u64, h: &[f64]) -> Result<ServerMsg, String> {
        let pred = self.predict(h)?;
        let interval = self.acqr.interval_for(&pred);
        Ok(ServerMsg::ProbeResult {
            id,
            u: uncertainty_score(&interval),
            a_hat: pred.a_hat,
            lower: interval.lower,
            upper: interval.upper,
        })
    }
}

/// One line of a session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    #[serde(rename = "in")]
    pub input: String,
    #[serde(rename = "out")]
    pub output: ServerMsg,
}

/// Everything one connection owns: the session (after `reset`), the id
/// watermark and the append-only log.
pub struct Host<'r> {
    registry: &'r Registry,
    session: Option<Session>,
    last_id: Option<u64>,
    log: Vec<LogEntry>,
}

impl<'r> Host<'r> {
    pub fn new(registry: &'r Registry) -> Self {
        Host {
            registry,
            session: None,
            last_id: None,
            log: Vec::new(),
        }
    }

    pub fn session(&self) -> Option<&Session> {
        self.session.as_ref()
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    /// Handles one text frame; exactly one reply per frame.
    pub fn handle_text(&mut self, text: &str) -> ServerMsg {
        let out = match parse_client(text) {
            Ok(msg) => self.handle(msg),
            Err((id, e)) => ServerMsg::error(id, e),
        };
        self.log.push(LogEntry {
            input: text.to_string(),
            output: out.clone(),
        });
        out
    }

    fn handle(&mut self, msg: ClientMsg) -> ServerMsg {
        let id = msg.id();
        if let Some(last) = self.last_id {
            if id <= last {
                return ServerMsg::error(Some(id), format!("id {id} does not exceed {last}"));
            }
        }
        self.last_id = Some(id);
        let reply = match msg {
            ClientMsg::Reset {
                scenario,
                model,
                mode,
                beta,
                ..
            } => self.reset(id, scenario, model, mode, beta).map_err(|e| format!("{e:#}")),
            ClientMsg::Input { h, .. } => self.live().and_then(|s| s.step(id, &h)),
            ClientMsg::Label { a, .. } => self.live().and_then(|s| s.label(id, &a)),
            ClientMsg::Probe { h, .. } => self.live().and_then(|s| s.probe(id, &h)),
        };
        reply.unwrap_or_else(|e| ServerMsg::error(Some(id), e))
    }

    fn live(&mut self) -> Result<&mut Session, String> {
        self.session.as_mut().ok_or_else(|| "no session; send reset first".to_string())
    }

    fn reset(
        &mut self,
        id: u64,
        scenario: String,
        model_name: String,
        mode: Mode,
        beta: Option<f64>,
    ) -> anyhow::Result<ServerMsg> {
        let env = self.registry.env(&scenario)?;
        let beta = match beta {
            Some(b) => b,
            None => self.registry.catalog.scenario(&scenario)?.beta,
        };
        let model = self.registry.load_model(&model_name)?;
        let session = Session::new(env, model, mode, beta)?;
        let msg = ServerMsg::Ready {
            id,
            scenario,
            model: model_name,
            mode,
            state: session.state.clone(),
            beta,
            alpha_t: session.acqr.alpha_t(),
            lambda: session.acqr.current_lambda(),
        };
        self.session = Some(session);
        Ok(msg)
    }
}

pub fn write_log<W: Write>(mut w: W, log: &[LogEntry]) -> std::io::Result<()> {
    for e in log {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_log<R: BufRead>(r: R) -> anyhow::Result<Vec<LogEntry>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| anyhow::anyhow!("log line {}: {e}", n + 1))?);
    }
    Ok(out)
}

/// First log line whose reply differs when its inputs are fed to a fresh
/// host, as `(line index, recorded, replayed)`.
pub fn replay(registry: &Registry, log: &[LogEntry]) -> Option<(usize, String, String)> {
    let mut host = Host::new(registry);
    log.iter().enumerate().find_map(|(i, e)| {
        let got = to_text(&host.handle_text(&e.input));
        let want = to_text(&e.output);
        (got != want).then_some((i, want, got))
    })
}

pub fn load_log(path: &Path) -> anyhow::Result<Vec<LogEntry>> {
    let f = std::fs::File::open(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    read_log(std::io::BufReader::new(f))
}
