//! JSON text frames exchanged over the session socket.
//!
//! Every frame carries a client-chosen `id`; replies echo it. Interval bounds
//! that are unbounded travel as `null`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Calibration state stays as loaded; labels are refused.
    #[default]
    Frozen,
    /// Each step may be labeled once, which advances calibration.
    Supervised,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMsg {
    Reset {
        id: u64,
        scenario: String,
        model: String,
        #[serde(default)]
        mode: Mode,
        /// Monitor threshold; the scenario default when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        beta: Option<f64>,
    },
    Input {
        id: u64,
        h: Vec<f64>,
    },
    Label {
        id: u64,
        a: Vec<f64>,
    },
    /// Read-only query: what would this input do right now?
    Probe {
        id: u64,
        h: Vec<f64>,
    },
}

impl ClientMsg {
    pub fn id(&self) -> u64 {
        match self {
            ClientMsg::Reset { id, .. }
            | ClientMsg::Input { id, .. }
            | ClientMsg::Label { id, .. }
            | ClientMsg::Probe { id, .. } => *id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMsg {
    /// Reply to `reset`: the session is live at its start state.
    Ready {
        id: u64,
        scenario: String,
        model: String,
        mode: Mode,
        state: Vec<f64>,
        beta: f64,
        alpha_t: f64,
        #[serde(with = "maybe_inf")]
        lambda: f64,
    },
    Step {
        id: u64,
        state: Vec<f64>,
        a_hat: Vec<f64>,
        #[serde(with = "lower_bounds")]
        lower: Vec<f64>,
        #[serde(with = "upper_bounds")]
        upper: Vec<f64>,
        #[serde(rename = "U", with = "maybe_inf")]
        u: f64,
        flagged: bool,
        alpha_t: f64,
        #[serde(with = "maybe_inf")]
        lambda: f64,
    },
    Ack {
        id: u64,
        /// Id of the step this label belongs to.
        step: u64,
        err: u8,
        #[serde(with = "maybe_inf")]
        score: f64,
        alpha_t: f64,
        #[serde(with = "maybe_inf")]
        lambda: f64,
    },
    ProbeResult {
        id: u64,
        #[serde(rename = "U", with = "maybe_inf")]
        u: f64,
        a_hat: Vec<f64>,
        #[serde(with = "lower_bounds")]
        lower: Vec<f64>,
        #[serde(with = "upper_bounds")]
        upper: Vec<f64>,
    },
    /// `id` is null when the offending frame could not be parsed.
    Error {
        id: Option<u64>,
        msg: String,
    },
}

impl ServerMsg {
    pub fn id(&self) -> Option<u64> {
        match self {
            ServerMsg::Ready { id, .. }
            | ServerMsg::Step { id, .. }
            | ServerMsg::Ack { id, .. }
            | ServerMsg::ProbeResult { id, .. } => Some(*id),
            ServerMsg::Error { id, .. } => *id,
        }
    }

    pub fn error(id: Option<u64>, msg: impl Into<String>) -> Self {
        ServerMsg::Error { id, msg: msg.into() }
    }
}

/// Scalars that may be `+∞`; JSON has no infinity, so it is sent as `null`.
mod maybe_inf {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

fn ser_bounds<S: serde::Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|x| x.is_finite().then_some(*x)))
}

fn de_bounds<'de, D: serde::Deserializer<'de>>(d: D, missing: f64) -> Result<Vec<f64>, D::Error> {
    let raw = Vec::<Option<f64>>::deserialize(d)?;
    Ok(raw.into_iter().map(|x| x.unwrap_or(missing)).collect())
}

mod lower_bounds {
    pub fn serialize<S: serde::Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        super::ser_bounds(v, s)
    }

    pub fn deserialize<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        super::de_bounds(d, f64::NEG_INFINITY)
    }
}

mod upper_bounds {
    pub fn serialize<S: serde::Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        super::ser_bounds(v, s)
    }

    pub fn deserialize<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        super::de_bounds(d, f64::INFINITY)
    }
}

/// Parses one client frame. On failure, the id is recovered if the frame was
/// at least an object with an integer `id`.
pub fn parse_client(text: &str) -> Result<ClientMsg, (Option<u64>, String)> {
    serde_json::from_str(text).map_err(|e| {
        let id = serde_json::from_str::<serde_json::Value>(text)
            .ok()
            .and_then(|v| v.get("id").and_then(serde_json::Value::as_u64));
        (id, format!("bad message: {e}"))
    })
}

pub fn to_text(msg: &ServerMsg) -> String {
    serde_json::to_string(msg).expect("server messages always serialize")
}
