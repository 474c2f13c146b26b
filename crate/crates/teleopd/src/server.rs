//! HTTP listener: catalog listings, the session socket and static assets.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::{Json, Router};
use tower_http::services::ServeDir;

use crate::protocol::{to_text, ServerMsg};
use crate::session::{Host, LogEntry, ModelInfo, Registry, ScenarioInfo};

pub const DEFAULT_ADDR: &str = "127.0.0.1:8787";

pub struct AppState {
    pub registry: Registry,
    /// Each connection writes `session-<n>.jsonl` here when set.
    pub log_dir: Option<PathBuf>,
    next_session: AtomicU64,
}

impl AppState {
    pub fn new(registry: Registry, log_dir: Option<PathBuf>) -> Self {
        AppState {
            registry,
            log_dir,
            next_session: AtomicU64::new(1),
        }
    }
}

pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let app = Router::new()
        .route("/scenarios", get(scenarios))
        .route("/models", get(models))
        .route("/ws", get(ws_upgrade))
        .with_state(state);
    match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    }
}

async fn scenarios(State(state): State<Arc<AppState>>) -> Json<Vec<ScenarioInfo>> {
    Json(state.registry.scenarios())
}

async fn models(State(state): State<Arc<AppState>>) -> Json<Vec<ModelInfo>> {
    Json(state.registry.models())
}

async fn ws_upgrade(State(state): State<Arc<AppState>>, ws: WebSocketUpgrade) -> impl IntoResponse {
    let n = state.next_session.fetch_add(1, Ordering::Relaxed);
    ws.on_upgrade(move |socket| run_session(state, socket, n))
}

struct LogSink(Option<BufWriter<File>>);

impl LogSink {
    fn open(state: &AppState, n: u64) -> Self {
        let Some(dir) = &state.log_dir else { return LogSink(None) };
        let path = dir.join(format!("session-{n}.jsonl"));
        match File::create(&path) {
            Ok(f) => LogSink(Some(BufWriter::new(f))),
            Err(e) => {
                eprintln!("teleopd: cannot open {}: {e}", path.display());
                LogSink(None)
            }
        }
    }

    fn append(&mut self, entry: &LogEntry) {
        if let Some(w) = &mut self.0 {
            let line = serde_json::to_string(entry).expect("log entries serialize");
            if writeln!(w, "{line}").and_then(|_| w.flush()).is_err() {
                self.0 = None;
            }
        }
    }
}

/// One socket, one session. Frames are handled strictly in arrival order.
async fn run_session(state: Arc<AppState>, mut socket: WebSocket, n: u64) {
    let mut host = Host::new(&state.registry);
    let mut sink = LogSink::open(&state, n);
    while let Some(Ok(frame)) = socket.recv().await {
        let reply = match frame {
            Message::Text(text) => {
                let reply = host.handle_text(text.as_str());
                if let Some(entry) = host.log().last() {
                    sink.append(entry);
                }
                reply
            }
            Message::Binary(_) => ServerMsg::error(None, "binary frames are not supported"),
            Message::Close(_) => break,
            Message::Ping(_) | Message::Pong(_) => continue,
        };
        if socket.send(Message::Text(to_text(&reply).into())).await.is_err() {
            break;
        }
    }
}

/// Binds `addr` and serves until ctrl-c.
pub async fn serve(addr: &str, state: Arc<AppState>, static_dir: Option<PathBuf>) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| anyhow::anyhow!("bind {addr}: {e}"))?;
    eprintln!("teleopd: listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state, static_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
