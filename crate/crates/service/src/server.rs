//! WebSocket endpoint (`GET /ws`) hosting live sessions. Each connection owns at most
//! one session; the first message must be `hello`.

use std::collections::HashSet;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::serve::ListenerExt;
use axum::Router;
use skillnudge_core::simulator::Planner;

use crate::config::{ArtifactPaths, ServiceConfig, SessionConfig};
use crate::model_file::ModelFile;
use crate::protocol::{ClientEnvelope, ClientMessage, ServerEnvelope, ServerMessage};
use crate::session::{Artifacts, Session};
use crate::store::SessionStore;
use crate::trial_log::LogWriter;

/// Loads the model, its solved Q-function and the optional fallback map. The
/// Q-function must have been solved for this exact model.
pub fn load_artifacts(paths: &ArtifactPaths) -> anyhow::Result<Artifacts> {
    let model_path = paths.model.as_ref().context("no model configured (artifacts.model or SKILLNUDGE_MODEL)")?;
    let q_path = paths.qfunction.as_ref().context("no Q-function configured (artifacts.qfunction or SKILLNUDGE_QFUNCTION)")?;
    let model_file = ModelFile::read(model_path).with_context(|| format!("loading {}", model_path.display()))?;
    let model = model_file.iohmm()?;
    let q_file = ModelFile::read(q_path).with_context(|| format!("loading {}", q_path.display()))?;
    let q = q_file.qfunction()?;
    if q_file.provenance.data_hash.as_deref() != Some(model_file.payload_hash().as_str()) {
        bail!("{} was not solved for {}", q_path.display(), model_path.display());
    }
    let planner = Planner::from_parts(&model, q.q, q.weights)?;
    let map = match &paths.map {
        Some(p) => Some(ModelFile::read(p).with_context(|| format!("loading {}", p.display()))?.bomi_map()?),
        None => None,
    };
    Ok(Artifacts { map, planner })
}

pub struct AppState {
    pub artifacts: Arc<Artifacts>,
    pub cfg: Arc<SessionConfig>,
    pub store: SessionStore,
    active: Mutex<HashSet<String>>,
}

impl AppState {
    pub fn new(artifacts: Artifacts, cfg: SessionConfig, store: SessionStore) -> Self {
        AppState { artifacts: Arc::new(artifacts), cfg: Arc::new(cfg), store, active: Mutex::new(HashSet::new()) }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new().route("/ws", get(upgrade)).route("/health", get(|| async { "ok" })).with_state(state)
}

async fn upgrade(ws: WebSocketUpgrade, State(state): State<Arc<AppState>>) -> Response {
    ws.on_upgrade(move |socket| connection(socket, state))
}

fn now_unix_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

async fn send(socket: &mut WebSocket, env: &ServerEnvelope) -> bool {
    let text = serde_json::to_string(env).expect("server message serialises");
    socket.send(Message::Text(text.into())).await.is_ok()
}

struct Live {
    session: Session,
    writer: LogWriter,
}

async fn connection(mut socket: WebSocket, state: Arc<AppState>) {
    let mut live: Option<Live> = None;
    // sequence numbers for errors sent before a session exists
    let mut pre_seq = 0u64;
    while let Some(Ok(msg)) = socket.recv().await {
        let text = match msg {
            Message::Text(t) => t,
            Message::Close(_) => break,
            _ => continue,
        };
        let parsed: Result<ClientEnvelope, _> = serde_json::from_str(text.as_str());
        let env = match (parsed, live.as_mut()) {
            (Ok(env), _) => env,
            (Err(e), Some(l)) => {
                let err = l.session.error(format!("malformed message: {e}"));
                if !send(&mut socket, &err).await {
                    break;
                }
                continue;
            }
            (Err(e), None) => {
                let err = ServerEnvelope { session_id: String::new(), seq: pre_seq, body: ServerMessage::Error { message: format!("malformed message: {e}") } };
                pre_seq += 1;
                if !send(&mut socket, &err).await {
                    break;
                }
                continue;
            }
        };
        if live.is_none() {
            let opened = match env.body {
                ClientMessage::Hello { resume } => open(&state, &env.session_id, resume),
                _ => Err("the first message must be hello".to_string()),
            };
            match opened {
                Ok(l) => live = Some(l),
                Err(message) => {
                    let err = ServerEnvelope { session_id: env.session_id.clone(), seq: pre_seq, body: ServerMessage::Error { message } };
                    pre_seq += 1;
                    if !send(&mut socket, &err).await {
                        break;
                    }
                    continue;
                }
            }
        }
        let l = live.as_mut().expect("session is open");
        let mut outcome = l.session.handle(env, now_unix_ms());
        if let Err(e) = state.store.commit(&l.session, &mut l.writer, &outcome) {
            log::error!("session {}: persisting trial failed: {e}", l.session.session_id());
            outcome.messages.push(l.session.error(format!("persisting trial failed: {e}")));
        }
        let mut open = true;
        for m in &outcome.messages {
            open &= send(&mut socket, m).await;
        }
        if !open {
            break;
        }
    }
    if let Some(l) = live {
        let id = l.session.session_id().to_string();
        if let Err(e) = state.store.checkpoint(&l.session) {
            log::error!("session {id}: checkpoint on disconnect failed: {e}");
        }
        log::info!("session {id}: disconnected at trial {}", l.session.state().completed);
        state.active.lock().expect("lock").remove(&id);
    }
}

fn open(state: &AppState, id: &str, resume: bool) -> Result<Live, String> {
    if !state.active.lock().expect("lock").insert(id.to_string()) {
        return Err(format!("session {id} is already connected"));
    }
    match state.store.open(id, resume, state.artifacts.clone(), state.cfg.clone()) {
        Ok((session, writer)) => {
            log::info!("session {id}: {}", if resume { "resumed" } else { "started" });
            Ok(Live { session, writer })
        }
        Err(e) => {
            state.active.lock().expect("lock").remove(id);
            Err(e.to_string())
        }
    }
}

/// Binds `addr` and serves until the listener fails. Returns the bound address via
/// `on_bound` before serving.
pub async fn serve(state: Arc<AppState>, addr: SocketAddr, on_bound: impl FnOnce(SocketAddr)) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
    on_bound(listener.local_addr()?);
    serve_listener(listener, state).await
}

/// Serves on an already bound listener. Small pose messages are sent without delay.
pub async fn serve_listener(listener: tokio::net::TcpListener, state: Arc<AppState>) -> anyhow::Result<()> {
    let listener = listener.tap_io(|tcp| {
        if let Err(e) = tcp.set_nodelay(true) {
            log::warn!("could not disable Nagle's algorithm: {e}");
        }
    });
    axum::serve(listener, router(state)).await?;
    Ok(())
}

/// Loads everything a `serve` run needs from the configuration.
pub fn app_state(cfg: &ServiceConfig) -> anyhow::Result<Arc<AppState>> {
    let artifacts = load_artifacts(&cfg.artifacts)?;
    let store = SessionStore::new(&cfg.artifacts.log_dir, &cfg.artifacts.checkpoint_dir);
    Ok(Arc::new(AppState::new(artifacts, cfg.session.clone(), store)))
}
