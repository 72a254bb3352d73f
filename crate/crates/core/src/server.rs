//! WebSocket endpoint.
//!
//! Each connection starts with a `hello` naming its role and session. All
//! traffic for a session is funnelled into one actor thread that owns the
//! [`Session`]; socket tasks never touch session state directly. Viewers get
//! a bounded queue each, and the session drops a viewer whose queue is full
//! instead of waiting for it.

use std::collections::{HashMap, HashSet};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc as std_mpsc;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use serde::{Deserialize, Serialize};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, oneshot, watch};
use tokio::task::JoinHandle;
use tokio_tungstenite::tungstenite::Message;
use tracing::{debug, info, warn};

use crate::protocol::{ClientMessage, Role, ServerMessage};
use crate::session::{FileStore, Session, SessionConfig, SessionCounters, SessionStore, SystemClock};
use crate::toolkit::bench::LatencyStats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub session: SessionConfig,
    /// Directory for session files; `None` keeps sessions in memory only.
    pub store_dir: Option<PathBuf>,
    /// Per-viewer queue capacity, in messages.
    pub viewer_buffer: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self { session: SessionConfig::default(), store_dir: None, viewer_buffer: 256 }
    }
}

/// What remains of a session after it ended.
#[derive(Debug, Clone, Serialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub participant: String,
    pub fixations: usize,
    pub saccades: usize,
    pub counters: SessionCounters,
    pub latency: LatencyStats,
    pub metrics_csv: String,
}

#[derive(Debug, Default)]
pub struct ServerStats {
    pub connections: AtomicU64,
    pub rejected_connections: AtomicU64,
    /// Messages a role may not send (ignored).
    pub ignored_messages: AtomicU64,
}

enum Command {
    Text(String),
    AddViewer(mpsc::Sender<Arc<str>>),
    Flush,
    End(Option<oneshot::Sender<()>>),
}

struct Slot {
    tx: std_mpsc::Sender<Command>,
    source_attached: bool,
}

#[derive(Default)]
struct Registry {
    live: HashMap<String, Slot>,
    ended: HashSet<String>,
    finished: Vec<SessionSummary>,
}

struct Shared {
    config: ServerConfig,
    registry: Mutex<Registry>,
    stats: ServerStats,
}

/// Running server.
pub struct ServerHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    stop: watch::Sender<bool>,
    accept: JoinHandle<()>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("ws://{}", self.addr)
    }

    pub fn stats(&self) -> &ServerStats {
        &self.shared.stats
    }

    pub fn finished_sessions(&self) -> Vec<SessionSummary> {
        self.shared.registry.lock().unwrap().finished.clone()
    }

    pub fn live_sessions(&self) -> Vec<String> {
        self.shared.registry.lock().unwrap().live.keys().cloned().collect()
    }

    /// Stops accepting, ends every live session (flushing it) and waits for
    /// the session actors to finish.
    pub async fn shutdown(self) {
        let _ = self.stop.send(true);
        let _ = self.accept.await;
        let slots: Vec<std_mpsc::Sender<Command>> =
            self.shared.registry.lock().unwrap().live.values().map(|s| s.tx.clone()).collect();
        for tx in slots {
            let (ack, done) = oneshot::channel();
            if tx.send(Command::End(Some(ack))).is_ok() {
                let _ = done.await;
            }
        }
    }
}

fn valid_session_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

/// Binds `addr` and serves until [`ServerHandle::shutdown`].
pub async fn start(addr: &str, config: ServerConfig) -> std::io::Result<ServerHandle> {
    if config.viewer_buffer == 0 {
        return Err(std::io::Error::new(std::io::ErrorKind::InvalidInput, "viewer_buffer must be > 0"));
    }
    // surface configuration errors before accepting anyone
    Session::new(None, "", config.session, None, Arc::new(SystemClock::default()))
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e.to_string()))?;
    let listener = TcpListener::bind(addr).await?;
    let addr = listener.local_addr()?;
    let shared = Arc::new(Shared { config, registry: Mutex::new(Registry::default()), stats: ServerStats::default() });
    let (stop, mut stopped) = watch::channel(false);
    let accept_shared = shared.clone();
    let accept = tokio::spawn(async move {
        loop {
            tokio::select! {
                _ = stopped.changed() => break,
                conn = listener.accept() => match conn {
                    Ok((stream, peer)) => {
                        let _ = stream.set_nodelay(true);
                        accept_shared.stats.connections.fetch_add(1, Ordering::Relaxed);
                        tokio::spawn(handle_connection(stream, peer, accept_shared.clone()));
                    }
                    Err(e) => warn!(error = %e, "accept failed"),
                }
            }
        }
    });
    info!(%addr, "listening");
    Ok(ServerHandle { addr, shared, stop, accept })
}

/// Looks up or creates the actor of a session.
fn session_sender(
    shared: &Arc<Shared>,
    id: &str,
    participant: &str,
    claim_source: bool,
) -> Result<std_mpsc::Sender<Command>, String> {
    let mut reg = shared.registry.lock().unwrap();
    if reg.ended.contains(id) {
        return Err(format!("session {id} has ended"));
    }
    if let Some(slot) = reg.live.get_mut(id) {
        if claim_source {
            if slot.source_attached {
                return Err(format!("session {id} already has a source"));
            }
            slot.source_attached = true;
        }
        return Ok(slot.tx.clone());
    }
    let store: Option<Box<dyn SessionStore>> = match &shared.config.store_dir {
        Some(dir) => Some(Box::new(FileStore::new(dir, id).map_err(|e| format!("store: {e}"))?)),
        None => None,
    };
    let session =
        Session::new(Some(id.to_string()), participant, shared.config.session, store, Arc::new(SystemClock::default()))
            .map_err(|e| e.to_string())?;
    let (tx, rx) = std_mpsc::channel();
    let actor_shared = shared.clone();
    std::thread::Builder::new()
        .name(format!("session-{id}"))
        .spawn(move || run_session(session, rx, actor_shared))
        .map_err(|e| format!("spawn: {e}"))?;
    reg.live.insert(id.to_string(), Slot { tx: tx.clone(), source_attached: claim_source });
    info!(session = id, "session opened");
    Ok(tx)
}

fn release_source(shared: &Shared, id: &str) {
    if let Some(slot) = shared.registry.lock().unwrap().live.get_mut(id) {
        slot.source_attached = false;
    }
}

/// Session actor: the only owner of the session's state.
fn run_session(mut session: Session, rx: std_mpsc::Receiver<Command>, shared: Arc<Shared>) {
    let tick = Duration::from_millis(50);
    let mut ack = None;
    loop {
        match rx.recv_timeout(tick) {
            Ok(Command::Text(t)) => {
                if let Err(e) = session.ingest_text(&t) {
                    debug!(session = session.id(), error = %e, "message rejected");
                }
                if session.is_ended() {
                    break;
                }
            }
            Ok(Command::AddViewer(tx)) => session.add_viewer(Box::new(tx)),
            Ok(Command::Flush) => {
                if let Err(e) = session.flush() {
                    warn!(session = session.id(), error = %e, "flush failed");
                }
            }
            Ok(Command::End(a)) => {
                ack = a;
                break;
            }
            Err(std_mpsc::RecvTimeoutError::Timeout) => session.tick(),
            Err(std_mpsc::RecvTimeoutError::Disconnected) => break,
        }
    }
    session.end_session();
    let summary = SessionSummary {
        session_id: session.id().to_string(),
        participant: session.participant().to_string(),
        fixations: session.fixations().len(),
        saccades: session.saccades().len(),
        counters: session.counters(),
        latency: LatencyStats::from_ns(session.latencies_ns()),
        metrics_csv: session.metrics_csv(),
    };
    info!(session = session.id(), fixations = summary.fixations, "session ended");
    {
        let mut reg = shared.registry.lock().unwrap();
        reg.live.remove(session.id());
        reg.ended.insert(session.id().to_string());
        reg.finished.push(summary);
    }
    // anything queued behind the end is answered too
    for cmd in rx.try_iter() {
        if let Command::End(Some(a)) = cmd {
            let _ = a.send(());
        }
    }
    if let Some(a) = ack {
        let _ = a.send(());
    }
}

type Ws = tokio_tungstenite::WebSocketStream<TcpStream>;

async fn reject(mut ws: Ws, shared: &Shared, message: String) {
    shared.stats.rejected_connections.fetch_add(1, Ordering::Relaxed);
    warn!(%message, "connection rejected");
    let _ = ws.send(Message::text(ServerMessage::Error { message }.to_json())).await;
    let _ = ws.close(None).await;
}

async fn handle_connection(stream: TcpStream, peer: SocketAddr, shared: Arc<Shared>) {
    let mut ws = match tokio_tungstenite::accept_async(stream).await {
        Ok(ws) => ws,
        Err(e) => {
            debug!(%peer, error = %e, "handshake failed");
            return;
        }
    };
    let first = match tokio::time::timeout(Duration::from_secs(30), ws.next()).await {
        Ok(Some(Ok(Message::Text(t)))) => t,
        _ => return reject(ws, &shared, "expected a hello text message".into()).await,
    };
    let (role, session, participant) = match ClientMessage::parse(first.as_str()) {
        Ok(ClientMessage::Hello { role, session, participant }) => (role, session, participant),
        _ => return reject(ws, &shared, "first message must be hello".into()).await,
    };
    let id = match (session, role) {
        (Some(s), _) if valid_session_id(&s) => s,
        (Some(s), _) => return reject(ws, &shared, format!("invalid session id {s:?}")).await,
        (None, Role::Source) => crate::session::new_session_id(),
        (None, _) => return reject(ws, &shared, "hello must name a session".into()).await,
    };
    let tx = match session_sender(&shared, &id, &participant, role == Role::Source) {
        Ok(tx) => tx,
        Err(message) => return reject(ws, &shared, message).await,
    };
    debug!(%peer, session = %id, ?role, "client registered");
    match role {
        Role::Source | Role::Layout => feed(ws, tx, role, &id, &shared).await,
        Role::Viewer => watch_session(ws, tx, &shared).await,
    }
}

fn allowed(role: Role, text: &str) -> bool {
    match role {
        Role::Source => true,
        // layout clients describe the page; they do not send gaze or end sessions
        Role::Layout => {
            !(text.contains("\"gaze\"") || text.contains("\"end\"") || text.contains("\"hello\""))
                || matches!(
                    ClientMessage::parse(text),
                    Ok(ClientMessage::Layout(_) | ClientMessage::Viewport(_) | ClientMessage::Tabstate { .. })
                )
        }
        Role::Viewer => false,
    }
}

fn is_end(text: &str) -> bool {
    // cheap pre-check; the session does the real parsing
    text.contains("\"end\"") && matches!(ClientMessage::parse(text), Ok(ClientMessage::End))
}

async fn feed(mut ws: Ws, tx: std_mpsc::Sender<Command>, role: Role, id: &str, shared: &Shared) {
    while let Some(msg) = ws.next().await {
        let text = match msg {
            Ok(Message::Text(t)) => t,
            Ok(Message::Close(_)) | Err(_) => break,
            Ok(_) => continue,
        };
        if !allowed(role, text.as_str()) {
            shared.stats.ignored_messages.fetch_add(1, Ordering::Relaxed);
            continue;
        }
        if role == Role::Source && is_end(text.as_str()) {
            let (ack, done) = oneshot::channel();
            if tx.send(Command::End(Some(ack))).is_ok() {
                let _ = done.await;
            }
            let _ = ws.close(None).await;
            // wait for the peer's close reply
            while let Some(Ok(m)) = ws.next().await {
                if m.is_close() {
                    break;
                }
            }
            return;
        }
        if tx.send(Command::Text(text.as_str().to_owned())).is_err() {
            break;
        }
    }
    if role == Role::Source {
        release_source(shared, id);
        let _ = tx.send(Command::Flush);
    }
}

async fn watch_session(ws: Ws, tx: std_mpsc::Sender<Command>, shared: &Shared) {
    let (queue_tx, mut queue) = mpsc::channel::<Arc<str>>(shared.config.viewer_buffer);
    if tx.send(Command::AddViewer(queue_tx)).is_err() {
        return;
    }
    let (mut sink, mut stream) = ws.split();
    let writer = async {
        // ends when the session drops this viewer or ends
        while let Some(m) = queue.recv().await {
            if sink.send(Message::text(&*m)).await.is_err() {
                return;
            }
        }
        let _ = sink.close().await;
    };
    let reader = async {
        while let Some(m) = stream.next().await {
            match m {
                Ok(Message::Close(_)) | Err(_) => break,
                Ok(_) => {
                    shared.stats.ignored_messages.fetch_add(1, Ordering::Relaxed);
                }
            }
        }
    };
    tokio::select! {
        _ = writer => {}
        _ = reader => {}
    }
}
