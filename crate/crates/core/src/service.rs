//! Teleoperation service.
//!
//! A websocket endpoint at `/ws` speaks a JSON text protocol; `GET /health`
//! reports liveness. Every session owns a simulated world driven by its own
//! tick loop (default 10 Hz). Movement commands received between two ticks
//! collapse to the latest one, so at most one atom is applied per tick.
//!
//! Client to server:
//!
//! ```text
//! {"type":"command","session":ID,"atom":"forward|backward|turn_left|turn_right"}
//! {"type":"control","op":"start_demo|stop_demo|reset","session":ID?}
//! {"type":"control","op":"watch","session":ID}
//! {"type":"control","op":"execute","session":ID?,"budget":N?}
//! ```
//!
//! Server to client:
//!
//! ```text
//! {"type":"frame","session":ID,"step":N,"png_base64":"..."}
//! {"type":"state","session":ID,"pose":[x,y,"E"],"recording":bool,"collisions":N}
//! {"type":"demo_saved","session":ID,"path":"...","steps":N,"truncated":bool}
//! {"type":"episode","session":ID,"success":bool,"steps":N,"ticks":N,"collisions":N}
//! {"type":"error","reason":"..."}
//! ```
//!
//! A control message without `session` addresses the connection's current
//! session, or `"default"`. `reset`, `start_demo` and `execute` create the
//! session if needed; the connection that creates (or first claims) a session
//! is its only writer, and other connections may `watch` it read-only.
//! Outgoing traffic goes through bounded queues: a client that cannot keep
//! up loses frames instead of slowing the simulation down.

use std::collections::{HashMap, VecDeque};
use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, Weak};
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use futures::{SinkExt, StreamExt};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc};
use tokio::task::JoinHandle;

use crate::error::{Error, Result};
use crate::features::Frame;
use crate::mdp::AtomMovement;
use crate::pipeline::{Recorder, TrainedModel};
use crate::sim::{expert_path_len, render, SimWorld};

#[derive(Debug, Clone)]
pub struct ServeConfig {
    /// Template for every new session's world.
    pub world: SimWorld,
    /// Recorded in demonstration metadata.
    pub world_name: String,
    /// Where finished demonstrations are written.
    pub demo_dir: PathBuf,
    /// Policy for the `execute` op.
    pub model: Option<Arc<TrainedModel>>,
    pub tick_hz: f64,
    /// Messages buffered per subscriber before frames are dropped.
    pub buffer: usize,
}

impl ServeConfig {
    pub fn new(world: SimWorld, world_name: impl Into<String>) -> Self {
        Self {
            world,
            world_name: world_name.into(),
            demo_dir: PathBuf::from("demos"),
            model: None,
            tick_hz: 10.0,
            buffer: 32,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ClientMessage {
    Command { session: Value, atom: AtomMovement },
    Control { op: ControlOp, session: Option<Value>, budget: Option<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ControlOp {
    StartDemo,
    StopDemo,
    Reset,
    Watch,
    Execute,
}

/// A model run advanced one tick at a time.
struct Execution {
    window: Vec<Frame>,
    queue: VecDeque<AtomMovement>,
    ticks: usize,
    steps: usize,
    budget: usize,
    collisions_before: usize,
}

struct SessionState {
    world: SimWorld,
    step: usize,
    pending: Option<AtomMovement>,
    recorder: Option<Recorder>,
    writer: Option<u64>,
    execution: Option<Execution>,
}

struct Session {
    id: Value,
    state: Mutex<SessionState>,
    events: broadcast::Sender<Arc<str>>,
}

struct App {
    config: ServeConfig,
    sessions: Mutex<HashMap<String, Arc<Session>>>,
    next_conn: AtomicU64,
    saved: AtomicU64,
}

fn key(id: &Value) -> String {
    match id {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn error_message(reason: impl std::fmt::Display) -> Arc<str> {
    json!({"type": "error", "reason": reason.to_string()}).to_string().into()
}

impl Session {
    fn frame_message(&self, st: &SessionState) -> Arc<str> {
        let png = render(&st.world).to_png().map(|b| BASE64.encode(b)).unwrap_or_default();
        json!({"type": "frame", "session": self.id, "step": st.step, "png_base64": png}).to_string().into()
    }

    fn state_message(&self, st: &SessionState) -> Arc<str> {
        let p = st.world.robot;
        json!({
            "type": "state",
            "session": self.id,
            "pose": [p.x, p.y, p.heading.to_string()],
            "recording": st.recorder.is_some(),
            "collisions": st.world.collision_count,
        })
        .to_string()
        .into()
    }

    fn emit(&self, msg: Arc<str>) {
        // No subscribers is fine; lagging subscribers lose old messages.
        let _ = self.events.send(msg);
    }

    fn emit_view(&self, st: &SessionState) {
        self.emit(self.frame_message(st));
        self.emit(self.state_message(st));
    }

    /// One simulation tick.
    fn tick(&self, model: Option<&TrainedModel>) {
        let mut st = self.state.lock().expect("session lock");
        if st.execution.is_some() {
            self.tick_execution(&mut st, model);
            return;
        }
        if let Some(atom) = st.pending.take() {
            st.world.step(atom);
            st.step += 1;
            let SessionState { recorder, world, .. } = &mut *st;
            if let Some(rec) = recorder {
                rec.record(atom, world);
            }
            self.emit_view(&st);
        }
    }

    fn tick_execution(&self, st: &mut SessionState, model: Option<&TrainedModel>) {
        let Some(model) = model else {
            st.execution = None;
            return;
        };
        let l = model.seq_len();
        let mut exec = st.execution.take().expect("execution in progress");
        let mut finished = None;
        if exec.ticks >= exec.budget {
            finished = Some(false);
        } else if exec.queue.is_empty() && exec.window.len() < l {
            exec.window.push(render(&st.world));
            exec.ticks += 1;
        } else {
            if exec.queue.is_empty() {
                match model.decide(&exec.window) {
                    Ok(d) => exec.queue.extend(model.actions()[d.choice.action].atoms.iter().copied()),
                    Err(e) => {
                        self.emit(error_message(format!("execution stopped: {e}")));
                        finished = Some(false);
                    }
                }
                exec.window.clear();
            }
            if let Some(atom) = exec.queue.pop_front() {
                st.world.step(atom);
                st.step += 1;
                exec.ticks += 1;
                exec.steps += 1;
                exec.window.push(render(&st.world));
                if exec.window.len() > l {
                    exec.window.remove(0);
                }
                self.emit_view(st);
                if st.world.at_victim() {
                    finished = Some(true);
                }
            }
        }
        match finished {
            Some(success) => self.emit(
                json!({
                    "type": "episode",
                    "session": self.id,
                    "success": success,
                    "steps": exec.steps,
                    "ticks": exec.ticks,
                    "collisions": st.world.collision_count - exec.collisions_before,
                })
                .to_string()
                .into(),
            ),
            None => st.execution = Some(exec),
        }
    }
}

impl App {
    fn new_session(self: &Arc<Self>, id: Value) -> Arc<Session> {
        let (events, _) = broadcast::channel(self.config.buffer.max(1));
        let session = Arc::new(Session {
            id,
            state: Mutex::new(SessionState {
                world: self.config.world.clone(),
                step: 0,
                pending: None,
                recorder: None,
                writer: None,
                execution: None,
            }),
            events,
        });
        let weak: Weak<Session> = Arc::downgrade(&session);
        let model = self.config.model.clone();
        let period = Duration::from_secs_f64(1.0 / self.config.tick_hz.max(0.1));
        tokio::spawn(async move {
            let mut ticker = tokio::time::interval(period);
            ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
            loop {
                ticker.tick().await;
                let Some(session) = weak.upgrade() else { break };
                session.tick(model.as_deref());
            }
        });
        session
    }

    fn save_demo(&self, session: &Session, rec: Recorder, truncated: bool) -> Arc<str> {
        let demo = rec.finish(truncated);
        let n = self.saved.fetch_add(1, Ordering::Relaxed);
        let name: String = key(&session.id)
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect();
        let path = self.config.demo_dir.join(format!("{name}-{}-{n:03}.jsonl", demo.meta.timestamp));
        let result = std::fs::create_dir_all(&self.config.demo_dir).map_err(Error::from).and_then(|_| demo.save(&path));
        match result {
            Ok(()) => {
                log::info!("saved demonstration {} ({} atoms)", path.display(), demo.k_stream.len());
                json!({
                    "type": "demo_saved",
                    "session": session.id,
                    "path": path.display().to_string(),
                    "steps": demo.k_stream.len(),
                    "truncated": truncated,
                })
                .to_string()
                .into()
            }
            Err(e) => error_message(format!("could not save demonstration: {e}")),
        }
    }
}

/// Per-connection bookkeeping.
struct Connection {
    id: u64,
    out: mpsc::Sender<Arc<str>>,
    subscriptions: HashMap<String, JoinHandle<()>>,
    current: Option<Value>,
}

impl Connection {
    fn send(&self, msg: Arc<str>) {
        if self.out.try_send(msg).is_err() {
            log::debug!("connection {} is behind, dropping a message", self.id);
        }
    }

    fn subscribe(&mut self, session: &Session) {
        let k = key(&session.id);
        if self.subscriptions.contains_key(&k) {
            return;
        }
        let mut rx = session.events.subscribe();
        let out = self.out.clone();
        let handle = tokio::spawn(async move {
            loop {
                match rx.recv().await {
                    Ok(msg) => {
                        // A full queue means a slow client: drop, never wait.
                        let _ = out.try_send(msg);
                    }
                    Err(broadcast::error::RecvError::Lagged(n)) => log::debug!("subscriber skipped {n} messages"),
                    Err(broadcast::error::RecvError::Closed) => break,
                }
            }
        });
        self.subscriptions.insert(k, handle);
    }
}

fn handle_text(app: &Arc<App>, conn: &mut Connection, text: &str) {
    let msg: ClientMessage = match serde_json::from_str(text) {
        Ok(m) => m,
        Err(e) => return conn.send(error_message(format!("bad message: {e}"))),
    };
    match msg {
        ClientMessage::Command { session, atom } => {
            let found = app.sessions.lock().expect("sessions lock").get(&key(&session)).cloned();
            let Some(s) = found else {
                return conn.send(error_message(format!("session not found: {}", key(&session))));
            };
            let mut st = s.state.lock().expect("session lock");
            if st.writer != Some(conn.id) {
                return conn.send(error_message(format!("session {} is read-only for this connection", key(&session))));
            }
            if st.execution.is_some() {
                return conn.send(error_message("session is executing a policy"));
            }
            st.pending = Some(atom);
            conn.current = Some(session);
        }
        ClientMessage::Control { op, session, budget } => {
            let id = session.or_else(|| conn.current.clone()).unwrap_or_else(|| Value::from("default"));
            control(app, conn, op, id, budget);
        }
    }
}

fn control(app: &Arc<App>, conn: &mut Connection, op: ControlOp, id: Value, budget: Option<usize>) {
    let k = key(&id);
    let creates = matches!(op, ControlOp::Reset | ControlOp::StartDemo | ControlOp::Execute);
    let session = {
        let mut sessions = app.sessions.lock().expect("sessions lock");
        match sessions.get(&k) {
            Some(s) => Some(s.clone()),
            None if creates => {
                let s = app.new_session(id.clone());
                sessions.insert(k.clone(), s.clone());
                Some(s)
            }
            None => None,
        }
    };
    let Some(session) = session else {
        return conn.send(error_message(format!("session not found: {k}")));
    };
    conn.subscribe(&session);
    conn.current = Some(id);

    let mut st = session.state.lock().expect("session lock");
    if op == ControlOp::Watch {
        conn.send(session.frame_message(&st));
        conn.send(session.state_message(&st));
        return;
    }
    match st.writer {
        None => st.writer = Some(conn.id),
        Some(w) if w == conn.id => {}
        Some(_) => return conn.send(error_message(format!("session {k} is read-only for this connection"))),
    }
    match op {
        ControlOp::Reset => {
            if let Some(rec) = st.recorder.take() {
                session.emit(app.save_demo(&session, rec, true));
            }
            st.world.reset();
            st.step = 0;
            st.pending = None;
            st.execution = None;
            session.emit_view(&st);
        }
        ControlOp::StartDemo => {
            if st.recorder.is_some() {
                return conn.send(error_message("already recording"));
            }
            st.pending = None;
            st.recorder = Some(Recorder::start(&st.world, app.config.world_name.clone()));
            session.emit_view(&st);
        }
        ControlOp::StopDemo => {
            let Some(rec) = st.recorder.take() else {
                return conn.send(error_message("not recording"));
            };
            session.emit(app.save_demo(&session, rec, false));
            session.emit(session.state_message(&st));
        }
        ControlOp::Execute => {
            if app.config.model.is_none() {
                return conn.send(error_message("no model loaded"));
            }
            if st.recorder.is_some() {
                return conn.send(error_message("stop the recording before executing"));
            }
            let budget = budget.unwrap_or_else(|| 4 * expert_path_len(&st.world).unwrap_or(25));
            st.pending = None;
            st.execution = Some(Execution {
                window: Vec::new(),
                queue: VecDeque::new(),
                ticks: 0,
                steps: 0,
                budget,
                collisions_before: st.world.collision_count,
            });
            session.emit_view(&st);
        }
        ControlOp::Watch => unreachable!("handled above"),
    }
}

async fn handle_socket(app: Arc<App>, socket: WebSocket) {
    let id = app.next_conn.fetch_add(1, Ordering::Relaxed);
    let (mut sink, mut stream) = socket.split();
    let (out, mut out_rx) = mpsc::channel::<Arc<str>>(app.config.buffer.max(1));
    let writer = tokio::spawn(async move {
        while let Some(msg) = out_rx.recv().await {
            if sink.send(Message::Text(msg.to_string())).await.is_err() {
                break;
            }
        }
    });
    let mut conn = Connection { id, out, subscriptions: HashMap::new(), current: None };
    log::debug!("connection {id} opened");

    while let Some(Ok(msg)) = stream.next().await {
        match msg {
            Message::Text(text) => handle_text(&app, &mut conn, &text),
            Message::Close(_) => break,
            _ => {}
        }
    }

    // Release writer roles; an unfinished recording is kept, flagged.
    let sessions: Vec<Arc<Session>> = app.sessions.lock().expect("sessions lock").values().cloned().collect();
    for s in sessions {
        let mut st = s.state.lock().expect("session lock");
        if st.writer == Some(id) {
            st.writer = None;
            st.pending = None;
            if let Some(rec) = st.recorder.take() {
                s.emit(app.save_demo(&s, rec, true));
            }
        }
    }
    for (_, h) in conn.subscriptions.drain() {
        h.abort();
    }
    drop(conn);
    let _ = writer.await;
    log::debug!("connection {id} closed");
}

async fn ws_handler(State(app): State<Arc<App>>, upgrade: WebSocketUpgrade) -> impl IntoResponse {
    upgrade.on_upgrade(move |socket| handle_socket(app, socket))
}

async fn health(State(app): State<Arc<App>>) -> impl IntoResponse {
    let sessions = app.sessions.lock().expect("sessions lock").len();
    Json(json!({"status": "ok", "sessions": sessions}))
}

pub fn router(config: ServeConfig) -> Router {
    let app = Arc::new(App {
        config,
        sessions: Mutex::new(HashMap::new()),
        next_conn: AtomicU64::new(1),
        saved: AtomicU64::new(0),
    });
    Router::new().route("/ws", get(ws_handler)).route("/health", get(health)).with_state(app)
}

/// Binds the listening socket; a busy port is reported here.
pub async fn bind(addr: SocketAddr) -> Result<TcpListener> {
    TcpListener::bind(addr).await.map_err(Error::from)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    config: ServeConfig,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<()> {
    log::info!("listening on {}", listener.local_addr()?);
    // Small command frames must not wait for delayed ACKs.
    axum::serve(listener, router(config)).tcp_nodelay(true).with_graceful_shutdown(shutdown).await?;
    Ok(())
}
