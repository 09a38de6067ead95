use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;
use tokio::time::{timeout, Instant};
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

use smal::pipeline::{record_scripted, train, Demonstration, ScriptedOptions, TrainConfig};
use smal::service::{bind, serve, ServeConfig};
use smal::sim::SimWorld;

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

const WAIT: Duration = Duration::from_secs(5);

fn corridor() -> SimWorld {
    SimWorld::parse("R...\n.#.V\nheading E\nseed 2\n").unwrap()
}

fn config(demo_dir: &Path, tick_hz: f64) -> ServeConfig {
    let mut cfg = ServeConfig::new(corridor(), "corridor");
    cfg.demo_dir = demo_dir.to_path_buf();
    cfg.tick_hz = tick_hz;
    cfg
}

async fn start(cfg: ServeConfig) -> SocketAddr {
    let listener = bind("127.0.0.1:0".parse().unwrap()).await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(serve(listener, cfg, std::future::pending()));
    addr
}

async fn connect(addr: SocketAddr) -> Ws {
    connect_async(format!("ws://{addr}/ws")).await.unwrap().0
}

async fn send(ws: &mut Ws, v: Value) {
    ws.send(Message::Text(v.to_string())).await.unwrap();
}

async fn next(ws: &mut Ws) -> Value {
    loop {
        let msg = timeout(WAIT, ws.next()).await.expect("timed out").expect("stream ended").unwrap();
        if let Message::Text(t) = msg {
            return serde_json::from_str(&t).unwrap();
        }
    }
}

/// Skips messages until one of type `ty` arrives.
async fn expect(ws: &mut Ws, ty: &str) -> Value {
    loop {
        let v = next(ws).await;
        if v["type"] == ty {
            return v;
        }
    }
}

/// Skips messages until a `state` whose pose satisfies `pred` arrives.
async fn state_where(ws: &mut Ws, pred: impl Fn(&Value) -> bool) -> Value {
    loop {
        let v = expect(ws, "state").await;
        if pred(&v) {
            return v;
        }
    }
}

async fn health(addr: SocketAddr) -> Value {
    let mut s = TcpStream::connect(addr).await.unwrap();
    s.write_all(b"GET /health HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").await.unwrap();
    let mut body = String::new();
    s.read_to_string(&mut body).await.unwrap();
    assert!(body.starts_with("HTTP/1.1 200"), "{body}");
    serde_json::from_str(body.split("\r\n\r\n").nth(1).unwrap()).unwrap()
}

fn control(op: &str, session: &str) -> Value {
    json!({"type": "control", "op": op, "session": session})
}

fn command(session: &str, atom: &str) -> Value {
    json!({"type": "command", "session": session, "atom": atom})
}

async fn wait_for_files(dir: &Path, n: usize) -> Vec<std::path::PathBuf> {
    let deadline = Instant::now() + WAIT;
    loop {
        let files = smal::pipeline::demo::demo_files(dir).unwrap_or_default();
        if files.len() >= n || Instant::now() > deadline {
            return files;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}

#[tokio::test]
async fn health_reports_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let addr = start(config(dir.path(), 20.0)).await;
    assert_eq!(health(addr).await, json!({"status": "ok", "sessions": 0}));
    let mut ws = connect(addr).await;
    send(&mut ws, control("reset", "a")).await;
    expect(&mut ws, "state").await;
    assert_eq!(health(addr).await["sessions"], 1);
}

#[tokio::test]
async fn frames_carry_png_and_reset_restores_the_start() {
    let dir = tempfile::tempdir().unwrap();
    let addr = start(config(dir.path(), 50.0)).await;
    let mut ws = connect(addr).await;
    send(&mut ws, json!({"type": "control", "op": "reset"})).await;
    let frame = expect(&mut ws, "frame").await;
    assert_eq!(frame["session"], "default");
    assert_eq!(frame["step"], 0);
    let png = frame["png_base64"].as_str().unwrap();
    assert!(png.starts_with("iVBORw0KGgo"), "base64 of the PNG signature");
    let st = expect(&mut ws, "state").await;
    assert_eq!(st["pose"], json!([0, 0, "E"]));
    assert_eq!(st["recording"], false);
    assert_eq!(st["collisions"], 0);

    send(&mut ws, command("default", "forward")).await;
    state_where(&mut ws, |v| v["pose"] == json!([1, 0, "E"])).await;
    send(&mut ws, command("default", "turn_right")).await;
    state_where(&mut ws, |v| v["pose"] == json!([1, 0, "S"])).await;
    send(&mut ws, command("default", "forward")).await;
    let bumped = state_where(&mut ws, |v| v["collisions"] == 1).await;
    assert_eq!(bumped["pose"], json!([1, 0, "S"]));

    send(&mut ws, json!({"type": "control", "op": "reset"})).await;
    let back = state_where(&mut ws, |v| v["pose"] == json!([0, 0, "E"])).await;
    assert_eq!(back["collisions"], 0);
}

#[tokio::test]
async fn unknown_session_and_bad_messages_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    let addr = start(config(dir.path(), 20.0)).await;
    let mut ws = connect(addr).await;
    send(&mut ws, command("nope", "forward")).await;
    let e = expect(&mut ws, "error").await;
    assert_eq!(e["reason"], "session not found: nope");
    send(&mut ws, control("watch", "ghost")).await;
    assert_eq!(expect(&mut ws, "error").await["reason"], "session not found: ghost");
    send(&mut ws, command("x", "jump")).await;
    assert!(expect(&mut ws, "error").await["reason"].as_str().unwrap().starts_with("bad message"));
    ws.send(Message::Text("{".into())).await.unwrap();
    expect(&mut ws, "error").await;
}

#[tokio::test]
async fn sessions_are_independent() {
    let dir = tempfile::tempdir().unwrap();
    let addr = start(config(dir.path(), 50.0)).await;
    let (mut a, mut b) = (connect(addr).await, connect(addr).await);
    send(&mut a, control("reset", "a")).await;
    send(&mut b, control("reset", "b")).await;
    expect(&mut a, "state").await;
    expect(&mut b, "state").await;

    send(&mut a, command("a", "forward")).await;
    state_where(&mut a, |v| v["pose"] == json!([1, 0, "E"])).await;
    send(&mut b, command("b", "turn_left")).await;
    let sb = state_where(&mut b, |v| v["pose"][2] == "N").await;
    assert_eq!(sb["session"], "b");
    assert_eq!(sb["pose"], json!([0, 0, "N"]), "b did not see a's move");

    // Neither connection receives the other session's traffic.
    send(&mut a, control("watch", "a")).await;
    let mut seen = Vec::new();
    for _ in 0..2 {
        seen.push(next(&mut a).await["session"].clone());
    }
    assert!(seen.iter().all(|s| s == "a"), "{seen:?}");
}

#[tokio::test]
async fn start_and_stop_record_a_demo() {
    let dir = tempfile::tempdir().unwrap();
    let addr = start(config(dir.path(), 50.0)).await;
    let mut ws = connect(addr).await;
    send(&mut ws, control("start_demo", "rec")).await;
    state_where(&mut ws, |v| v["recording"] == true).await;
    send(&mut ws, command("rec", "forward")).await;
    state_where(&mut ws, |v| v["pose"] == json!([1, 0, "E"])).await;
    send(&mut ws, command("rec", "forward")).await;
    state_where(&mut ws, |v| v["pose"] == json!([2, 0, "E"])).await;
    send(&mut ws, control("stop_demo", "rec")).await;
    let saved = expect(&mut ws, "demo_saved").await;
    assert_eq!(saved["steps"], 2);
    assert_eq!(saved["truncated"], false);
    let st = expect(&mut ws, "state").await;
    assert_eq!(st["recording"], false);

    let demo = Demonstration::load(saved["path"].as_str().unwrap()).unwrap();
    assert_eq!(demo.k_stream.len(), 2);
    assert_eq!(demo.frames.len(), 3);
    assert!(!demo.meta.truncated);
    assert_eq!(wait_for_files(dir.path(), 1).await.len(), 1);

    send(&mut ws, control("stop_demo", "rec")).await;
    assert_eq!(expect(&mut ws, "error").await["reason"], "not recording");
}

#[tokio::test]
async fn disconnect_while_recording_keeps_a_truncated_demo() {
    let dir = tempfile::tempdir().unwrap();
    let addr = start(config(dir.path(), 50.0)).await;
    let mut ws = connect(addr).await;
    send(&mut ws, control("start_demo", "cut")).await;
    send(&mut ws, command("cut", "turn_left")).await;
    state_where(&mut ws, |v| v["pose"][2] == "N").await;
    ws.close(None).await.unwrap();
    drop(ws);

    let files = wait_for_files(dir.path(), 1).await;
    assert_eq!(files.len(), 1);
    let demo = Demonstration::load(&files[0]).unwrap();
    assert!(demo.meta.truncated);
    assert_eq!(demo.k_stream.len(), 1);
}

#[tokio::test]
async fn reset_while_recording_saves_a_truncated_demo() {
    let dir = tempfile::tempdir().unwrap();
    let addr = start(config(dir.path(), 50.0)).await;
    let mut ws = connect(addr).await;
    send(&mut ws, control("start_demo", "r")).await;
    send(&mut ws, command("r", "forward")).await;
    state_where(&mut ws, |v| v["pose"] == json!([1, 0, "E"])).await;
    send(&mut ws, control("reset", "r")).await;
    let saved = expect(&mut ws, "demo_saved").await;
    assert_eq!(saved["truncated"], true);
    let st = state_where(&mut ws, |v| v["pose"] == json!([0, 0, "E"])).await;
    assert_eq!(st["recording"], false);
}

#[tokio::test]
async fn spectators_cannot_write() {
    let dir = tempfile::tempdir().unwrap();
    let addr = start(config(dir.path(), 50.0)).await;
    let (mut owner, mut viewer) = (connect(addr).await, connect(addr).await);
    send(&mut owner, control("reset", "s")).await;
    expect(&mut owner, "state").await;

    send(&mut viewer, control("watch", "s")).await;
    expect(&mut viewer, "frame").await;
    expect(&mut viewer, "state").await;
    for msg in [command("s", "forward"), control("reset", "s"), control("start_demo", "s")] {
        send(&mut viewer, msg).await;
        assert_eq!(expect(&mut viewer, "error").await["reason"], "session s is read-only for this connection");
    }

    // The spectator still sees the owner's moves.
    send(&mut owner, command("s", "forward")).await;
    state_where(&mut viewer, |v| v["pose"] == json!([1, 0, "E"])).await;
}

#[tokio::test]
async fn command_spam_applies_at_most_one_atom_per_tick() {
    let dir = tempfile::tempdir().unwrap();
    let hz = 4.0;
    let addr = start(config(dir.path(), hz)).await;
    let mut ws = connect(addr).await;
    send(&mut ws, control("reset", "spam")).await;
    expect(&mut ws, "state").await;

    let began = Instant::now();
    for _ in 0..50 {
        send(&mut ws, command("spam", "turn_left")).await;
    }
    let window = Duration::from_millis(1300);
    let mut steps = Vec::new();
    while let Ok(Some(Ok(Message::Text(t)))) = timeout(window.saturating_sub(began.elapsed()), ws.next()).await {
        let v: Value = serde_json::from_str(&t).unwrap();
        if v["type"] == "frame" {
            steps.push(v["step"].as_u64().unwrap());
        }
    }
    let ticks = (began.elapsed().as_secs_f64() * hz).ceil() as usize + 1;
    assert!(!steps.is_empty());
    assert!(steps.len() <= ticks, "{} atoms in {ticks} ticks", steps.len());
    assert!(steps.windows(2).all(|w| w[1] == w[0] + 1), "{steps:?}");
}

#[tokio::test]
async fn a_stalled_client_does_not_block_others() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), 100.0);
    cfg.buffer = 4;
    let addr = start(cfg).await;
    let mut owner = connect(addr).await;
    send(&mut owner, control("reset", "busy")).await;
    expect(&mut owner, "state").await;
    let mut stalled = connect(addr).await;
    send(&mut stalled, control("watch", "busy")).await;

    let began = Instant::now();
    for i in 0..60 {
        send(&mut owner, command("busy", "turn_left")).await;
        let heading = ["N", "W", "S", "E"][i % 4];
        state_where(&mut owner, |v| v["pose"][2] == heading).await;
    }
    assert!(began.elapsed() < Duration::from_secs(10));
    drop(stalled);
}

#[tokio::test]
async fn busy_port_is_an_error() {
    let first = bind("127.0.0.1:0".parse().unwrap()).await.unwrap();
    let addr = first.local_addr().unwrap();
    assert!(bind(addr).await.is_err());
}

#[tokio::test]
async fn execute_runs_the_policy_to_the_victim() {
    let dir = tempfile::tempdir().unwrap();
    let mut w = corridor();
    let demo = record_scripted(&mut w, "corridor", ScriptedOptions::default()).unwrap();
    let model = train(&[demo], &TrainConfig::for_seq_len(1)).unwrap();
    let mut cfg = config(dir.path(), 100.0);
    cfg.model = Some(Arc::new(model));
    let addr = start(cfg).await;
    let mut ws = connect(addr).await;
    send(&mut ws, control("execute", "auto")).await;
    let ep = expect(&mut ws, "episode").await;
    assert_eq!(ep["session"], "auto");
    assert_eq!(ep["success"], true, "{ep}");
    assert_eq!(ep["collisions"], 0);

    send(&mut ws, control("reset", "auto")).await;
    state_where(&mut ws, |v| v["pose"] == json!([0, 0, "E"])).await;
}

#[tokio::test]
async fn execute_without_a_model_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let addr = start(config(dir.path(), 20.0)).await;
    let mut ws = connect(addr).await;
    send(&mut ws, control("execute", "x")).await;
    assert_eq!(expect(&mut ws, "error").await["reason"], "no model loaded");
}
