use std::time::{Duration, Instant};

use futures_util::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tbc_core::scenario::{builtin, run_scenario, with_recorded_pilot, ScenarioConfig, TraceSet};
use tbcsim::serve::{self, ServeOptions, ServerHandle};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

const OPEN_ROOM: &str = r#"
name = "open_room"
duration = 600.0
[world]
center = [0.0, 0.0, 3.0]
half_extents = [10.0, 10.0, 3.0]
[[agents]]
id = 0
position = [0.0, 0.0, 3.0]
[[agents]]
id = 1
position = [5.0, 5.0, 3.0]
"#;

fn room() -> ScenarioConfig {
    ScenarioConfig::from_toml_str(OPEN_ROOM).unwrap()
}

fn opts() -> ServeOptions {
    ServeOptions { port: 0, ..ServeOptions::default() }
}

async fn connect(h: &ServerHandle) -> Ws {
    let (ws, _) = tokio_tungstenite::connect_async(format!("ws://{}", h.local_addr)).await.unwrap();
    ws
}

async fn next_json(ws: &mut Ws) -> Value {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(5), ws.next()).await.expect("frame timeout");
        if let Some(Ok(Message::Text(t))) = msg {
            return serde_json::from_str(&t).unwrap();
        }
    }
}

/// Skips state frames until a frame of the given type arrives.
async fn next_of(ws: &mut Ws, kind: &str) -> Value {
    loop {
        let v = next_json(ws).await;
        if v["type"] == kind {
            return v;
        }
    }
}

fn cmd(agent: u32, vx: f64, vy: f64) -> Message {
    Message::text(json!({"type": "cmd", "agent": agent, "vx": vx, "vy": vy, "vz": 0.0, "yaw_rate": 0.0, "ts": 0}).to_string())
}

#[tokio::test(flavor = "multi_thread")]
async fn world_frame_arrives_first_then_state() {
    let h = serve::start(room(), opts()).await.unwrap();
    let mut ws = connect(&h).await;
    let w = next_json(&mut ws).await;
    assert_eq!(w["type"], "world");
    assert_eq!(w["pilot_agent"], 0);
    assert_eq!(w["v_cmd_max"], 4.0);
    let s = next_of(&mut ws, "state").await;
    assert_eq!(s["agents"].as_array().unwrap().len(), 2);
    h.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn bad_frames_get_error_replies() {
    let h = serve::start(room(), opts()).await.unwrap();
    let mut ws = connect(&h).await;
    next_of(&mut ws, "world").await;
    for (frame, needle) in [
        (Message::text(r#"{"type":"hello"}"#), "unknown message type"),
        (Message::text("{not json"), "malformed"),
        (cmd(9, 1.0, 0.0), "unknown agent 9"),
        (cmd(1, 1.0, 0.0), "not pilot-controlled"),
    ] {
        ws.send(frame).await.unwrap();
        let e = next_of(&mut ws, "error").await;
        assert!(e["message"].as_str().unwrap().contains(needle), "{e}");
    }
    // The session survives bad frames.
    next_of(&mut ws, "state").await;
    h.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn command_shows_up_in_velocity_and_is_clamped() {
    let dir = tempfile::tempdir().unwrap();
    let h = serve::start(room(), ServeOptions { record: Some(dir.path().to_path_buf()), ..opts() }).await.unwrap();
    let mut ws = connect(&h).await;
    next_of(&mut ws, "world").await;
    next_of(&mut ws, "state").await;

    let sent = Instant::now();
    let mut reflected = None;
    let mut last_send = sent - Duration::from_secs(1);
    while sent.elapsed() < Duration::from_secs(2) {
        if last_send.elapsed() >= Duration::from_millis(33) {
            ws.send(cmd(0, 0.0, 10.0)).await.unwrap();
            last_send = Instant::now();
        }
        let s = next_of(&mut ws, "state").await;
        // Any clear departure from hover along the commanded axis counts.
        if reflected.is_none() && s["agents"][0]["v"][1].as_f64().unwrap() > 1e-3 {
            reflected = Some(sent.elapsed());
        }
    }
    let outcome = h.shutdown().await.unwrap();
    assert!(outcome.record_error.is_none());
    let latency = reflected.expect("command never reflected");
    println!("command reflected after {latency:?}");
    assert!(latency <= Duration::from_millis(100), "latency {latency:?}");

    let rec = TraceSet::read_dir(dir.path()).unwrap();
    let max_cmd = rec.commands.iter().filter(|c| c.agent_id == 0).map(|c| c.vx.hypot(c.vy).hypot(c.vz)).fold(0.0, f64::max);
    assert!((max_cmd - 4.0).abs() < 1e-12, "{max_cmd}");
    // The filter caps cruise speed well below 4 m/s with the default gains
    // and a 2 s horizon, so only the direction of travel is checked here.
    let last = rec.agent_rows(0).last().unwrap();
    assert!(last.vy > 0.3 && last.py > 0.3, "{last:?}");
}

#[tokio::test(flavor = "multi_thread")]
async fn spectators_receive_identical_frames() {
    let h = serve::start(room(), opts()).await.unwrap();
    let mut a = connect(&h).await;
    let mut b = connect(&h).await;
    next_of(&mut a, "world").await;
    next_of(&mut b, "world").await;
    let mut fa = Vec::new();
    let mut fb = Vec::new();
    for _ in 0..10 {
        fa.push(next_of(&mut a, "state").await);
        fb.push(next_of(&mut b, "state").await);
    }
    h.shutdown().await.unwrap();
    // Both streams start at the first frame published after both joined.
    let t0 = fa[0]["t"].as_f64().unwrap().max(fb[0]["t"].as_f64().unwrap());
    let ta: Vec<&Value> = fa.iter().filter(|f| f["t"].as_f64().unwrap() >= t0).collect();
    let tb: Vec<&Value> = fb.iter().filter(|f| f["t"].as_f64().unwrap() >= t0).collect();
    let n = ta.len().min(tb.len());
    assert!(n >= 5);
    assert_eq!(ta[..n], tb[..n]);
}

#[tokio::test(flavor = "multi_thread")]
async fn empty_session_records_headers_only() {
    let dir = tempfile::tempdir().unwrap();
    let h = serve::start(room(), ServeOptions { record: Some(dir.path().to_path_buf()), max_ticks: Some(0), ..opts() })
        .await
        .unwrap();
    let outcome = h.wait().await.unwrap();
    assert_eq!(outcome.ticks, 0);
    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1);
    assert!(trace.starts_with("t,agent_id,px"));
    let rec = TraceSet::read_dir(dir.path()).unwrap();
    assert!(rec.rows.is_empty() && rec.commands.is_empty());
}

#[tokio::test(flavor = "multi_thread")]
async fn recorded_session_matches_frames_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = builtin("evade_sphere", &[]).unwrap();
    let period = cfg.filter.period;
    let h = serve::start(cfg, ServeOptions { record: Some(dir.path().to_path_buf()), max_ticks: Some(150), ..opts() })
        .await
        .unwrap();
    let mut ws = connect(&h).await;
    next_of(&mut ws, "world").await;
    let mut frames = Vec::new();
    for k in 0..30 {
        if k % 3 == 0 {
            ws.send(cmd(0, 1.5, 0.5 * (k as f64 * 0.2).sin())).await.unwrap();
        }
        match tokio::time::timeout(Duration::from_millis(500), next_of(&mut ws, "state")).await {
            Ok(f) => frames.push(f),
            Err(_) => break,
        }
    }
    let outcome = h.wait().await.unwrap();
    assert_eq!(outcome.ticks, 150);

    let rec = TraceSet::read_dir(dir.path()).unwrap();
    assert_eq!(rec.rows.len(), 150);
    // A frame at time t carries the filter output of the period ending at t.
    let mut matched = 0;
    for f in &frames {
        let t = f["t"].as_f64().unwrap();
        if let Some(row) = rec.rows.iter().find(|r| ((r.t + period) - t).abs() < 1e-9) {
            assert!((row.lambda - f["agents"][0]["lambda"].as_f64().unwrap()).abs() <= 1e-9);
            assert!((row.h_i - f["agents"][0]["h_i"].as_f64().unwrap()).abs() <= 1e-9);
            matched += 1;
        }
    }
    assert!(matched >= 10, "only {matched} frames matched");

    let replay = run_scenario(&with_recorded_pilot(&rec.scenario, &rec.commands, 0)).unwrap();
    assert_eq!(replay.rows.len(), rec.rows.len());
    for (a, b) in replay.rows.iter().zip(&rec.rows) {
        assert!((a.h_i - b.h_i).abs() <= 1e-9 && (a.lambda - b.lambda).abs() <= 1e-9 && (a.h_world - b.h_world).abs() <= 1e-9);
    }
}
