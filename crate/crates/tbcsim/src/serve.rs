//! Real-time server.
//!
//! A dedicated thread owns the simulation and ticks it on a wall-clock
//! schedule. Network tasks talk to it only through channels: client
//! commands are queued and drained once per tick, and the latest state is
//! published to every client from a broadcast channel at a fixed rate.

use std::fs::File;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use anyhow::Context;
use futures_util::{SinkExt, StreamExt};
use log::{debug, info, warn};
use tbc_core::protocol::{parse_client, AgentFrame, ClientCommand, ClientMessage, ProtocolError, ServerMessage};
use tbc_core::scenario::trace::{COMMANDS_FILE, SCENARIO_FILE, TRACE_COLUMNS, TRACE_FILE};
use tbc_core::scenario::{CommandHold, ScenarioConfig, Simulation, TickRecord};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{broadcast, mpsc, watch};
use tokio_tungstenite::tungstenite::Message;

/// Commands older than this fall back to hover (s of simulated time).
pub const COMMAND_HOLD: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub bind: IpAddr,
    pub port: u16,
    pub realtime_factor: f64,
    pub pilot_agent: Option<u32>,
    pub record: Option<PathBuf>,
    pub publish_hz: f64,
    /// Stop after this many control periods.
    pub max_ticks: Option<u64>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            bind: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: 8700,
            realtime_factor: 1.0,
            pilot_agent: Some(0),
            record: None,
            publish_hz: 30.0,
            max_ticks: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServeOutcome {
    pub ticks: u64,
    pub sim_time: f64,
    /// Set when recording stopped early because of a disk error.
    pub record_error: Option<String>,
    /// Wall-clock interval between consecutive ticks (s).
    pub tick_intervals: Vec<f64>,
}

struct Inbound {
    cmd: ClientCommand,
    reply: mpsc::UnboundedSender<String>,
}

#[derive(Debug, Clone, PartialEq)]
struct Snapshot {
    tick: u64,
    t: f64,
    agents: Vec<AgentFrame>,
}

pub struct ServerHandle {
    pub local_addr: SocketAddr,
    stop: Arc<AtomicBool>,
    sim_thread: thread::JoinHandle<ServeOutcome>,
    tasks: Vec<tokio::task::JoinHandle<()>>,
}

impl ServerHandle {
    /// Stops the tick loop and network tasks and returns the session outcome.
    pub async fn shutdown(self) -> anyhow::Result<ServeOutcome> {
        self.stop.store(true, Ordering::SeqCst);
        self.wait().await
    }

    /// Waits for the tick loop to end on its own (`max_ticks`) or after
    /// [`ServerHandle::shutdown`].
    pub async fn wait(self) -> anyhow::Result<ServeOutcome> {
        let stop = self.stop.clone();
        let sim_thread = self.sim_thread;
        let outcome = tokio::task::spawn_blocking(move || sim_thread.join())
            .await
            .context("joining tick loop")?
            .map_err(|_| anyhow::anyhow!("tick loop panicked"))?;
        stop.store(true, Ordering::SeqCst);
        for t in self.tasks {
            t.abort();
        }
        Ok(outcome)
    }

    /// Flag that stops the tick loop when set.
    pub fn stop_signal(&self) -> Arc<AtomicBool> {
        self.stop.clone()
    }
}

/// Binds the port and starts serving. Returns once the listener is up.
pub async fn start(cfg: ScenarioConfig, opts: ServeOptions) -> anyhow::Result<ServerHandle> {
    anyhow::ensure!(opts.realtime_factor > 0.0 && opts.realtime_factor.is_finite(), "realtime factor must be > 0");
    anyhow::ensure!(opts.publish_hz > 0.0 && opts.publish_hz.is_finite(), "publish rate must be > 0");
    let sim = Simulation::new(cfg.clone())?;
    let pilot_idx = match opts.pilot_agent {
        Some(id) => Some(sim.agent_index(id).with_context(|| format!("pilot agent {id} is not in the scenario"))?),
        None => None,
    };
    let v_cmd_max = pilot_idx.map_or(0.0, |i| cfg.agents[i].v_cmd_max);
    let world_msg = ServerMessage::world(sim.world(), v_cmd_max, opts.pilot_agent).to_json();

    let listener = TcpListener::bind((opts.bind, opts.port)).await.with_context(|| format!("binding port {}", opts.port))?;
    let local_addr = listener.local_addr()?;
    info!("serving {} on ws://{local_addr}", cfg.name);

    let stop = Arc::new(AtomicBool::new(false));
    let (cmd_tx, cmd_rx) = mpsc::unbounded_channel::<Inbound>();
    let (snap_tx, snap_rx) = watch::channel(snapshot(&sim, 0));
    let (frame_tx, _) = broadcast::channel::<Arc<str>>(64);

    let sim_thread = {
        let stop = stop.clone();
        let opts = opts.clone();
        thread::Builder::new()
            .name("tick-loop".into())
            .spawn(move || tick_loop(sim, pilot_idx, opts, cmd_rx, snap_tx, stop))?
    };

    let publisher = tokio::spawn(publish_loop(snap_rx, frame_tx.clone(), opts.publish_hz));
    let acceptor = tokio::spawn(accept_loop(listener, cmd_tx, frame_tx, world_msg));
    Ok(ServerHandle { local_addr, stop, sim_thread, tasks: vec![publisher, acceptor] })
}

fn snapshot(sim: &Simulation, tick: u64) -> Snapshot {
    Snapshot { tick, t: sim.time(), agents: sim.agents().iter().map(AgentFrame::from_agent).collect() }
}

fn tick_loop(
    mut sim: Simulation,
    pilot_idx: Option<usize>,
    opts: ServeOptions,
    mut commands: mpsc::UnboundedReceiver<Inbound>,
    snapshots: watch::Sender<Snapshot>,
    stop: Arc<AtomicBool>,
) -> ServeOutcome {
    let period = Duration::from_secs_f64(sim.filter_config().period / opts.realtime_factor);
    let pilot_id = pilot_idx.map(|i| sim.agents()[i].id);
    let mut hold = CommandHold::new(COMMAND_HOLD);
    let mut recorder = opts.record.as_deref().and_then(|dir| match Recorder::create(dir, sim.config()) {
        Ok(r) => Some(r),
        Err(e) => {
            warn!("recording disabled: {e:#}");
            None
        }
    });
    let mut record_error = None;
    let mut tick_intervals = Vec::new();
    let start = Instant::now();
    let mut last_tick: Option<Instant> = None;

    while !stop.load(Ordering::SeqCst) && opts.max_ticks.is_none_or(|m| sim.tick_index() < m) {
        let due = start + period.mul_f64(sim.tick_index() as f64);
        let now = Instant::now();
        if due > now {
            thread::sleep(due - now);
        }
        let now = Instant::now();
        if let Some(prev) = last_tick.replace(now) {
            tick_intervals.push((now - prev).as_secs_f64());
        }

        let t = sim.time();
        while let Ok(Inbound { cmd, reply }) = commands.try_recv() {
            let err = if sim.agent_index(cmd.agent).is_none() {
                Some(ProtocolError::UnknownAgent(cmd.agent))
            } else if Some(cmd.agent) != pilot_id {
                Some(ProtocolError::NotPilotAgent(cmd.agent))
            } else {
                hold.receive(t, cmd.command());
                None
            };
            if let Some(e) = err {
                debug!("rejected command: {e}");
                let _ = reply.send(ServerMessage::error(e).to_json());
            }
        }

        let live = pilot_idx.map(|i| (i, hold.command(t)));
        let rec = sim.step(live);
        if let Some(r) = recorder.as_mut() {
            if let Err(e) = r.write(&rec) {
                warn!("recording stopped: {e:#}");
                record_error = Some(format!("{e:#}"));
                recorder = None;
            }
        }
        let _ = snapshots.send(snapshot(&sim, rec.tick + 1));
    }

    if let Some(r) = recorder {
        if let Err(e) = r.finish() {
            warn!("recording incomplete: {e:#}");
            record_error = Some(format!("{e:#}"));
        }
    }
    ServeOutcome { ticks: sim.tick_index(), sim_time: sim.time(), record_error, tick_intervals }
}

async fn publish_loop(mut snaps: watch::Receiver<Snapshot>, frames: broadcast::Sender<Arc<str>>, hz: f64) {
    let mut interval = tokio::time::interval(Duration::from_secs_f64(1.0 / hz));
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
    let mut last_tick = None;
    loop {
        interval.tick().await;
        let snap = snaps.borrow_and_update().clone();
        if last_tick == Some(snap.tick) {
            continue;
        }
        last_tick = Some(snap.tick);
        let msg = ServerMessage::State { t: snap.t, agents: snap.agents }.to_json();
        // No receivers is fine.
        let _ = frames.send(msg.into());
    }
}

async fn accept_loop(
    listener: TcpListener,
    commands: mpsc::UnboundedSender<Inbound>,
    frames: broadcast::Sender<Arc<str>>,
    world_msg: String,
) {
    loop {
        match listener.accept().await {
            Ok((stream, peer)) => {
                let commands = commands.clone();
                let frames = frames.subscribe();
                let world_msg = world_msg.clone();
                tokio::spawn(async move {
                    if let Err(e) = client_session(stream, commands, frames, world_msg).await {
                        debug!("client {peer} closed: {e:#}");
                    }
                });
            }
            Err(e) => warn!("accept failed: {e}"),
        }
    }
}

async fn client_session(
    stream: TcpStream,
    commands: mpsc::UnboundedSender<Inbound>,
    mut frames: broadcast::Receiver<Arc<str>>,
    world_msg: String,
) -> anyhow::Result<()> {
    let ws = tokio_tungstenite::accept_async(stream).await?;
    let (mut tx, mut rx) = ws.split();
    let (reply_tx, mut reply_rx) = mpsc::unbounded_channel::<String>();
    tx.send(Message::text(world_msg)).await?;

    loop {
        tokio::select! {
            frame = frames.recv() => match frame {
                Ok(f) => tx.send(Message::text(f.to_string())).await?,
                Err(broadcast::error::RecvError::Lagged(n)) => debug!("client lagged {n} frames"),
                Err(broadcast::error::RecvError::Closed) => return Ok(()),
            },
            Some(reply) = reply_rx.recv() => tx.send(Message::text(reply)).await?,
            msg = rx.next() => match msg {
                None => return Ok(()),
                Some(Err(e)) => return Err(e.into()),
                Some(Ok(Message::Text(text))) => match parse_client(&text) {
                    Ok(ClientMessage::Command(cmd)) => {
                        if commands.send(Inbound { cmd, reply: reply_tx.clone() }).is_err() {
                            return Ok(());
                        }
                    }
                    Ok(ClientMessage::Unknown(kind)) => {
                        tx.send(Message::text(ServerMessage::error(ProtocolError::UnknownType(kind)).to_json())).await?;
                    }
                    Err(e) => {
                        warn!("dropping frame: {e}");
                        tx.send(Message::text(ServerMessage::error(e).to_json())).await?;
                    }
                },
                Some(Ok(Message::Close(_))) => return Ok(()),
                Some(Ok(_)) => {}
            },
        }
    }
}

/// Streams a served session to the standard trace files.
struct Recorder {
    trace: csv::Writer<File>,
    commands: csv::Writer<File>,
}

impl Recorder {
    fn create(dir: &Path, cfg: &ScenarioConfig) -> anyhow::Result<Self> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(SCENARIO_FILE), cfg.to_toml_string())?;
        let mut trace = csv::WriterBuilder::new().has_headers(false).from_path(dir.join(TRACE_FILE))?;
        trace.write_record(TRACE_COLUMNS)?;
        trace.flush()?;
        let mut commands = csv::WriterBuilder::new().has_headers(false).from_path(dir.join(COMMANDS_FILE))?;
        commands.write_record(["tick", "t", "agent_id", "vx", "vy", "vz", "yaw_rate"])?;
        commands.flush()?;
        Ok(Self { trace, commands })
    }

    fn write(&mut self, rec: &TickRecord) -> anyhow::Result<()> {
        for r in &rec.rows {
            self.trace.serialize(r)?;
        }
        for c in &rec.commands {
            self.commands.serialize(c)?;
        }
        Ok(())
    }

    fn finish(mut self) -> anyhow::Result<()> {
        self.trace.flush()?;
        self.commands.flush()?;
        Ok(())
    }
}
