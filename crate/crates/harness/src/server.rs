//! Realtime steering server: newline-delimited JSON over TCP.
//!
//! One stepper thread owns the simulation. An acceptor thread hands each new
//! connection to the stepper as a bounded outbound channel and starts a
//! reader thread that forwards raw command lines. Commands are drained and
//! applied between simulation steps; state frames are built after a step and
//! offered to every client with `try_send`, so a slow client loses frames
//! instead of stalling the stepper.

use std::collections::BTreeMap;
use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender, SyncSender, TrySendError};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use intentctl_core::sim::{HumanEvent, SimConfig, Simulation, TelemetryRecord, CSV_COLUMNS};
use intentctl_core::supervisor::Mode;
use log::{debug, info, warn};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::runner::write_trace;

/// Frames queued per client before new ones are dropped.
const CLIENT_QUEUE: usize = 256;

/// One line on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireMessage {
    /// Simulation time (s) for server messages; sender clock for commands.
    pub t: f64,
    pub kind: String,
    #[serde(default)]
    pub payload: Value,
}

impl WireMessage {
    pub fn new(t: f64, kind: &str, payload: Value) -> Self {
        Self {
            t,
            kind: kind.into(),
            payload,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("wire message serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectPayload {
    pub event: HumanEvent,
    /// Treat the event times as offsets from the current simulation time.
    #[serde(default)]
    pub relative: bool,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetParamPayload {
    /// `group.field`, e.g. `thresholds.a_ht`, or `speed`.
    pub name: String,
    pub value: Value,
}

/// A validated command.
#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    InjectEvent(InjectPayload),
    SetParam(SetParamPayload),
    Pause,
    Resume,
    Reset,
}

pub const COMMAND_KINDS: [&str; 5] = ["inject_event", "set_param", "pause", "resume", "reset"];

fn payload<T: DeserializeOwned>(kind: &str, v: Value) -> Result<T, String> {
    serde_json::from_value(v).map_err(|e| format!("{kind} payload: {e}"))
}

fn empty_payload(kind: &str, v: &Value) -> Result<(), String> {
    match v {
        Value::Null => Ok(()),
        Value::Object(m) if m.is_empty() => Ok(()),
        _ => Err(format!("{kind} takes no payload")),
    }
}

/// Parses one command line; the error text is sent back to the client.
pub fn parse_command(line: &str) -> Result<(f64, Command), String> {
    let msg: WireMessage = serde_json::from_str(line).map_err(|e| format!("malformed message: {e}"))?;
    if !msg.t.is_finite() {
        return Err("timestamp t must be finite".into());
    }
    let kind = msg.kind.as_str();
    let cmd = match kind {
        "inject_event" => Command::InjectEvent(payload(kind, msg.payload)?),
        "set_param" => Command::SetParam(payload(kind, msg.payload)?),
        "pause" => empty_payload(kind, &msg.payload).map(|_| Command::Pause)?,
        "resume" => empty_payload(kind, &msg.payload).map(|_| Command::Resume)?,
        "reset" => empty_payload(kind, &msg.payload).map(|_| Command::Reset)?,
        other => {
            return Err(format!(
                "unknown command kind `{other}`, expected one of {}",
                COMMAND_KINDS.join(", ")
            ))
        }
    };
    Ok((msg.t, cmd))
}

/// Replaces one field of a serializable parameter group, re-validating types.
fn patch<T: Serialize + DeserializeOwned>(current: &T, field: &str, value: Value) -> Result<T, String> {
    let mut v = serde_json::to_value(current).expect("parameters serialize");
    let obj = v.as_object_mut().expect("parameter groups are objects");
    if !obj.contains_key(field) {
        let known: Vec<&str> = obj.keys().map(String::as_str).collect();
        return Err(format!(
            "unknown parameter `{field}`, expected one of {}",
            known.join(", ")
        ));
    }
    obj.insert(field.into(), value);
    serde_json::from_value(v).map_err(|e| format!("{field}: {e}"))
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    /// Simulated seconds per wall-clock second.
    pub speed: f64,
    /// State frames per wall-clock second.
    pub broadcast_hz: f64,
    /// CSV written each time the run reaches its duration.
    pub trace: Option<PathBuf>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            speed: 1.0,
            broadcast_hz: 40.0,
            trace: None,
        }
    }
}

enum Inbound {
    Connect(u64, SyncSender<String>),
    Line(u64, String),
    Disconnect(u64),
}

/// Running server; dropping it without [`ServerHandle::shutdown`] leaves the
/// threads running until the process exits.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    stepper: JoinHandle<Vec<TelemetryRecord>>,
    acceptor: JoinHandle<()>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops all threads and returns the telemetry since the last reset.
    pub fn shutdown(self) -> Vec<TelemetryRecord> {
        self.stop.store(true, Ordering::SeqCst);
        let _ = self.acceptor.join();
        self.stepper.join().unwrap_or_default()
    }

    /// Blocks until the server stops on its own (never, in normal use).
    pub fn wait(self) -> Vec<TelemetryRecord> {
        let _ = self.acceptor.join();
        self.stepper.join().unwrap_or_default()
    }
}

/// Binds and starts serving `config`.
pub fn spawn(config: SimConfig, addr: impl ToSocketAddrs, options: ServeOptions) -> io::Result<ServerHandle> {
    if !(options.speed > 0.0 && options.speed.is_finite()) {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "speed must be positive"));
    }
    if !(options.broadcast_hz > 0.0 && options.broadcast_hz.is_finite()) {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            "broadcast rate must be positive",
        ));
    }
    let sim = Simulation::new(config).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
    let listener = TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    info!("serving on {addr}");
    let stop = Arc::new(AtomicBool::new(false));
    let (tx, rx) = mpsc::channel();
    let acceptor = {
        let stop = stop.clone();
        thread::Builder::new()
            .name("accept".into())
            .spawn(move || accept_loop(listener, tx, stop))?
    };
    let stepper = {
        let stop = stop.clone();
        thread::Builder::new()
            .name("stepper".into())
            .spawn(move || Stepper::new(sim, options).run(rx, stop))?
    };
    Ok(ServerHandle {
        addr,
        stop,
        stepper,
        acceptor,
    })
}

fn accept_loop(listener: TcpListener, inbound: Sender<Inbound>, stop: Arc<AtomicBool>) {
    let mut next_id = 0u64;
    let mut streams: Vec<TcpStream> = vec![];
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                debug!("client {next_id} connected from {peer}");
                if let Err(e) = start_client(next_id, &stream, &inbound) {
                    warn!("client {next_id}: {e}");
                    continue;
                }
                streams.push(stream);
                next_id += 1;
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(e) => {
                warn!("accept failed: {e}");
                thread::sleep(Duration::from_millis(50));
            }
        }
    }
    // Unblock the reader threads.
    for s in streams {
        let _ = s.shutdown(std::net::Shutdown::Both);
    }
}

fn start_client(id: u64, stream: &TcpStream, inbound: &Sender<Inbound>) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let (out_tx, out_rx) = mpsc::sync_channel::<String>(CLIENT_QUEUE);
    let mut writer = stream.try_clone()?;
    let reader = stream.try_clone()?;
    thread::Builder::new().name(format!("client-{id}-out")).spawn(move || {
        for line in out_rx {
            if writer
                .write_all(line.as_bytes())
                .and_then(|_| writer.write_all(b"\n"))
                .is_err()
            {
                break;
            }
        }
    })?;
    let inbound_lines = inbound.clone();
    thread::Builder::new().name(format!("client-{id}-in")).spawn(move || {
        for line in BufReader::new(reader).lines() {
            match line {
                Ok(l) if l.trim().is_empty() => continue,
                Ok(l) => {
                    if inbound_lines.send(Inbound::Line(id, l)).is_err() {
                        return;
                    }
                }
                Err(_) => break,
            }
        }
        let _ = inbound_lines.send(Inbound::Disconnect(id));
    })?;
    inbound
        .send(Inbound::Connect(id, out_tx))
        .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "stepper stopped"))
}

struct Stepper {
    sim: Simulation,
    options: ServeOptions,
    clients: BTreeMap<u64, SyncSender<String>>,
    records: Vec<TelemetryRecord>,
    paused: bool,
    failed: Option<String>,
    trace_written: bool,
    wall_origin: Instant,
    sim_origin: f64,
    dropped_frames: u64,
}

impl Stepper {
    fn new(sim: Simulation, options: ServeOptions) -> Self {
        Self {
            sim,
            options,
            clients: BTreeMap::new(),
            records: vec![],
            paused: false,
            failed: None,
            trace_written: false,
            wall_origin: Instant::now(),
            sim_origin: 0.0,
            dropped_frames: 0,
        }
    }

    fn rebase(&mut self) {
        self.wall_origin = Instant::now();
        self.sim_origin = self.sim.time();
    }

    fn finished(&self) -> bool {
        self.sim.is_finished() || self.failed.is_some()
    }

    fn run(mut self, inbound: Receiver<Inbound>, stop: Arc<AtomicBool>) -> Vec<TelemetryRecord> {
        let period = Duration::from_secs_f64(1.0 / self.options.broadcast_hz);
        let mut next_frame = Instant::now();
        self.rebase();
        while !stop.load(Ordering::SeqCst) {
            self.drain(&inbound);
            if !self.paused && !self.finished() {
                let target = self.sim_origin + self.wall_origin.elapsed().as_secs_f64() * self.options.speed;
                // Bounded batch so commands and frames keep flowing at high speed.
                let mut budget = 2000;
                while self.sim.time() < target && !self.finished() && budget > 0 {
                    self.step();
                    budget -= 1;
                    self.drain(&inbound);
                    if self.paused {
                        break;
                    }
                }
                if budget == 0 {
                    // Falling behind wall clock: do not accumulate a backlog.
                    self.rebase();
                }
            }
            if self.sim.is_finished() && !self.trace_written {
                self.write_trace();
            }
            let now = Instant::now();
            if now >= next_frame {
                self.broadcast_state();
                next_frame += period;
                if next_frame < now {
                    next_frame = now + period;
                }
            }
            thread::sleep(Duration::from_micros(500));
        }
        if self.dropped_frames > 0 {
            info!("{} state frames dropped for slow clients", self.dropped_frames);
        }
        self.records
    }

    fn step(&mut self) {
        match self.sim.step() {
            Ok(r) => self.records.push(r),
            Err(e) => {
                let msg: String = e.to_string();
                warn!("simulation stopped: {msg}");
                self.send_all(&WireMessage::new(self.sim.time(), "error", json!({ "message": msg })));
                self.failed = Some(msg);
            }
        }
    }

    fn write_trace(&mut self) {
        self.trace_written = true;
        if let Some(path) = &self.options.trace {
            match write_trace(path, &self.records) {
                Ok(()) => info!("wrote {} records to {}", self.records.len(), path.display()),
                Err(e) => warn!("writing {}: {e}", path.display()),
            }
        }
    }

    fn drain(&mut self, inbound: &Receiver<Inbound>) {
        while let Ok(msg) = inbound.try_recv() {
            match msg {
                Inbound::Connect(id, tx) => {
                    let hello = WireMessage::new(self.sim.time(), "hello", self.hello());
                    let _ = tx.try_send(hello.to_line());
                    self.clients.insert(id, tx);
                }
                Inbound::Disconnect(id) => {
                    debug!("client {id} disconnected");
                    self.clients.remove(&id);
                }
                Inbound::Line(id, line) => {
                    let reply = match parse_command(&line) {
                        Ok((client_t, cmd)) => {
                            let kind = command_kind(&cmd);
                            match self.apply(cmd) {
                                Ok(detail) => WireMessage::new(
                                    self.sim.time(),
                                    "ack",
                                    json!({ "command": kind, "client_t": client_t, "detail": detail }),
                                ),
                                Err(message) => WireMessage::new(
                                    self.sim.time(),
                                    "error",
                                    json!({ "command": kind, "client_t": client_t, "message": message }),
                                ),
                            }
                        }
                        Err(message) => WireMessage::new(self.sim.time(), "error", json!({ "message": message })),
                    };
                    self.send_to(id, &reply);
                }
            }
        }
    }

    fn hello(&self) -> Value {
        let c = self.sim.config();
        json!({
            "dt": c.dt,
            "duration": c.duration,
            "trajectory": c.trajectory.is_some(),
            "columns": CSV_COLUMNS,
            "modes": Mode::ALL.iter().map(|m| m.name()).collect::<Vec<_>>(),
            "commands": COMMAND_KINDS,
            "speed": self.options.speed,
        })
    }

    fn apply(&mut self, cmd: Command) -> Result<Value, String> {
        match cmd {
            Command::Pause => {
                self.paused = true;
                Ok(Value::Null)
            }
            Command::Resume => {
                self.paused = false;
                self.rebase();
                Ok(Value::Null)
            }
            Command::Reset => {
                self.sim.reset();
                self.records.clear();
                self.failed = None;
                self.trace_written = false;
                self.rebase();
                Ok(Value::Null)
            }
            Command::InjectEvent(p) => {
                let now = self.sim.time();
                let event = if p.relative { p.event.shifted(now) } else { p.event };
                if event.end() <= now {
                    return Err(format!("event ends at {} s, already past (t = {now} s)", event.end()));
                }
                let (start, end) = (event.start(), event.end());
                self.sim.inject(event).map_err(|e| e.to_string())?;
                Ok(json!({ "start": start, "end": end }))
            }
            Command::SetParam(p) => self.set_param(&p.name, p.value).map(|_| Value::Null),
        }
    }

    fn set_param(&mut self, name: &str, value: Value) -> Result<(), String> {
        if name == "speed" {
            let speed = value
                .as_f64()
                .filter(|v| *v > 0.0 && v.is_finite())
                .ok_or("speed must be a positive number")?;
            self.options.speed = speed;
            self.rebase();
            return Ok(());
        }
        let (group, field) = name
            .split_once('.')
            .ok_or_else(|| format!("parameter `{name}` must be group.field"))?;
        let c = self.sim.config().clone();
        match group {
            "gains" => {
                let g = patch(&c.gains, field, value)?;
                if !(g.k1_translational >= 0.0 && g.k1_rotational >= 0.0 && g.k2 >= 0.0) {
                    return Err("gains must be non-negative".into());
                }
                self.sim.set_gains(g);
            }
            "thresholds" => self
                .sim
                .set_thresholds(patch(&c.thresholds, field, value)?)
                .map_err(|e| e.to_string())?,
            "factors" => self
                .sim
                .set_factor_params(patch(&c.factors, field, value)?)
                .map_err(|e| e.to_string())?,
            "supervisor" => {
                let s = patch(&c.supervisor, field, value)?;
                let steps = [s.avoid_step, s.return_step];
                if !steps.iter().all(|v| *v >= 0.0 && v.is_finite()) {
                    return Err("supervisor steps must be non-negative".into());
                }
                self.sim.set_supervisor_params(s);
            }
            other => {
                return Err(format!(
                    "unknown parameter group `{other}`, expected gains, thresholds, factors, supervisor or speed"
                ))
            }
        }
        Ok(())
    }

    fn state_frame(&self) -> WireMessage {
        let record = self.records.last();
        WireMessage::new(
            record.map_or(self.sim.time(), |r| r.time),
            "state",
            json!({
                "record": record,
                "paused": self.paused,
                "finished": self.finished(),
                "speed": self.options.speed,
            }),
        )
    }

    fn broadcast_state(&mut self) {
        if self.clients.is_empty() {
            return;
        }
        let frame = self.state_frame();
        self.send_all(&frame);
    }

    fn send_all(&mut self, msg: &WireMessage) {
        let line = msg.to_line();
        let mut gone = vec![];
        for (id, tx) in &self.clients {
            match tx.try_send(line.clone()) {
                Ok(()) => {}
                Err(TrySendError::Full(_)) => self.dropped_frames += 1,
                Err(TrySendError::Disconnected(_)) => gone.push(*id),
            }
        }
        for id in gone {
            self.clients.remove(&id);
        }
    }

    fn send_to(&mut self, id: u64, msg: &WireMessage) {
        if let Some(tx) = self.clients.get(&id) {
            if let Err(TrySendError::Disconnected(_)) = tx.try_send(msg.to_line()) {
                self.clients.remove(&id);
            }
        }
    }
}

fn command_kind(cmd: &Command) -> &'static str {
    match cmd {
        Command::InjectEvent(_) => "inject_event",
        Command::SetParam(_) => "set_param",
        Command::Pause => "pause",
        Command::Resume => "resume",
        Command::Reset => "reset",
    }
}
