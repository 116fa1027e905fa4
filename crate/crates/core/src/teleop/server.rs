//! Blocking teleoperation server: one thread runs the rig in real time, one
//! thread per connection speaks WebSocket (or serves static files for plain HTTP).

use std::io::{ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{debug, info, warn};
use tungstenite::{Message, WebSocket};

use super::{haptic_intensity, TeleopConfig, TeleopSession, WireMessage, PROTOCOL_VERSION};
use crate::control::{StiffnessMode, TargetSlot};
use crate::error::{Error, Result};
use crate::rig::Rig;
use crate::sim::Observation;

/// Called after every control period with the rig and the aborted flag.
pub type TickHook = Box<dyn FnMut(&Rig, bool) -> Result<()> + Send>;

pub struct ServeOptions {
    pub bind: String,
    pub static_dir: Option<PathBuf>,
    /// Stop the simulation after this much sim time (s).
    pub duration: Option<f64>,
    /// Pace the simulation to wall-clock time.
    pub realtime: bool,
}

struct Shared {
    config: TeleopConfig,
    slots: Vec<TargetSlot>,
    modes: Vec<(StiffnessMode, StiffnessMode)>,
    claimed: Mutex<Vec<bool>>,
    /// Clutch and mode per arm, mirrored from the live sessions for state messages.
    status: Mutex<Vec<(bool, StiffnessMode)>>,
    snapshot: RwLock<Arc<Observation>>,
    aborted: AtomicBool,
    stop: AtomicBool,
    started: Instant,
}

pub struct ServerHandle {
    pub addr: SocketAddr,
    shared: Arc<Shared>,
    sim: Option<JoinHandle<Result<Rig>>>,
    accept: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn aborted(&self) -> bool {
        self.shared.aborted.load(Ordering::SeqCst)
    }

    pub fn sim_time(&self) -> f64 {
        self.shared.snapshot.read().map(|s| s.time).unwrap_or(0.0)
    }

    pub fn is_finished(&self) -> bool {
        self.sim.as_ref().is_none_or(|h| h.is_finished())
    }

    /// Stops all threads and hands back the rig.
    pub fn shutdown(mut self) -> Result<Rig> {
        self.shared.stop.store(true, Ordering::SeqCst);
        // Wake the accept loop.
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        match self.sim.take() {
            Some(h) => h
                .join()
                .map_err(|_| Error::Numerical("simulation thread panicked".into()))?,
            None => Err(Error::config("server already shut down")),
        }
    }
}

/// Starts serving; returns once the listener is bound.
pub fn serve(rig: Rig, options: ServeOptions, config: TeleopConfig, mut hook: Option<TickHook>) -> Result<ServerHandle> {
    config.validate()?;
    let listener = TcpListener::bind(&options.bind)?;
    let addr = listener.local_addr()?;
    let modes = match &rig.world.task {
        Some(t) => t.mode_pairs.clone(),
        None => vec![(StiffnessMode::Mid, StiffnessMode::Low); rig.world.arms.len()],
    };
    let shared = Arc::new(Shared {
        config,
        slots: rig.slots.clone(),
        status: Mutex::new(modes.iter().map(|m| (false, m.0)).collect()),
        claimed: Mutex::new(vec![false; rig.world.arms.len()]),
        modes,
        snapshot: RwLock::new(Arc::new(rig.observation().clone())),
        aborted: AtomicBool::new(false),
        stop: AtomicBool::new(false),
        started: Instant::now(),
    });
    info!("teleop server listening on {addr}");

    let sim_shared = Arc::clone(&shared);
    let duration = options.duration;
    let realtime = options.realtime;
    let sim = thread::spawn(move || -> Result<Rig> {
        let mut rig = rig;
        let period = Duration::from_secs_f64(rig.period());
        let mut next = Instant::now();
        while !sim_shared.stop.load(Ordering::SeqCst) {
            let obs = rig.tick()?.clone();
            if let Ok(mut s) = sim_shared.snapshot.write() {
                *s = Arc::new(obs);
            }
            if let Some(h) = hook.as_mut() {
                h(&rig, sim_shared.aborted.load(Ordering::SeqCst))?;
            }
            if duration.is_some_and(|d| rig.world.time >= d - 1e-9) {
                break;
            }
            if realtime {
                next += period;
                let now = Instant::now();
                if next > now {
                    thread::sleep(next - now);
                } else {
                    next = now;
                }
            }
        }
        Ok(rig)
    });

    let acc_shared = Arc::clone(&shared);
    let static_dir = options.static_dir.clone();
    let accept = thread::spawn(move || {
        for stream in listener.incoming() {
            if acc_shared.stop.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = stream else { continue };
            let shared = Arc::clone(&acc_shared);
            let dir = static_dir.clone();
            thread::spawn(move || {
                if let Err(e) = handle_connection(stream, &shared, dir.as_deref()) {
                    debug!("connection ended: {e}");
                }
            });
        }
    });

    Ok(ServerHandle {
        addr,
        shared,
        sim: Some(sim),
        accept: Some(accept),
    })
}

fn peek_request(stream: &TcpStream) -> Result<String> {
    let mut buf = [0u8; 4096];
    let deadline = Instant::now() + Duration::from_secs(2);
    loop {
        let n = stream.peek(&mut buf)?;
        let text = String::from_utf8_lossy(&buf[..n]).to_string();
        if text.contains("\r\n\r\n") || n == buf.len() {
            return Ok(text);
        }
        if n == 0 && Instant::now() > deadline {
            return Err(Error::protocol("http", "connection closed before request"));
        }
        if Instant::now() > deadline {
            return Ok(text);
        }
        thread::sleep(Duration::from_millis(2));
    }
}

fn handle_connection(stream: TcpStream, shared: &Shared, static_dir: Option<&Path>) -> Result<()> {
    let head = peek_request(&stream)?;
    let upgrade = head
        .lines()
        .any(|l| l.to_ascii_lowercase().starts_with("upgrade:") && l.to_ascii_lowercase().contains("websocket"));
    if upgrade {
        let ws = tungstenite::accept(stream).map_err(|e| Error::protocol("handshake", e.to_string()))?;
        run_websocket(ws, shared)
    } else {
        serve_static(stream, &head, static_dir)
    }
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js") | Some("mjs") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        Some("wasm") => "application/wasm",
        _ => "application/octet-stream",
    }
}

fn serve_static(mut stream: TcpStream, head: &str, dir: Option<&Path>) -> Result<()> {
    // Drain the request we peeked at.
    let mut sink = vec![0u8; head.len()];
    stream.read_exact(&mut sink)?;
    let path = head
        .lines()
        .next()
        .and_then(|l| {
            let mut parts = l.split_whitespace();
            (parts.next() == Some("GET")).then(|| parts.next()).flatten()
        })
        .map(|p| p.split('?').next().unwrap_or("/").to_string());
    let file = match (path, dir) {
        (Some(p), Some(dir)) if !p.split('/').any(|seg| seg == "..") => {
            let rel = p.trim_start_matches('/');
            let rel = if rel.is_empty() { "index.html" } else { rel };
            Some(dir.join(rel))
        }
        _ => None,
    };
    let response = match file.as_ref().and_then(|f| std::fs::read(f).ok().map(|b| (f, b))) {
        Some((f, body)) => {
            let mut r = format!(
                "HTTP/1.1 200 OK\r\nContent-Type: {}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                content_type(f),
                body.len()
            )
            .into_bytes();
            r.extend_from_slice(&body);
            r
        }
        None => b"HTTP/1.1 404 Not Found\r\nContent-Length: 9\r\nConnection: close\r\n\r\nnot found".to_vec(),
    };
    stream.write_all(&response)?;
    Ok(())
}

fn send(ws: &mut WebSocket<TcpStream>, msg: &WireMessage) -> Result<()> {
    ws.send(Message::Text(msg.to_json()))
        .map_err(|e| Error::protocol("io", e.to_string()))
}

fn close_with(ws: &mut WebSocket<TcpStream>, e: &Error) {
    let _ = send(ws, &WireMessage::error(e));
    let _ = ws.close(None);
    let _ = ws.flush();
}

fn state_message(shared: &Shared, arm: usize) -> WireMessage {
    let snap = shared
        .snapshot
        .read()
        .map(|s| Arc::clone(&s))
        .expect("snapshot lock poisoned");
    let a = &snap.arms[arm];
    let (clutch, mode) = shared.status.lock().map(|s| s[arm]).unwrap_or((false, StiffnessMode::Mid));
    let q = a.ee_pose.orientation;
    WireMessage::State {
        t: snap.time,
        ee_pos: [a.ee_pose.position.x, a.ee_pose.position.y, a.ee_pose.position.z],
        ee_quat: [q.w, q.i, q.j, q.k],
        wrench: a.wrench.to_array(),
        gripper: a.gripper,
        mode: mode.label().to_string(),
        haptic: haptic_intensity(&a.wrench, shared.config.haptic_max_force),
        clutch,
    }
}

fn arm_index(name: &str, arms: usize) -> Option<usize> {
    match (name, arms) {
        ("left" | "right", 1) => Some(0),
        ("left", _) => Some(0),
        ("right", _) => Some(1),
        _ => None,
    }
}

fn read_text(ws: &mut WebSocket<TcpStream>) -> Result<Option<String>> {
    match ws.read() {
        Ok(Message::Text(t)) => Ok(Some(t.to_string())),
        Ok(Message::Close(_)) => Err(Error::protocol("closed", "client closed the connection")),
        Ok(_) => Ok(None),
        Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => Ok(None),
        Err(e) => Err(Error::protocol("io", e.to_string())),
    }
}

fn run_websocket(mut ws: WebSocket<TcpStream>, shared: &Shared) -> Result<()> {
    ws.get_ref().set_read_timeout(Some(Duration::from_millis(5)))?;
    let hello_deadline = Instant::now() + Duration::from_secs(5);
    let arm = loop {
        if Instant::now() > hello_deadline {
            let e = Error::protocol("hello", "no hello received");
            close_with(&mut ws, &e);
            return Err(e);
        }
        let Some(text) = read_text(&mut ws)? else { continue };
        let parsed = WireMessage::parse(&text).and_then(|m| match m {
            WireMessage::Hello { arm, protocol } => {
                if protocol != PROTOCOL_VERSION {
                    return Err(Error::protocol(
                        "protocol",
                        format!("protocol {protocol} unsupported (expected {PROTOCOL_VERSION})"),
                    ));
                }
                let n = shared.slots.len();
                arm_index(&arm, n).ok_or_else(|| Error::protocol("arm", format!("unknown arm '{arm}'")))
            }
            _ => Err(Error::protocol("hello", "first message must be hello")),
        });
        match parsed {
            Ok(i) => break i,
            Err(e) => {
                close_with(&mut ws, &e);
                return Err(e);
            }
        }
    };
    {
        let mut claimed = shared.claimed.lock().map_err(|_| Error::protocol("internal", "lock"))?;
        if claimed[arm] {
            drop(claimed);
            let e = Error::protocol("arm_taken", "arm already has a client");
            close_with(&mut ws, &e);
            return Err(e);
        }
        claimed[arm] = true;
    }
    info!("client attached to arm {arm}");
    let result = session_loop(&mut ws, shared, arm);
    if let Ok(mut c) = shared.claimed.lock() {
        c[arm] = false;
    }
    if let Err(e) = &result {
        if !matches!(e, Error::Protocol { code, .. } if code == "closed") {
            warn!("arm {arm} session error: {e}");
            close_with(&mut ws, e);
        }
    }
    // Targets stay frozen in the controller; the episode is marked aborted.
    shared.aborted.store(true, Ordering::SeqCst);
    result
}

fn session_loop(ws: &mut WebSocket<TcpStream>, shared: &Shared, arm: usize) -> Result<()> {
    let mut session = TeleopSession::new(arm, shared.modes[arm], shared.config.motion_scale)?;
    let state_every = Duration::from_secs_f64(1.0 / shared.config.state_rate);
    let mut next_state = Instant::now();
    let mut min_latency: Option<i64> = None;
    loop {
        if shared.stop.load(Ordering::SeqCst) {
            let _ = ws.close(None);
            return Ok(());
        }
        if Instant::now() >= next_state {
            send(ws, &state_message(shared, arm))?;
            next_state += state_every;
        }
        let Some(text) = read_text(ws)? else { continue };
        let msg = WireMessage::parse(&text)?;
        let Some((seq, t_ms)) = msg.seq() else {
            return Err(Error::protocol("unexpected", "only input, clutch and mode_toggle are accepted"));
        };
        session.check_seq(seq)?;
        let now_ms = shared.started.elapsed().as_millis() as i64;
        let latency = now_ms - t_ms as i64;
        let base = *min_latency.get_or_insert(latency);
        min_latency = Some(base.min(latency));
        if latency - base > shared.config.stale_input_ms as i64 {
            debug!("ignoring stale input seq {seq}");
            continue;
        }
        let ee = {
            let snap = shared.snapshot.read().map_err(|_| Error::protocol("internal", "lock"))?;
            snap.arms[arm].ee_pose
        };
        if let Some(target) = session.apply(&msg, ee)? {
            shared.slots[arm].update(target)?;
        }
        if let Ok(mut s) = shared.status.lock() {
            s[arm] = (session.clutch, session.mode());
        }
    }
}
