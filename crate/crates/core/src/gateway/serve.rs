use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, VecDeque};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};
use tungstenite::{Message, WebSocket};

use super::episode::{select_discrete, Episode, EpisodeConfig, Exploration, FeedbackMode, Outcome};
use super::protocol::{
    parse_client_frame, ClientFrame, EpisodeInfo, EpisodeStatus, ErrorCode, FeedbackEvent, ServerFrame, StateFrame,
    Theta, FRAME_SCAN_RAYS, PROTOCOL_VERSION,
};
use super::train::{gradient_step, CHECKPOINT_FILE, DATASET_FILE};
use super::GatewayError;
use crate::apple::{FeedbackDataset, FeedbackRecord, FeedbackSource, LearnError, ParamChoice, Policy, PolicyCheckpoint};
use crate::oracle::{Feedback, Levels, OracleConfig};
use crate::planner::{ParameterLibrary, PlannerConfig, PlannerParams, RobotState};
use crate::rng::{child_seed, rng_for, stream, SimRng};
use crate::world::OccupancyGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServeConfig {
    pub episode: EpisodeConfig,
    /// Feedback windows per second.
    pub feedback_hz: f64,
    /// Levels offered to the client; 2 is good/bad.
    pub levels: u32,
    /// Sim seconds per wall-clock second; 0 runs unthrottled.
    pub time_scale: f64,
    /// Stop after this many episodes; 0 runs until stopped.
    pub max_episodes: u64,
    pub warmup: usize,
    pub batch_size: usize,
    pub dataset_capacity: usize,
    /// Frames buffered per client before the oldest is dropped.
    pub client_queue: usize,
    pub seed: u64,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            episode: EpisodeConfig::human(),
            feedback_hz: 2.0,
            levels: 2,
            time_scale: 1.0,
            max_episodes: 0,
            warmup: 500,
            batch_size: 64,
            dataset_capacity: 1_000_000,
            client_queue: 64,
            seed: 0,
        }
    }
}

impl ServeConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        self.episode.validate()?;
        if self.episode.mode != FeedbackMode::Human {
            return Err(GatewayError::InvalidConfig("serve needs human mode".into()));
        }
        if !(self.feedback_hz > 0.0 && self.feedback_hz <= self.episode.sim_hz) {
            return Err(GatewayError::InvalidConfig(format!("feedback_hz {}", self.feedback_hz)));
        }
        if self.levels < 2 {
            return Err(GatewayError::InvalidConfig(format!("levels {} < 2", self.levels)));
        }
        if !(self.time_scale >= 0.0 && self.time_scale.is_finite()) {
            return Err(GatewayError::InvalidConfig(format!("time_scale {}", self.time_scale)));
        }
        if self.batch_size == 0 || self.client_queue == 0 || self.dataset_capacity == 0 {
            return Err(GatewayError::InvalidConfig(
                "batch_size, client_queue and dataset_capacity must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowStats {
    pub accepted: u64,
    /// Extra presses in a window that already had one.
    pub duplicates: u64,
    /// Events older than two windows.
    pub stale: u64,
    pub auto_positive: u64,
    pub negative: u64,
}

/// Collects feedback events into fixed windows of session time.
///
/// Window `w` covers `[w / hz, (w + 1) / hz)`. An event belongs to the
/// window of its `client_ts`, or to the oldest open window if that one has
/// already closed. Events more than two windows old are dropped. Several
/// events in one window collapse to the lowest level.
#[derive(Debug, Clone)]
pub struct FeedbackWindows {
    hz: f64,
    levels: u32,
    pending: BTreeMap<u64, u32>,
    /// Windows below this index are closed.
    next_close: u64,
    pub stats: WindowStats,
}

impl FeedbackWindows {
    pub fn new(hz: f64, levels: u32) -> Self {
        Self {
            hz,
            levels,
            pending: BTreeMap::new(),
            next_close: 0,
            stats: WindowStats::default(),
        }
    }

    pub fn window_of(&self, t: f64) -> u64 {
        (t.max(0.0) * self.hz + 1e-9).floor() as u64
    }

    /// Files an event received at session time `now`.
    pub fn submit(&mut self, ev: &FeedbackEvent, now: f64) -> Result<(), ServerFrame> {
        let level = ev.polarity.level(self.levels).ok_or_else(|| {
            ServerFrame::error(
                ErrorCode::InvalidPolarity,
                format!("polarity {:?} with {} levels", ev.polarity, self.levels),
            )
        })?;
        if now - ev.client_ts > 2.0 / self.hz {
            self.stats.stale += 1;
            return Err(ServerFrame::error(
                ErrorCode::StaleFeedback,
                format!("client_ts {} is more than two windows before {now}", ev.client_ts),
            ));
        }
        let w = self.window_of(ev.client_ts.min(now)).max(self.next_close);
        match self.pending.entry(w) {
            Entry::Occupied(mut e) => {
                *e.get_mut() = (*e.get()).min(level);
                self.stats.duplicates += 1;
            }
            Entry::Vacant(e) => {
                e.insert(level);
                self.stats.accepted += 1;
            }
        }
        Ok(())
    }

    /// Closes window `w` (and any older open ones); returns the pressed
    /// level, or `None` for an auto-positive window.
    pub fn close(&mut self, w: u64) -> Option<u32> {
        let level = self.pending.remove(&w);
        self.pending.retain(|&k, _| k > w);
        self.next_close = self.next_close.max(w + 1);
        match level {
            Some(_) => self.stats.negative += 1,
            None => self.stats.auto_positive += 1,
        }
        level
    }

    /// Record for a closed window: the pressed level from a human, or the
    /// top level as auto-positive.
    pub fn feedback_for(&self, pressed: Option<u32>) -> (Feedback, FeedbackSource) {
        match pressed {
            Some(l) => (Feedback::Level(l), FeedbackSource::Human),
            None => (Feedback::Level(self.levels - 1), FeedbackSource::AutoPositive),
        }
    }
}

/// Control ticks between checkpoints of a live session.
const SAVE_EVERY: u64 = 120;

enum TrainerMsg {
    Record(FeedbackRecord),
    ControlTick,
}

/// Frames waiting for one client; the oldest is dropped when full.
type ClientQueue = Arc<Mutex<VecDeque<String>>>;

struct Shared {
    stop: AtomicBool,
    clients: Mutex<Vec<ClientQueue>>,
    /// Newest trained policy, swapped in by the control loop.
    snapshot: Mutex<Option<Arc<Policy>>>,
    /// Grid frame of the running episode, sent to new clients.
    grid_frame: Mutex<Option<String>>,
    stats: Mutex<WindowStats>,
    session_id: String,
}

impl Shared {
    fn broadcast(&self, frame: &ServerFrame, cap: usize) {
        let text = frame.to_json();
        for q in self.clients.lock().expect("clients lock").iter() {
            let mut q = q.lock().expect("queue lock");
            if q.len() >= cap {
                q.pop_front();
            }
            q.push_back(text.clone());
        }
    }
}

/// A running service.
pub struct ServeHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    sim: Option<JoinHandle<Result<(), GatewayError>>>,
    trainer: Option<JoinHandle<Result<PolicyCheckpoint, GatewayError>>>,
    net: Option<JoinHandle<()>>,
}

impl ServeHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn session_id(&self) -> &str {
        &self.shared.session_id
    }

    pub fn stats(&self) -> WindowStats {
        *self.shared.stats.lock().expect("stats lock")
    }

    pub fn stop(&self) {
        self.shared.stop.store(true, Ordering::SeqCst);
    }

    pub fn is_finished(&self) -> bool {
        self.sim.as_ref().is_none_or(|h| h.is_finished())
    }

    /// Waits for the control loop to end (stopped or out of episodes) and
    /// returns the final checkpoint, also written to the output directory.
    pub fn join(mut self) -> Result<PolicyCheckpoint, GatewayError> {
        let sim = self.sim.take().expect("joined once").join();
        self.stop();
        let ck = self.trainer.take().expect("joined once").join();
        if let Some(n) = self.net.take() {
            let _ = n.join();
        }
        sim.map_err(|_| GatewayError::Io("control loop panicked".into()))??;
        ck.map_err(|_| GatewayError::Io("trainer panicked".into()))?
    }
}

/// Starts the live-feedback service on `addr` (port 0 picks a free port).
///
/// Three threads: the control loop runs episodes over `envs` at the sim
/// rate and closes feedback windows; the trainer owns the dataset and the
/// policy and takes one gradient step per control tick; the network thread
/// accepts websocket clients, streams frames and forwards feedback. The
/// control loop only ever waits on its own clock.
pub fn serve(
    ck: PolicyCheckpoint,
    library: ParameterLibrary,
    envs: Vec<OccupancyGrid>,
    planner: PlannerConfig,
    cfg: ServeConfig,
    addr: &str,
    out: PathBuf,
) -> Result<ServeHandle, GatewayError> {
    cfg.validate()?;
    if envs.is_empty() {
        return Err(GatewayError::InvalidConfig("no environments".into()));
    }
    match &ck.policy {
        Policy::Discrete(p) if p.levels() != Levels::Discrete(cfg.levels) => {
            return Err(GatewayError::InvalidConfig(format!(
                "policy predicts {} levels, service offers {}",
                p.levels(),
                cfg.levels
            )))
        }
        Policy::Discrete(p) if p.library_size() != library.len() => {
            return Err(GatewayError::InvalidConfig("policy does not match the library".into()))
        }
        _ => {}
    }
    std::fs::create_dir_all(&out)?;
    let dataset = FeedbackDataset::new(cfg.dataset_capacity).with_appending_log(&out.join(DATASET_FILE))?;

    let listener = TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let local = listener.local_addr()?;
    let shared = Arc::new(Shared {
        stop: AtomicBool::new(false),
        clients: Mutex::new(Vec::new()),
        snapshot: Mutex::new(None),
        grid_frame: Mutex::new(None),
        stats: Mutex::new(WindowStats::default()),
        session_id: format!("{:016x}", child_seed(cfg.seed, 0x5e55)),
    });
    let (event_tx, event_rx) = mpsc::channel::<(FeedbackEvent, Sender<ServerFrame>)>();
    let (train_tx, train_rx) = mpsc::channel::<TrainerMsg>();

    let policy = Arc::new(ck.policy.clone());
    let net = {
        let shared = shared.clone();
        let cfg = cfg.clone();
        std::thread::spawn(move || accept_loop(listener, shared, cfg, event_tx))
    };
    let trainer = {
        let shared = shared.clone();
        let cfg = cfg.clone();
        let path = out.join(CHECKPOINT_FILE);
        std::thread::spawn(move || trainer_loop(ck, dataset, train_rx, shared, cfg, path))
    };
    let sim = {
        let shared = shared.clone();
        std::thread::spawn(move || control_loop(policy, library, envs, planner, cfg, shared, event_rx, train_tx))
    };
    info!("serving on ws://{local}");
    Ok(ServeHandle {
        addr: local,
        shared,
        sim: Some(sim),
        trainer: Some(trainer),
        net: Some(net),
    })
}

#[allow(clippy::too_many_arguments)]
fn control_loop(
    mut policy: Arc<Policy>,
    library: ParameterLibrary,
    envs: Vec<OccupancyGrid>,
    planner: PlannerConfig,
    cfg: ServeConfig,
    shared: Arc<Shared>,
    events: Receiver<(FeedbackEvent, Sender<ServerFrame>)>,
    trainer: Sender<TrainerMsg>,
) -> Result<(), GatewayError> {
    let oracle = OracleConfig::default();
    let dt = cfg.episode.dt();
    let window_ticks = cfg.episode.ticks(1.0 / cfg.feedback_hz);
    let mut windows = FeedbackWindows::new(cfg.feedback_hz, cfg.levels);
    let mut session_tick: u64 = 0;
    let started = Instant::now();
    let mut episode_id = 0u64;
    let result = loop {
        if shared.stop.load(Ordering::SeqCst) || (cfg.max_episodes > 0 && episode_id >= cfg.max_episodes) {
            break Ok(());
        }
        let grid = &envs[(episode_id % envs.len() as u64) as usize];
        let seed = child_seed(cfg.seed, episode_id);
        let mut rng = rng_for(seed, stream::EXPLORATION);
        let mut ep = Episode::new(grid, &cfg.episode, &planner, &oracle, seed)?;
        let grid_frame = ServerFrame::Grid {
            episode: episode_id,
            text: grid.to_text(),
        }
        .to_json();
        *shared.grid_frame.lock().expect("grid lock") = Some(grid_frame.clone());
        for q in shared.clients.lock().expect("clients lock").iter() {
            q.lock().expect("queue lock").push_back(grid_frame.clone());
        }

        let mut status = EpisodeStatus::Running;
        while !shared.stop.load(Ordering::SeqCst) {
            while let Ok((ev, reply)) = events.try_recv() {
                let now = session_tick as f64 * dt;
                let res = if ev.session_id != shared.session_id {
                    Err(ServerFrame::error(ErrorCode::UnknownSession, format!("session {:?}", ev.session_id)))
                } else {
                    windows.submit(&ev, now)
                };
                if let Err(frame) = res {
                    let _ = reply.send(frame);
                }
            }
            if session_tick > 0 && session_tick.is_multiple_of(window_ticks) {
                let w = session_tick / window_ticks - 1;
                let pressed = windows.close(w);
                if let Some((_, state, choice)) = ep.labelled_state().cloned() {
                    let (feedback, source) = windows.feedback_for(pressed);
                    ep.count_feedback();
                    let _ = trainer.send(TrainerMsg::Record(FeedbackRecord {
                        state,
                        params: choice,
                        feedback,
                        timestamp: session_tick,
                        source,
                    }));
                }
                *shared.stats.lock().expect("stats lock") = windows.stats;
            }
            if ep.is_done() {
                break;
            }
            if ep.is_control_tick() {
                if let Some(p) = shared.snapshot.lock().expect("snapshot lock").take() {
                    policy = p;
                }
            }
            let report = {
                let policy = policy.clone();
                let mut sel = |s: &RobotState| human_choice(&policy, &library, s, &cfg.episode, &mut rng);
                ep.step(&mut sel)?
            };
            if report.control.is_some() {
                let _ = trainer.send(TrainerMsg::ControlTick);
            }
            session_tick += 1;
            if ep.is_done() {
                status = match ep.outcome() {
                    Outcome::Success => EpisodeStatus::Success,
                    Outcome::Collision => EpisodeStatus::Collision,
                    Outcome::Timeout => EpisodeStatus::Timeout,
                };
            }
            let frame = state_frame(&mut ep, session_tick as f64 * dt, episode_id, status)?;
            shared.broadcast(&frame, cfg.client_queue);
            if cfg.time_scale > 0.0 {
                let due = started + Duration::from_secs_f64(session_tick as f64 * dt / cfg.time_scale);
                let now = Instant::now();
                if due > now {
                    std::thread::sleep(due - now);
                }
            }
        }
        let res = ep.into_result();
        info!("episode {episode_id} {:?} in {:.1}s", res.outcome, res.traversal_time);
        episode_id += 1;
    };
    shared.stop.store(true, Ordering::SeqCst);
    result
}

fn human_choice(
    policy: &Policy,
    library: &ParameterLibrary,
    state: &RobotState,
    cfg: &EpisodeConfig,
    rng: &mut SimRng,
) -> Result<(ParamChoice, PlannerParams), LearnError> {
    match policy {
        Policy::Discrete(p) => {
            let mode = if cfg.explore {
                Exploration::Uniform(cfg.random_explore_prob)
            } else {
                Exploration::Greedy
            };
            let i = select_discrete(p, library, state, mode, rng)?;
            Ok((ParamChoice::Index(i), library.entries()[i]))
        }
        Policy::Continuous(p) => {
            let a = p.sample(state, !cfg.explore, rng)?;
            Ok((ParamChoice::Values(a.params), a.params))
        }
    }
}

fn state_frame(ep: &mut Episode, t: f64, id: u64, status: EpisodeStatus) -> Result<ServerFrame, GatewayError> {
    let (scan, _) = ep.observe()?;
    let pose = ep.pose();
    let theta = match ep.params() {
        Some((ParamChoice::Index(i), _)) => Theta::Index { index: *i },
        Some((ParamChoice::Values(_), p)) => Theta::Values(*p),
        None => Theta::Index { index: 0 },
    };
    Ok(ServerFrame::State(StateFrame {
        t,
        pose: [pose.x, pose.y, pose.heading],
        scan: scan.decimate(FRAME_SCAN_RAYS),
        theta,
        episode: EpisodeInfo {
            id,
            status,
            elapsed: ep.elapsed(),
        },
    }))
}

fn trainer_loop(
    mut ck: PolicyCheckpoint,
    mut dataset: FeedbackDataset,
    rx: Receiver<TrainerMsg>,
    shared: Arc<Shared>,
    cfg: ServeConfig,
    path: PathBuf,
) -> Result<PolicyCheckpoint, GatewayError> {
    let mut batch_rng = rng_for(cfg.seed, stream::BATCH);
    let mut noise_rng = rng_for(cfg.seed, stream::ACTOR_NOISE);
    loop {
        match rx.recv_timeout(Duration::from_millis(50)) {
            Ok(TrainerMsg::Record(r)) => {
                dataset.append(r)?;
                ck.feedback_count += 1;
            }
            Ok(TrainerMsg::ControlTick) => {
                ck.global_step += 1;
                if dataset.len() >= cfg.warmup.max(1) {
                    let batch = dataset.sample(cfg.batch_size, &mut batch_rng);
                    gradient_step(&mut ck.policy, &batch, &mut noise_rng)?;
                    *shared.snapshot.lock().expect("snapshot lock") = Some(Arc::new(ck.policy.clone()));
                }
                if ck.global_step.is_multiple_of(SAVE_EVERY) {
                    dataset.flush()?;
                    ck.save(&path)?;
                }
            }
            Err(mpsc::RecvTimeoutError::Timeout) => {
                if shared.stop.load(Ordering::SeqCst) {
                    continue;
                }
            }
            Err(mpsc::RecvTimeoutError::Disconnected) => break,
        }
    }
    dataset.flush()?;
    ck.save(&path)?;
    Ok(ck)
}

fn accept_loop(
    listener: TcpListener,
    shared: Arc<Shared>,
    cfg: ServeConfig,
    events: Sender<(FeedbackEvent, Sender<ServerFrame>)>,
) {
    let mut conns = Vec::new();
    while !shared.stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                debug!("client {peer}");
                let shared = shared.clone();
                let cfg = cfg.clone();
                let events = events.clone();
                conns.push(std::thread::spawn(move || {
                    if let Err(e) = client_loop(stream, shared, cfg, events) {
                        debug!("client {peer}: {e}");
                    }
                }));
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(10)),
            Err(e) => {
                warn!("accept: {e}");
                std::thread::sleep(Duration::from_millis(10));
            }
        }
    }
    for c in conns {
        let _ = c.join();
    }
}

fn client_loop(
    stream: TcpStream,
    shared: Arc<Shared>,
    cfg: ServeConfig,
    events: Sender<(FeedbackEvent, Sender<ServerFrame>)>,
) -> Result<(), GatewayError> {
    stream.set_nonblocking(false)?;
    let mut ws = tungstenite::accept(stream).map_err(|e| GatewayError::Protocol(e.to_string()))?;
    ws.get_ref().set_read_timeout(Some(Duration::from_millis(5)))?;
    let queue: ClientQueue = Arc::new(Mutex::new(VecDeque::new()));
    let hello = ServerFrame::Hello {
        version: PROTOCOL_VERSION,
        session_id: shared.session_id.clone(),
        levels: cfg.levels,
        sim_hz: cfg.episode.sim_hz,
        feedback_hz: cfg.feedback_hz,
    };
    {
        let mut q = queue.lock().expect("queue lock");
        q.push_back(hello.to_json());
        if let Some(g) = shared.grid_frame.lock().expect("grid lock").clone() {
            q.push_back(g);
        }
    }
    shared.clients.lock().expect("clients lock").push(queue.clone());
    let result = pump(&mut ws, &queue, &shared, &events);
    shared
        .clients
        .lock()
        .expect("clients lock")
        .retain(|q| !Arc::ptr_eq(q, &queue));
    let _ = ws.close(None);
    let _ = ws.flush();
    result
}

fn pump(
    ws: &mut WebSocket<TcpStream>,
    queue: &ClientQueue,
    shared: &Shared,
    events: &Sender<(FeedbackEvent, Sender<ServerFrame>)>,
) -> Result<(), GatewayError> {
    let (reply_tx, reply_rx) = mpsc::channel::<ServerFrame>();
    let io = |e: tungstenite::Error| GatewayError::Protocol(e.to_string());
    loop {
        let out: Vec<String> = queue.lock().expect("queue lock").drain(..).collect();
        for text in out {
            ws.send(Message::text(text)).map_err(io)?;
        }
        while let Ok(frame) = reply_rx.try_recv() {
            ws.send(Message::text(frame.to_json())).map_err(io)?;
        }
        if shared.stop.load(Ordering::SeqCst) {
            return Ok(());
        }
        match ws.read() {
            Ok(Message::Text(text)) => match parse_client_frame(&text) {
                Ok(ClientFrame::Feedback(ev)) => {
                    if events.send((ev, reply_tx.clone())).is_err() {
                        return Ok(());
                    }
                }
                Err(frame) => ws.send(Message::text(frame.to_json())).map_err(io)?,
            },
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(io(e)),
        }
    }
}
