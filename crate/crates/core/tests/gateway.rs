use std::time::{Duration, Instant};

use apple_core::apple::{
    DiscretePolicy, FeedbackDataset, FeedbackRecord, FeedbackSource, Policy, PolicyCheckpoint,
};
use apple_core::gateway::protocol::{ServerFrame, FRAME_SCAN_RAYS};
use apple_core::gateway::{
    open_run, run_episode, serve, train, DiscreteSelector, EpisodeConfig, Exploration, FixedParams, Outcome,
    ServeConfig, TrainConfig, TrainRun, DATASET_FILE,
};
use apple_core::nn::DEFAULT_LR;
use apple_core::oracle::{Feedback, Levels, OracleConfig};
use apple_core::planner::{ParameterLibrary, PlannerConfig};
use apple_core::rng::{rng_for, stream};
use apple_core::world::{generate_with, CaConfig, Cell, OccupancyGrid};

/// Straight corridor along +y, the default start heading.
fn corridor() -> OccupancyGrid {
    OccupancyGrid::empty(12, 40, 0.15, Cell::new(6, 3), Cell::new(6, 36)).unwrap()
}

fn cave() -> OccupancyGrid {
    let ca = CaConfig { size: 40, ..CaConfig::default() };
    generate_with(3, &ca).unwrap()
}

fn fresh(library: &ParameterLibrary, levels: u32) -> PolicyCheckpoint {
    let p = DiscretePolicy::new(library.len(), Levels::Discrete(levels), DEFAULT_LR, &mut rng_for(1, stream::NETWORK_INIT))
        .unwrap();
    PolicyCheckpoint::new(Policy::Discrete(p))
}

#[test]
fn corridor_time_near_closed_form_bound() {
    let g = corridor();
    let lib = ParameterLibrary::jackal();
    let cfg = EpisodeConfig {
        start_heading_jitter: 0.0,
        ..EpisodeConfig::default()
    };
    let (res, _) = run_episode(
        &g,
        &mut FixedParams::library_default(&lib),
        &cfg,
        &PlannerConfig::default(),
        &OracleConfig::default(),
        0,
    )
    .unwrap();
    assert_eq!(res.outcome, Outcome::Success);
    let (sx, sy) = g.cell_center(g.start());
    let (gx, gy) = g.cell_center(g.goal());
    let length = (gx - sx).hypot(gy - sy) - cfg.goal_tolerance;
    let bound = length / lib.default_params().max_vel_x;
    assert!(res.traversal_time >= bound - cfg.dt(), "{} < {bound}", res.traversal_time);
    assert!(res.traversal_time <= 1.2 * bound, "{} vs {bound}", res.traversal_time);
    let end = res.trajectory.last().unwrap();
    assert!((end.x - gx).hypot(end.y - gy) <= cfg.goal_tolerance);
}

#[test]
fn boxed_in_start_times_out_without_progress() {
    let base = OccupancyGrid::empty(30, 30, 0.15, Cell::new(8, 8), Cell::new(22, 22)).unwrap();
    let ring: Vec<Cell> = (5..=11)
        .flat_map(|x| (5..=11).map(move |y| Cell::new(x, y)))
        .filter(|c| c.x == 5 || c.x == 11 || c.y == 5 || c.y == 11)
        .collect();
    let g = base.with_obstacles(ring).unwrap();
    let lib = ParameterLibrary::jackal();
    let cfg = EpisodeConfig {
        timeout: 20.0,
        ..EpisodeConfig::default()
    };
    let (res, records) = run_episode(
        &g,
        &mut FixedParams::library_default(&lib),
        &cfg,
        &PlannerConfig::default(),
        &OracleConfig::default(),
        4,
    )
    .unwrap();
    assert_eq!(res.outcome, Outcome::Timeout);
    assert_eq!(res.traversal_time, 20.0);
    assert!(res.no_path);
    assert!(records.is_empty());
    let (sx, sy) = g.cell_center(g.start());
    assert!(res.trajectory.iter().all(|p| (p.x - sx).hypot(p.y - sy) < 1e-9));
}

#[test]
fn episodes_are_deterministic() {
    let g = cave();
    let lib = ParameterLibrary::jackal();
    let ck = fresh(&lib, 3);
    let Policy::Discrete(p) = &ck.policy else { unreachable!() };
    let cfg = EpisodeConfig {
        explore: true,
        timeout: 40.0,
        ..EpisodeConfig::default()
    };
    let run = || {
        let mut sel = DiscreteSelector {
            policy: p,
            library: &lib,
            exploration: Exploration::Epsilon,
            rng: rng_for(11, stream::EXPLORATION),
        };
        run_episode(&g, &mut sel, &cfg, &PlannerConfig::default(), &OracleConfig::default(), 11).unwrap()
    };
    let (a, ra) = run();
    let (b, rb) = run();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
    // Feedback conservation at 1 Hz.
    let expected = a.traversal_time.floor() as i64;
    assert!((ra.len() as i64 - expected).abs() <= 1, "{} vs {expected}", ra.len());
    // No record refers to a control tick after its own arrival.
    for r in &ra {
        let labelled = a.params_trace.iter().rfind(|(t, _)| *t <= r.timestamp).unwrap();
        assert_eq!(labelled.1, r.params);
    }
}

fn train_run<'a>(lib: &'a ParameterLibrary, budget: u64, out: Option<std::path::PathBuf>) -> TrainRun<'a> {
    TrainRun {
        library: lib,
        episode: EpisodeConfig {
            explore: true,
            timeout: 30.0,
            ..EpisodeConfig::default()
        },
        planner: PlannerConfig::default(),
        oracle: OracleConfig::default(),
        train: TrainConfig {
            feedback_budget: budget,
            warmup: 20,
            batch_size: 16,
            checkpoint_every: 1,
            ..TrainConfig::default()
        },
        seed: 5,
        out,
    }
}

#[test]
fn zero_budget_leaves_policy_unchanged() {
    let lib = ParameterLibrary::jackal();
    let ck = fresh(&lib, 3);
    let mut ds = FeedbackDataset::new(100);
    let (after, report) = train(&[cave()], ck.clone(), &mut ds, &train_run(&lib, 0, None)).unwrap();
    assert_eq!(report.gradient_steps, 0);
    assert_eq!(report.episodes, 0);
    let (Policy::Discrete(a), Policy::Discrete(b)) = (&after.policy, &ck.policy) else { unreachable!() };
    assert_eq!(a.net, b.net);
    assert!(ds.is_empty());
}

#[test]
fn resume_continues_counters() {
    let dir = tempfile::tempdir().unwrap();
    let lib = ParameterLibrary::jackal();
    let envs = [cave(), corridor()];

    let (ck, mut ds) = open_run(dir.path(), || Ok(fresh(&lib, 3)), 10_000).unwrap();
    let (first, r1) = train(&envs, ck, &mut ds, &train_run(&lib, 60, Some(dir.path().into()))).unwrap();
    drop(ds);
    assert_eq!(first.feedback_count, 60);
    assert!(r1.gradient_steps > 0);

    let (resumed, mut ds) = open_run(dir.path(), || unreachable!(), 10_000).unwrap();
    assert_eq!(resumed, first);
    assert_eq!(ds.len(), 60);
    let (second, _) = train(&envs, resumed, &mut ds, &train_run(&lib, 120, Some(dir.path().into()))).unwrap();
    drop(ds);
    assert_eq!(second.feedback_count, 120);
    assert!(second.global_step > first.global_step);
    assert!(second.episodes >= first.episodes);
    assert!(second.policy.train_steps() > first.policy.train_steps());
    let log = std::fs::read_to_string(dir.path().join(DATASET_FILE)).unwrap();
    let stamps: Vec<FeedbackRecord> = log.lines().map(|l| FeedbackRecord::from_log_line(l).unwrap()).collect();
    assert_eq!(stamps.len(), 120);
}

#[test]
fn serve_round_trip_with_one_bad_press() {
    let dir = tempfile::tempdir().unwrap();
    let lib = ParameterLibrary::jackal();
    let cfg = ServeConfig {
        episode: EpisodeConfig {
            timeout: 12.0,
            ..EpisodeConfig::human()
        },
        time_scale: 10.0,
        max_episodes: 1,
        seed: 3,
        ..ServeConfig::default()
    };
    let handle = serve(
        fresh(&lib, 2),
        lib.clone(),
        vec![cave()],
        PlannerConfig::default(),
        cfg.clone(),
        "127.0.0.1:0",
        dir.path().to_path_buf(),
    )
    .unwrap();
    let (mut ws, _) = tungstenite::connect(format!("ws://{}", handle.local_addr())).unwrap();

    let mut session = None;
    let mut last_t: Option<f64> = None;
    let mut pressed_at = None;
    let mut grid_seen = false;
    let deadline = Instant::now() + Duration::from_secs(60);
    while Instant::now() < deadline {
        let Ok(msg) = ws.read() else { break };
        let tungstenite::Message::Text(text) = msg else { continue };
        let frame: ServerFrame = serde_json::from_str(&text).unwrap();
        assert!(frame.is_finite());
        match frame {
            ServerFrame::Hello { session_id, levels, .. } => {
                assert_eq!(levels, 2);
                session = Some(session_id);
            }
            ServerFrame::Grid { text, .. } => {
                OccupancyGrid::from_text(&text).unwrap();
                grid_seen = true;
            }
            ServerFrame::State(s) => {
                assert_eq!(s.scan.len(), FRAME_SCAN_RAYS);
                if let Some(prev) = last_t {
                    assert!((s.t - prev - 0.1).abs() < 1e-9, "{prev} -> {}", s.t);
                }
                last_t = Some(s.t);
                // Press once in the middle of a window, two seconds in.
                if pressed_at.is_none() && s.t >= 2.2 {
                    let ev = serde_json::json!({
                        "type": "feedback",
                        "session_id": session.clone().unwrap(),
                        "client_ts": s.t,
                        "polarity": "bad",
                    });
                    ws.send(tungstenite::Message::text(ev.to_string())).unwrap();
                    pressed_at = Some(s.t);
                }
            }
            ServerFrame::Error { code, detail } => panic!("{code:?}: {detail}"),
        }
        if handle.is_finished() && last_t.is_some() {
            break;
        }
    }
    let pressed_at = pressed_at.expect("pressed during the episode");
    assert!(grid_seen);
    while !handle.is_finished() {
        std::thread::sleep(Duration::from_millis(20));
    }
    let stats = handle.stats();
    let ck = handle.join().unwrap();

    let log = std::fs::read_to_string(dir.path().join(DATASET_FILE)).unwrap();
    let records: Vec<FeedbackRecord> = log.lines().map(|l| FeedbackRecord::from_log_line(l).unwrap()).collect();
    assert_eq!(records.len() as u64, ck.feedback_count);
    let negative: Vec<&FeedbackRecord> = records.iter().filter(|r| r.source == FeedbackSource::Human).collect();
    assert_eq!(negative.len(), 1);
    assert_eq!(negative[0].feedback, Feedback::Level(0));
    // Closed at the end of the window holding the press.
    let window = (pressed_at * cfg.feedback_hz).floor() as u64;
    assert_eq!(negative[0].timestamp, (window + 1) * 5);
    for r in records.iter().filter(|r| r.source != FeedbackSource::Human) {
        assert_eq!(r.source, FeedbackSource::AutoPositive);
        assert_eq!(r.feedback, Feedback::Level(1));
    }
    assert_eq!(stats.negative, 1);
    assert_eq!(stats.duplicates, 0);
}
