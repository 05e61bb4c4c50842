//! Synthetic highway scenes: a host and five neighbours on a straight
//! multi-lane road along +x, driven by a proportional car-following law
//! with optional braking and lane-change events.
//!
//! States advance with `p' = p + v·dt + ½·a·dt²`, `v' = v + a·dt`, and the
//! acceleration stored at a frame is the one applied over the following
//! step, so recorded tracks satisfy that recurrence exactly.

use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::types::{AgentFrame, AgentKind, AgentTrack, SceneWindow, FRAME_DT};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SynthMode {
    CarFollowing,
    /// Every agent accelerates forward at `accel` with no interaction.
    ConstantAcceleration { accel: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BehaviorConfig {
    pub mode: SynthMode,
    pub lanes: usize,
    pub lane_width: f64,
    pub agents: usize,
    pub past_frames: usize,
    pub future_frames: usize,
    pub warmup_frames: usize,
    pub dt: f64,
    /// Initial speed range, m/s.
    pub speed_range: (f64, f64),
    /// Desired speed = initial speed + offset drawn from this range.
    pub desired_offset: (f64, f64),
    /// Bumper-to-bumper initial gap range between same-lane vehicles, m.
    pub gap_range: (f64, f64),
    pub k_free: f64,
    pub k_gap: f64,
    pub k_rel: f64,
    pub min_gap: f64,
    pub time_headway: f64,
    pub accel_limit: f64,
    /// Probability that a scene contains one lane change.
    pub lane_change_prob: f64,
    pub lane_change_duration: f64,
    /// Probability that a scene contains one braking event.
    pub brake_prob: f64,
    /// Desired speed is multiplied by a factor drawn from this range.
    pub brake_factor: (f64, f64),
    /// Event start frames relative to the first recorded frame.
    pub event_start: (i64, i64),
}

impl Default for BehaviorConfig {
    fn default() -> Self {
        Self {
            mode: SynthMode::CarFollowing,
            lanes: 3,
            lane_width: 3.7,
            agents: 6,
            past_frames: 20,
            future_frames: 50,
            warmup_frames: 30,
            dt: FRAME_DT,
            speed_range: (20.0, 30.0),
            desired_offset: (-2.0, 2.0),
            gap_range: (15.0, 40.0),
            k_free: 0.5,
            k_gap: 0.3,
            k_rel: 0.6,
            min_gap: 2.0,
            time_headway: 1.0,
            accel_limit: 4.0,
            lane_change_prob: 0.3,
            lane_change_duration: 3.0,
            brake_prob: 0.6,
            brake_factor: (0.4, 0.75),
            event_start: (-10, 15),
        }
    }
}

impl BehaviorConfig {
    /// Free-flowing traffic with no events and identical speeds: every
    /// acceleration is zero.
    pub fn quiet(speed: f64) -> Self {
        Self {
            speed_range: (speed, speed),
            desired_offset: (0.0, 0.0),
            gap_range: (200.0, 300.0),
            lane_change_prob: 0.0,
            brake_prob: 0.0,
            ..Self::default()
        }
    }

    pub fn constant_acceleration(accel: f64) -> Self {
        Self {
            mode: SynthMode::ConstantAcceleration { accel },
            ..Self::default()
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

#[derive(Clone, Debug)]
struct Vehicle {
    pos: [f64; 2],
    vel: [f64; 2],
    desired: f64,
    width: f64,
    length: f64,
}

struct LaneChange {
    vehicle: usize,
    start: i64,
    /// +1 toward higher lane ids, −1 toward lower.
    direction: f64,
}

struct Brake {
    vehicle: usize,
    start: i64,
    factor: f64,
}

fn lane_of(y: f64, cfg: &BehaviorConfig) -> i32 {
    let k = (y / cfg.lane_width).round() as i64;
    k.clamp(0, cfg.lanes as i64 - 1) as i32 + 1
}

fn lane_center(lane: usize, cfg: &BehaviorConfig) -> f64 {
    lane as f64 * cfg.lane_width
}

/// Lays out vehicles lane by lane; the host (index 0) sits at x = 0 in the
/// middle lane.
fn place(rng: &mut ChaCha8Rng, cfg: &BehaviorConfig) -> Vec<Vehicle> {
    let host_lane = cfg.lanes / 2;
    let mut lanes: Vec<usize> = vec![host_lane];
    for _ in 1..cfg.agents {
        lanes.push(rng.gen_range(0..cfg.lanes));
    }
    let mut vehicles: Vec<Vehicle> = (0..cfg.agents)
        .map(|_| {
            let v0 = uniform(rng, cfg.speed_range);
            Vehicle {
                pos: [0.0, 0.0],
                vel: [v0, 0.0],
                desired: v0 + uniform(rng, cfg.desired_offset),
                width: uniform(rng, (1.7, 2.1)),
                length: uniform(rng, (4.0, 5.5)),
            }
        })
        .collect();
    for lane in 0..cfg.lanes {
        let members: Vec<usize> = (0..cfg.agents).filter(|&i| lanes[i] == lane).collect();
        if members.is_empty() {
            continue;
        }
        let anchor = if lane == host_lane { 0.0 } else { uniform(rng, (-20.0, 20.0)) };
        let (mut front, mut back) = (anchor, anchor);
        for (k, &i) in members.iter().enumerate() {
            let x = if k == 0 {
                anchor
            } else if rng.gen_bool(0.5) {
                front += uniform(rng, cfg.gap_range) + 5.0;
                front
            } else {
                back -= uniform(rng, cfg.gap_range) + 5.0;
                back
            };
            vehicles[i].pos = [x, lane_center(lane, cfg)];
        }
    }
    vehicles
}

fn longitudinal_accel(vehicles: &[Vehicle], i: usize, desired: f64, cfg: &BehaviorConfig) -> f64 {
    let me = &vehicles[i];
    let lane = lane_of(me.pos[1], cfg);
    let a_free = cfg.k_free * (desired - me.vel[0]);
    let leader = vehicles
        .iter()
        .enumerate()
        .filter(|&(j, o)| j != i && lane_of(o.pos[1], cfg) == lane && o.pos[0] > me.pos[0])
        .min_by(|a, b| a.1.pos[0].total_cmp(&b.1.pos[0]));
    let a = match leader {
        Some((_, l)) => {
            let gap = l.pos[0] - me.pos[0] - 0.5 * (l.length + me.length);
            let a_follow = cfg.k_gap * (gap - cfg.min_gap - cfg.time_headway * me.vel[0])
                + cfg.k_rel * (l.vel[0] - me.vel[0]);
            a_free.min(a_follow)
        }
        None => a_free,
    };
    a.clamp(-cfg.accel_limit, cfg.accel_limit)
}

/// Lateral acceleration of a sinusoidal lane change at `elapsed` seconds:
/// one full sine period over `duration` moves the vehicle by exactly one
/// lane width and ends with zero lateral velocity.
fn lane_change_accel(elapsed: f64, cfg: &BehaviorConfig) -> f64 {
    let t = cfg.lane_change_duration;
    if !(0.0..t).contains(&elapsed) {
        return 0.0;
    }
    let amp = 2.0 * PI * cfg.lane_width / (t * t);
    amp * (2.0 * PI * elapsed / t).sin()
}

fn controls(
    vehicles: &[Vehicle],
    frame: i64,
    brake: Option<&Brake>,
    change: Option<&LaneChange>,
    cfg: &BehaviorConfig,
) -> Vec<[f64; 2]> {
    (0..vehicles.len())
        .map(|i| match cfg.mode {
            SynthMode::ConstantAcceleration { accel } => [accel, 0.0],
            SynthMode::CarFollowing => {
                let mut desired = vehicles[i].desired;
                if let Some(b) = brake.filter(|b| b.vehicle == i && frame >= b.start) {
                    desired *= b.factor;
                }
                let ax = longitudinal_accel(vehicles, i, desired, cfg);
                let ay = change
                    .filter(|c| c.vehicle == i)
                    .map_or(0.0, |c| c.direction * lane_change_accel((frame - c.start) as f64 * cfg.dt, cfg));
                [ax, ay]
            }
        })
        .collect()
}

fn record(v: &Vehicle, a: [f64; 2], frame: i64, prev_heading: f64, cfg: &BehaviorConfig) -> AgentFrame {
    let speed2 = v.vel[0] * v.vel[0] + v.vel[1] * v.vel[1];
    let (heading, yaw_rate) = if speed2 > 1e-12 {
        (
            v.vel[1].atan2(v.vel[0]),
            (v.vel[0] * a[1] - v.vel[1] * a[0]) / speed2,
        )
    } else {
        (prev_heading, 0.0)
    };
    AgentFrame {
        frame,
        t: frame as f64 * cfg.dt,
        pos: v.pos,
        vel: v.vel,
        acc: a,
        heading,
        yaw_rate,
        width: v.width,
        length: v.length,
        lane: lane_of(v.pos[1], cfg),
    }
}

/// Simulates one scene's vehicles and returns full-window tracks in
/// generation order (host first). Agent ids are `scene·10 + k`.
pub fn synth_tracks(rng: &mut ChaCha8Rng, scene: usize, cfg: &BehaviorConfig) -> Vec<AgentTrack> {
    let mut vehicles = place(rng, cfg);
    let recorded = (cfg.past_frames + cfg.future_frames) as i64;
    let brake = (cfg.brake_prob > 0.0 && rng.gen_bool(cfg.brake_prob.min(1.0))).then(|| Brake {
        vehicle: rng.gen_range(0..cfg.agents),
        start: rng.gen_range(cfg.event_start.0..=cfg.event_start.1),
        factor: uniform(rng, cfg.brake_factor),
    });
    let change = (cfg.lane_change_prob > 0.0 && rng.gen_bool(cfg.lane_change_prob.min(1.0))).then(|| {
        let vehicle = rng.gen_range(1..cfg.agents);
        let lane = lane_of(vehicles[vehicle].pos[1], cfg);
        let direction = if lane <= 1 {
            1.0
        } else if lane as usize >= cfg.lanes {
            -1.0
        } else if rng.gen_bool(0.5) {
            1.0
        } else {
            -1.0
        };
        LaneChange {
            vehicle,
            start: rng.gen_range(cfg.event_start.0..=cfg.event_start.1),
            direction,
        }
    });

    let mut tracks: Vec<AgentTrack> = (0..cfg.agents)
        .map(|k| AgentTrack {
            agent_id: (scene * 10 + k) as i64,
            kind: AgentKind::Vehicle,
            frames: Vec::with_capacity(recorded as usize),
        })
        .collect();
    let mut headings = vec![0.0; cfg.agents];
    for frame in -(cfg.warmup_frames as i64)..recorded {
        let mut acc = controls(&vehicles, frame, brake.as_ref(), change.as_ref(), cfg);
        for (v, a) in vehicles.iter().zip(acc.iter_mut()) {
            // no reversing: stop exactly at zero forward speed
            if v.vel[0] + a[0] * cfg.dt < 0.0 {
                a[0] = -v.vel[0] / cfg.dt;
            }
        }
        if frame >= 0 {
            for (i, v) in vehicles.iter().enumerate() {
                let f = record(v, acc[i], frame, headings[i], cfg);
                headings[i] = f.heading;
                tracks[i].frames.push(f);
            }
        }
        for (v, a) in vehicles.iter_mut().zip(&acc) {
            for ((p, vel), a) in v.pos.iter_mut().zip(v.vel.iter_mut()).zip(a) {
                *p += *vel * cfg.dt + 0.5 * a * cfg.dt * cfg.dt;
                *vel += a * cfg.dt;
            }
        }
    }
    tracks
}

/// Generates `n` scenes deterministically from `seed`. Neighbour slots are
/// ordered by mean past distance to the host, ties by agent id.
pub fn synth_scenes(seed: u64, n: usize, cfg: &BehaviorConfig) -> Vec<SceneWindow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut tracks = synth_tracks(&mut rng, i, cfg);
            let others = tracks.split_off(1);
            let host = tracks.pop().expect("host");
            let past = cfg.past_frames;
            let mean_dist = |t: &AgentTrack| {
                (0..past)
                    .map(|k| {
                        let (a, b) = (host.frames[k].pos, t.frames[k].pos);
                        (a[0] - b[0]).hypot(a[1] - b[1])
                    })
                    .sum::<f64>()
                    / past as f64
            };
            let mut ranked: Vec<(f64, AgentTrack)> = others.into_iter().map(|t| (mean_dist(&t), t)).collect();
            ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.agent_id.cmp(&b.1.agent_id)));
            let mut agents = vec![host];
            agents.extend(ranked.into_iter().map(|r| r.1));
            SceneWindow::from_agents(format!("synth{seed}_{i}"), 0, agents, past, cfg.dt)
                .expect("generator produces consistent windows")
        })
        .collect()
}
