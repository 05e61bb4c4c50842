//! Motion layer: acceleration forecasts to trajectories.
//!
//! Velocities integrate with a left-endpoint rule,
//! `v_{t+i} = v_t + dt·Σ_{k<i} a_{t+k}`, and positions follow the
//! second-order Taylor step `p_{t+i} = p_{t+i−1} + v_{t+i−1}·dt + ½·a_{t+i−1}·dt²`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::data::AgentKind;
use crate::interaction::AccelerationForecast;
use crate::nn::{Tape, Var};

/// Pose and body-frame velocity of a vehicle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyFrameState {
    pub x: f64,
    pub y: f64,
    /// Heading in (−π, π].
    pub theta: f64,
    pub vx: f64,
    pub vy: f64,
    pub r: f64,
}

/// Wraps an angle into (−π, π].
pub fn normalize_angle(a: f64) -> f64 {
    let x = (a + PI).rem_euclid(2.0 * PI) - PI;
    if x <= -PI {
        x + 2.0 * PI
    } else {
        x
    }
}

impl BodyFrameState {
    /// Body-frame state from a global-frame velocity and heading.
    pub fn from_global(pos: [f64; 2], vel: [f64; 2], heading: f64, yaw_rate: f64) -> Self {
        let theta = normalize_angle(heading);
        let (s, c) = theta.sin_cos();
        Self {
            x: pos[0],
            y: pos[1],
            theta,
            vx: c * vel[0] + s * vel[1],
            vy: -s * vel[0] + c * vel[1],
            r: yaw_rate,
        }
    }
}

/// Bicycle-model rotation to global rates `(ẋ, ẏ, θ̇)`.
pub fn vdm_transform(state: &BodyFrameState) -> [f64; 3] {
    let (s, c) = state.theta.sin_cos();
    [state.vx * c - state.vy * s, state.vx * s + state.vy * c, state.r]
}

/// Mass-point model: body and global velocities coincide.
pub fn pdm_transform(vx: f64, vy: f64) -> [f64; 2] {
    [vx, vy]
}

/// Global velocity of an agent reading through its dynamic model.
pub fn global_velocity(kind: AgentKind, state: &BodyFrameState) -> [f64; 2] {
    match kind {
        AgentKind::Vehicle => {
            let g = vdm_transform(state);
            [g[0], g[1]]
        }
        AgentKind::Pedestrian => pdm_transform(state.vx, state.vy),
    }
}

/// Positions and velocities over `L` future steps for `N` agents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryForecast {
    /// `positions[i][n]` is agent `n` at step `t + i + 1`.
    pub positions: Vec<Vec<[f64; 2]>>,
    pub velocities: Vec<Vec<[f64; 2]>>,
}

impl TrajectoryForecast {
    pub fn horizon(&self) -> usize {
        self.positions.len()
    }

    pub fn num_agents(&self) -> usize {
        self.positions.first().map_or(0, Vec::len)
    }
}

/// `v_{t+i}` for `i = 1..=L`.
pub fn integrate_velocities(v_t: &[[f64; 2]], accel: &AccelerationForecast, dt: f64) -> Vec<Vec<[f64; 2]>> {
    let mut v = v_t.to_vec();
    accel
        .values
        .iter()
        .map(|step| {
            for (vn, an) in v.iter_mut().zip(step) {
                vn[0] += dt * an[0];
                vn[1] += dt * an[1];
            }
            v.clone()
        })
        .collect()
}

pub fn rollout(p_t: &[[f64; 2]], v_t: &[[f64; 2]], accel: &AccelerationForecast, dt: f64) -> TrajectoryForecast {
    let velocities = integrate_velocities(v_t, accel, dt);
    let mut p = p_t.to_vec();
    let mut positions = Vec::with_capacity(accel.horizon());
    for (i, step) in accel.values.iter().enumerate() {
        let v_prev = if i == 0 { v_t } else { &velocities[i - 1] };
        for n in 0..p.len() {
            for ax in 0..2 {
                p[n][ax] += v_prev[n][ax] * dt + 0.5 * step[n][ax] * dt * dt;
            }
        }
        positions.push(p.clone());
    }
    TrajectoryForecast { positions, velocities }
}

/// Rollout on the tape. `accel` is `[L, 2N]` with column `2n + axis`;
/// `p_t` and `v_t` are `[2N]` in the same column order. Returns
/// `(positions, velocities)`, both `[L, 2N]`.
pub fn rollout_tape(tape: &mut Tape, p_t: Var, v_t: Var, accel: Var, dt: f64) -> (Var, Var) {
    let l = tape.shape(accel)[0];
    let cum = tape.cumsum_rows(accel);
    let v0 = tape.broadcast_rows(v_t, l);
    let dv = tape.scale(cum, dt);
    let vel = tape.add(v0, dv);
    // velocity at the start of each step
    let excl = tape.sub(cum, accel);
    let dv_prev = tape.scale(excl, dt);
    let v_prev = tape.add(v0, dv_prev);
    let drift = tape.scale(v_prev, dt);
    let kick = tape.scale(accel, 0.5 * dt * dt);
    let step = tape.add(drift, kick);
    let disp = tape.cumsum_rows(step);
    let p0 = tape.broadcast_rows(p_t, l);
    let pos = tape.add(p0, disp);
    (pos, vel)
}
