//! The full forecaster: interaction layer, motion layer and filter layer
//! wired over one scene window.
//!
//! With past length `h` and observation horizon `L'`, the filter runs at
//! the last `L' + 1` past frames `t0..=h−1`. It starts at `t0 − 1` from a
//! constant-velocity extrapolation of the sensor state; at each `t` the
//! prediction uses the acceleration forecast made at `t − 1` as control
//! and the update uses the motion-layer trajectory from the forecast made
//! at `t` as observation. The posterior at `h − 1` is the prediction of
//! the scene's future.

use serde::{Deserialize, Serialize};

use crate::data::{DataError, SceneWindow};
use crate::filter::{
    forecast_gather_indices, predict_cov_tape, predict_mean_tape, update_tape, FilterEstimate, NoiseConfig, NoiseModel,
    TapeEstimate,
};
use crate::interaction::{build_features, InteractionConfig, InteractionFeatures, InteractionNet, Standardizer, TeacherForcing};
use crate::motion::{global_velocity, rollout_tape, BodyFrameState};
use crate::nn::{init_params, LstmVars, NnError, ParamSpec, ParamStore, Tape, Var};
use crate::tensor::Tensor;

/// Where the filter's control input comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlSource {
    /// The interaction-aware acceleration forecast made one frame earlier.
    #[default]
    Forecast,
    /// The sensor acceleration one frame earlier, held over the horizon.
    SensorHeld,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub agents: usize,
    pub horizon: usize,
    pub past_len: usize,
    /// `L'`: the filter assimilates `L' + 1` observations.
    pub obs_horizon: usize,
    pub dt: f64,
    pub interaction: InteractionConfig,
    pub noise: NoiseConfig,
    /// Initial covariance scale.
    pub p0: f64,
    /// Noise-model inputs: positions relative to the agent's current
    /// position divided by `pos_scale`, velocities by `vel_scale`.
    pub pos_scale: f64,
    pub vel_scale: f64,
    pub positions_only: bool,
    pub use_filter: bool,
    pub control: ControlSource,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            agents: 6,
            horizon: 50,
            past_len: 20,
            obs_horizon: 4,
            dt: 0.1,
            interaction: InteractionConfig::default(),
            noise: NoiseConfig::default(),
            p0: 1.0,
            pos_scale: 50.0,
            vel_scale: 20.0,
            positions_only: false,
            use_filter: true,
            control: ControlSource::Forecast,
        }
    }
}

impl ModelConfig {
    /// Flat `(axis, agent, step)` width `M = 2·N·L`.
    pub fn flat_width(&self) -> usize {
        2 * self.agents * self.horizon
    }

    pub fn first_obs(&self) -> usize {
        self.past_len - 1 - self.obs_horizon
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::Config(m.to_string()));
        if self.agents == 0 || self.horizon == 0 {
            return bad("agents and horizon must be positive");
        }
        if self.obs_horizon + 2 > self.past_len {
            return bad("observation horizon needs obs_horizon + 2 <= past_len");
        }
        if self.interaction.agents != self.agents || self.interaction.horizon != self.horizon {
            return bad("interaction agents/horizon differ from the model's");
        }
        if !(self.dt > 0.0 && self.p0 > 0.0 && self.pos_scale > 0.0 && self.vel_scale > 0.0) {
            return bad("dt, p0 and input scales must be positive");
        }
        if self.noise.variance_floor.is_nan() || self.noise.variance_floor <= 0.0 {
            return bad("variance floor must be positive");
        }
        Ok(())
    }

    /// A scaled-down configuration for fast tests.
    pub fn tiny(agents: usize, horizon: usize, past_len: usize, obs_horizon: usize) -> Self {
        Self {
            agents,
            horizon,
            past_len,
            obs_horizon,
            interaction: InteractionConfig {
                agents,
                horizon,
                conv_channels: [2, 2],
                kernel: 3,
                mix_widths: [4, 3],
                hidden: 3,
                a_max: 8.0,
            },
            noise: NoiseConfig {
                hidden: 3,
                variance_floor: 1e-6,
            },
            ..Self::default()
        }
    }
}

/// Scene data precomputed for the forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedScene {
    pub id: String,
    pub feats: InteractionFeatures,
    /// Per frame of the whole window, `2N` values with column `2n + axis`.
    pub pos: Vec<Vec<f64>>,
    pub vel: Vec<Vec<f64>>,
    pub acc: Vec<Vec<f64>>,
}

impl PreparedScene {
    pub fn new(scene: &SceneWindow, std: &Standardizer, cfg: &ModelConfig) -> Result<Self, DataError> {
        if scene.num_agents() != cfg.agents || scene.past_len() != cfg.past_len {
            return Err(DataError::Scene(format!(
                "{}: has {} agents and {} past frames, model expects {} and {}",
                scene.id,
                scene.num_agents(),
                scene.past_len(),
                cfg.agents,
                cfg.past_len
            )));
        }
        if scene.total_len() < cfg.past_len + cfg.horizon {
            return Err(DataError::Scene(format!("{}: future shorter than the horizon", scene.id)));
        }
        let feats = std.apply(&build_features(scene)?);
        let n = cfg.agents;
        let frames = scene.total_len();
        let (mut pos, mut vel, mut acc) = (Vec::new(), Vec::new(), Vec::new());
        for k in 0..frames {
            let (mut p, mut v, mut a) = (Vec::with_capacity(2 * n), Vec::with_capacity(2 * n), Vec::with_capacity(2 * n));
            for i in 0..n {
                let f = scene.frame(i, k);
                let kind = scene.past[i].kind;
                let body = BodyFrameState::from_global(f.pos, f.vel, f.heading, f.yaw_rate);
                p.extend_from_slice(&f.pos);
                v.extend_from_slice(&global_velocity(kind, &body));
                a.extend_from_slice(&f.acc);
            }
            if p.iter().chain(&v).chain(&a).any(|x| !x.is_finite()) {
                return Err(DataError::NonFinite(format!("{} kinematics at frame {k}", scene.id)));
            }
            pos.push(p);
            vel.push(v);
            acc.push(a);
        }
        Ok(Self {
            id: scene.id.clone(),
            feats,
            pos,
            vel,
            acc,
        })
    }

    /// Flat `(axis, agent, step)` copy of frames `t+1..=t+L`.
    pub fn flat_future(&self, src: &[Vec<f64>], t: usize, n: usize, l: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * n * l);
        for axis in 0..2 {
            for a in 0..n {
                for k in 0..l {
                    out.push(src[t + 1 + k][2 * a + axis]);
                }
            }
        }
        out
    }

    /// Ground-truth positions and velocities of the window starting after `t`.
    pub fn ground_truth(&self, t: usize, n: usize, l: usize) -> (Vec<f64>, Vec<f64>) {
        (self.flat_future(&self.pos, t, n, l), self.flat_future(&self.vel, t, n, l))
    }
}

/// Broadcast of per-agent `2N` values to the flat `(axis, agent, step)` layout.
pub fn broadcast_flat(x: &[f64], n: usize, l: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * n * l);
    for axis in 0..2 {
        for a in 0..n {
            out.extend(std::iter::repeat_n(x[2 * a + axis], l));
        }
    }
    out
}

/// Tape nodes of one forward pass.
#[derive(Clone, Debug)]
pub struct SceneGraph {
    /// Observation frames `t0..=h−1`.
    pub frames: Vec<usize>,
    /// Filter posteriors, one per observation frame.
    pub estimates: Vec<TapeEstimate>,
    /// Motion-layer observations `(p, v)` flat, one per observation frame.
    pub observations: Vec<(Var, Var)>,
    /// `(qp, qv, rp, rv)` per observation frame (empty without the filter).
    pub noise: Vec<[Var; 4]>,
    /// `[L, 2N]` forecasts for frames `t0−1..=h−1`.
    pub forecasts: Vec<Var>,
    pub loss: Var,
}

#[derive(Clone, Debug)]
pub struct Iaknn {
    pub cfg: ModelConfig,
    pub net: InteractionNet,
    pub noise_q: NoiseModel,
    pub noise_r: NoiseModel,
}

impl Iaknn {
    pub fn new(cfg: ModelConfig) -> Result<Self, NnError> {
        cfg.validate()?;
        let m = cfg.flat_width();
        Ok(Self {
            net: InteractionNet::new(cfg.interaction.clone()),
            noise_q: NoiseModel::new("noise_q", m, cfg.noise.clone()),
            noise_r: NoiseModel::new("noise_r", m, cfg.noise.clone()),
            cfg,
        })
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut s = self.net.param_specs();
        s.extend(self.noise_q.param_specs());
        s.extend(self.noise_r.param_specs());
        s
    }

    pub fn init_params(&self, seed: u64) -> ParamStore {
        init_params(&self.param_specs(), seed)
    }

    fn noise_input(&self, tape: &mut Tape, p: Var, v: Var, ref_pos: &[f64]) -> Var {
        let (n, l) = (self.cfg.agents, self.cfg.horizon);
        let r = tape.constant(Tensor::vector(broadcast_flat(ref_pos, n, l)));
        let rel = tape.sub(p, r);
        let ps = tape.scale(rel, 1.0 / self.cfg.pos_scale);
        let vs = tape.scale(v, 1.0 / self.cfg.vel_scale);
        tape.concat(&[ps, vs])
    }

    /// Builds the forward graph and the training loss. `teacher[k]` is the
    /// decoder feedback mask for forecast frame `t0 − 1 + k`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        scene: &PreparedScene,
        teacher: Option<&[Vec<bool>]>,
    ) -> Result<SceneGraph, NnError> {
        let cfg = &self.cfg;
        let (n, l, dt) = (cfg.agents, cfg.horizon, cfg.dt);
        let t0 = cfg.first_obs();
        let last = cfg.past_len - 1;
        let gather = forecast_gather_indices(n, l);

        let states: Vec<LstmVars> = self.net.encode(tape, store, &scene.feats)?;
        let mut forecasts = Vec::with_capacity(last + 2 - t0);
        for (k, tau) in (t0 - 1..=last).enumerate() {
            let targets: Vec<Vec<f64>> = (0..l).map(|j| scene.acc[tau + j].clone()).collect();
            let tf = teacher.and_then(|m| m.get(k)).map(|mask| TeacherForcing {
                targets: &targets,
                mask,
            });
            forecasts.push(self.net.decode(tape, store, states[tau], &scene.acc[tau], tf)?);
        }

        let mut observations = Vec::new();
        for (k, t) in (t0..=last).enumerate() {
            let p = tape.constant(Tensor::vector(scene.pos[t].clone()));
            let v = tape.constant(Tensor::vector(scene.vel[t].clone()));
            let (pos, vel) = rollout_tape(tape, p, v, forecasts[k + 1], dt);
            let op = tape.gather(pos, gather.clone());
            let ov = tape.gather(vel, gather.clone());
            observations.push((op, ov));
        }

        let mut estimates = Vec::new();
        let mut noise = Vec::new();
        if cfg.use_filter {
            let init = self.initial_estimate(scene, t0 - 1);
            let mut cur = TapeEstimate::constant(tape, &init);
            let mut q_state = self.noise_q.zero_state(tape);
            let mut r_state = self.noise_r.zero_state(tape);
            for (k, t) in (t0..=last).enumerate() {
                let u = match cfg.control {
                    ControlSource::Forecast => tape.gather(forecasts[k], gather.clone()),
                    ControlSource::SensorHeld => {
                        tape.constant(Tensor::vector(broadcast_flat(&scene.acc[t - 1], n, l)))
                    }
                };
                let (sp, sv) = predict_mean_tape(tape, &cur, u, dt);
                let qx = self.noise_input(tape, sp, sv, &scene.pos[t]);
                let (qp, qv, qs) = self.noise_q.step(tape, store, qx, q_state)?;
                q_state = qs;
                let (pp, pv, vv) = predict_cov_tape(tape, &cur, qp, qv, dt);
                let (op, ov) = observations[k];
                let rx = self.noise_input(tape, op, ov, &scene.pos[t]);
                let (rp, rv, rs) = self.noise_r.step(tape, store, rx, r_state)?;
                r_state = rs;
                let pred = TapeEstimate { p: sp, v: sv, pp, pv, vv };
                cur = update_tape(tape, &pred, op, ov, rp, rv);
                estimates.push(cur);
                noise.push([qp, qv, rp, rv]);
            }
        }

        let mut terms = Vec::new();
        for (k, t) in (t0..=last).enumerate() {
            let (ep, ev) = if cfg.use_filter {
                (estimates[k].p, estimates[k].v)
            } else {
                observations[k]
            };
            let (gp, gv) = scene.ground_truth(t, n, l);
            let gp = tape.constant(Tensor::vector(gp));
            let dp = tape.sub(ep, gp);
            let sq = tape.square(dp);
            terms.push(tape.sum(sq));
            if !cfg.positions_only {
                let gv = tape.constant(Tensor::vector(gv));
                let dv = tape.sub(ev, gv);
                let sq = tape.square(dv);
                terms.push(tape.sum(sq));
            }
        }
        let all = tape.concat(&terms);
        let total = tape.sum(all);
        let loss = tape.scale(total, 1.0 / ((cfg.obs_horizon + 1) * n) as f64);
        Ok(SceneGraph {
            frames: (t0..=last).collect(),
            estimates,
            observations,
            noise,
            forecasts,
            loss,
        })
    }

    /// Constant-velocity extrapolation of the sensor state at frame `t`
    /// with covariance `p0·I`.
    pub fn initial_estimate(&self, scene: &PreparedScene, t: usize) -> FilterEstimate {
        let (n, l, dt) = (self.cfg.agents, self.cfg.horizon, self.cfg.dt);
        let mut p = Vec::with_capacity(2 * n * l);
        let mut v = Vec::with_capacity(2 * n * l);
        for axis in 0..2 {
            for a in 0..n {
                let (p0, v0) = (scene.pos[t][2 * a + axis], scene.vel[t][2 * a + axis]);
                for k in 0..l {
                    p.push(p0 + v0 * dt * (k + 1) as f64);
                    v.push(v0);
                }
            }
        }
        FilterEstimate::new(n, l, p, v, self.cfg.p0)
    }

    /// Forward pass on values: final posterior, motion-only trajectory and
    /// per-step filter estimates.
    pub fn predict(&self, store: &ParamStore, scene: &PreparedScene) -> Result<ScenePrediction, NnError> {
        let mut tape = Tape::new();
        let g = self.forward(&mut tape, store, scene, None)?;
        let (n, l) = (self.cfg.agents, self.cfg.horizon);
        let (op, ov) = *g.observations.last().expect("at least one observation");
        let motion = FilterEstimate {
            agents: n,
            horizon: l,
            p: tape.value(op).data().to_vec(),
            v: tape.value(ov).data().to_vec(),
            pp: vec![0.0; 2 * n * l],
            pv: vec![0.0; 2 * n * l],
            vv: vec![0.0; 2 * n * l],
        };
        let estimates: Vec<FilterEstimate> = g.estimates.iter().map(|e| e.value(&tape, n, l)).collect();
        let noise = g
            .noise
            .iter()
            .map(|q| q.map(|v| tape.value(v).data().to_vec()))
            .collect();
        Ok(ScenePrediction {
            filtered: estimates.last().cloned(),
            motion,
            estimates,
            noise,
            loss: tape.value(g.loss).item(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenePrediction {
    /// Final posterior; `None` when the filter is disabled.
    pub filtered: Option<FilterEstimate>,
    /// Motion-layer trajectory from the last past frame.
    pub motion: FilterEstimate,
    pub estimates: Vec<FilterEstimate>,
    /// `[qp, qv, rp, rv]` per observation frame.
    pub noise: Vec<[Vec<f64>; 4]>,
    pub loss: f64,
}
