//! Interaction layer: past observations of a scene to interaction-aware
//! accelerations for every agent over the forecast horizon.
//!
//! Per past frame the pairwise `(d, e)` image `[N, N, 2]` passes two
//! convolutions, is flattened, joined with the per-agent `(ax, ay, w, l)`
//! channels and mixed by two dense layers before the encoder LSTM. The
//! decoder LSTM starts from the encoder state at the forecast origin and
//! unrolls one step per future frame, feeding back its previous
//! acceleration; a dense head maps each hidden state to `a_max·tanh(·)`.

use serde::{Deserialize, Serialize};

use crate::data::{DataError, SceneWindow};
use crate::nn::{Activation, Conv2d, Dense, Lstm, LstmVars, NnError, ParamSpec, ParamStore, Tape, Var};
use crate::tensor::Tensor;

pub const AGENT_CHANNELS: usize = 4;
pub const PAIR_CHANNELS: usize = 2;

/// Accelerations for `L` steps and `N` agents; `values[j][n]` applies over
/// step `t + j → t + j + 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccelerationForecast {
    pub values: Vec<Vec<[f64; 2]>>,
}

impl AccelerationForecast {
    pub fn zeros(horizon: usize, agents: usize) -> Self {
        Self {
            values: vec![vec![[0.0; 2]; agents]; horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.values.len()
    }

    pub fn num_agents(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    /// `[L, 2N]` matrix with column `2n + axis`.
    pub fn to_matrix(&self) -> Tensor {
        let (l, n) = (self.horizon(), self.num_agents());
        let data = self.values.iter().flatten().flatten().copied().collect();
        Tensor::matrix(l, 2 * n, data).expect("rectangular forecast")
    }

    pub fn from_matrix(m: &Tensor) -> Self {
        let (l, c) = (m.shape()[0], m.shape()[1]);
        let values = (0..l)
            .map(|i| (0..c / 2).map(|n| [m.data()[i * c + 2 * n], m.data()[i * c + 2 * n + 1]]).collect())
            .collect();
        Self { values }
    }
}

/// Per past frame: agent channels `N×4` (ax, ay, w, l), pairwise image
/// `[N, N, 2]` with channels (d, e), and the unstandardized accelerations
/// `N×2` used as decoder inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionFeatures {
    pub agents: usize,
    pub agent: Vec<Vec<f64>>,
    pub pairwise: Vec<Vec<f64>>,
    pub accel: Vec<Vec<f64>>,
}

impl InteractionFeatures {
    pub fn steps(&self) -> usize {
        self.agent.len()
    }
}

/// Raw features of a scene's past segment.
pub fn build_features(scene: &SceneWindow) -> Result<InteractionFeatures, DataError> {
    let n = scene.num_agents();
    let h = scene.past_len();
    if scene.pairwise_distances.len() != h || scene.repulsive_forces.len() != h {
        return Err(DataError::Scene(format!("{}: pairwise matrices do not cover the past", scene.id)));
    }
    let mut out = InteractionFeatures {
        agents: n,
        agent: Vec::with_capacity(h),
        pairwise: Vec::with_capacity(h),
        accel: Vec::with_capacity(h),
    };
    for k in 0..h {
        let mut agent = Vec::with_capacity(n * AGENT_CHANNELS);
        let mut accel = Vec::with_capacity(n * 2);
        for a in 0..n {
            let f = scene.frame(a, k);
            agent.extend_from_slice(&[f.acc[0], f.acc[1], f.width, f.length]);
            accel.extend_from_slice(&f.acc);
        }
        let (d, e) = (&scene.pairwise_distances[k], &scene.repulsive_forces[k]);
        let mut pair = Vec::with_capacity(n * n * PAIR_CHANNELS);
        for i in 0..n {
            for j in 0..n {
                pair.push(d[i][j]);
                pair.push(e[i][j]);
            }
        }
        if agent.iter().chain(&pair).any(|v| !v.is_finite()) {
            return Err(DataError::NonFinite(format!("{} features at past frame {k}", scene.id)));
        }
        out.agent.push(agent);
        out.pairwise.push(pair);
        out.accel.push(accel);
    }
    Ok(out)
}

/// Per-channel affine standardization fitted on training features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub agent_mean: Vec<f64>,
    pub agent_std: Vec<f64>,
    pub pair_mean: Vec<f64>,
    pub pair_std: Vec<f64>,
}

/// Channels with smaller spread are centred but not scaled.
pub const STD_FLOOR: f64 = 1e-6;

fn moments(values: impl Iterator<Item = (usize, f64)>, channels: usize) -> (Vec<f64>, Vec<f64>) {
    let mut count = vec![0usize; channels];
    let mut sum = vec![0.0; channels];
    let mut sq = vec![0.0; channels];
    let collected: Vec<(usize, f64)> = values.collect();
    for &(c, v) in &collected {
        count[c] += 1;
        sum[c] += v;
    }
    let mean: Vec<f64> = (0..channels).map(|c| sum[c] / count[c].max(1) as f64).collect();
    for &(c, v) in &collected {
        sq[c] += (v - mean[c]) * (v - mean[c]);
    }
    let std = (0..channels)
        .map(|c| {
            let s = (sq[c] / count[c].max(1) as f64).sqrt();
            if s < STD_FLOOR {
                1.0
            } else {
                s
            }
        })
        .collect();
    (mean, std)
}

impl Standardizer {
    pub fn identity() -> Self {
        Self {
            agent_mean: vec![0.0; AGENT_CHANNELS],
            agent_std: vec![1.0; AGENT_CHANNELS],
            pair_mean: vec![0.0; PAIR_CHANNELS],
            pair_std: vec![1.0; PAIR_CHANNELS],
        }
    }

    /// Population mean and standard deviation per channel over every
    /// frame, agent and agent pair.
    pub fn fit(features: &[InteractionFeatures]) -> Self {
        let agent_vals = features
            .iter()
            .flat_map(|f| &f.agent)
            .flat_map(|row| row.iter().enumerate().map(|(i, &v)| (i % AGENT_CHANNELS, v)));
        let (agent_mean, agent_std) = moments(agent_vals, AGENT_CHANNELS);
        let pair_vals = features
            .iter()
            .flat_map(|f| &f.pairwise)
            .flat_map(|row| row.iter().enumerate().map(|(i, &v)| (i % PAIR_CHANNELS, v)));
        let (pair_mean, pair_std) = moments(pair_vals, PAIR_CHANNELS);
        Self {
            agent_mean,
            agent_std,
            pair_mean,
            pair_std,
        }
    }

    pub fn apply(&self, f: &InteractionFeatures) -> InteractionFeatures {
        let norm = |row: &Vec<f64>, mean: &[f64], std: &[f64]| -> Vec<f64> {
            row.iter()
                .enumerate()
                .map(|(i, v)| (v - mean[i % mean.len()]) / std[i % std.len()])
                .collect()
        };
        InteractionFeatures {
            agents: f.agents,
            agent: f.agent.iter().map(|r| norm(r, &self.agent_mean, &self.agent_std)).collect(),
            pairwise: f.pairwise.iter().map(|r| norm(r, &self.pair_mean, &self.pair_std)).collect(),
            accel: f.accel.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InteractionConfig {
    pub agents: usize,
    pub horizon: usize,
    pub conv_channels: [usize; 2],
    pub kernel: usize,
    pub mix_widths: [usize; 2],
    pub hidden: usize,
    /// Output bound, m/s².
    pub a_max: f64,
}

impl Default for InteractionConfig {
    fn default() -> Self {
        Self {
            agents: 6,
            horizon: 50,
            conv_channels: [8, 16],
            kernel: 3,
            mix_widths: [64, 32],
            hidden: 32,
            a_max: 8.0,
        }
    }
}

/// Optional ground-truth feedback for the decoder during training.
/// `targets[j]` is the true `2N` acceleration for forecast entry `j`;
/// `mask[j]` replaces the decoder's own entry `j` with it as the input of
/// step `j + 1`.
pub struct TeacherForcing<'a> {
    pub targets: &'a [Vec<f64>],
    pub mask: &'a [bool],
}

#[derive(Clone, Debug)]
pub struct InteractionNet {
    pub cfg: InteractionConfig,
    conv1: Conv2d,
    conv2: Conv2d,
    mix1: Dense,
    mix2: Dense,
    encoder: Lstm,
    decoder: Lstm,
    head: Dense,
}

impl InteractionNet {
    pub fn new(cfg: InteractionConfig) -> Self {
        let n = cfg.agents;
        let conv = |name: &str, cin, cout| Conv2d {
            prefix: format!("interaction.{name}"),
            in_channels: cin,
            out_channels: cout,
            kernel: cfg.kernel,
            stride: 1,
            padding: cfg.kernel / 2,
            activation: Activation::Relu,
        };
        let conv1 = conv("conv1", PAIR_CHANNELS, cfg.conv_channels[0]);
        let conv2 = conv("conv2", cfg.conv_channels[0], cfg.conv_channels[1]);
        let flat = n * n * cfg.conv_channels[1] + n * AGENT_CHANNELS;
        Self {
            mix1: Dense::new("interaction.mix1", flat, cfg.mix_widths[0], Activation::Relu),
            mix2: Dense::new("interaction.mix2", cfg.mix_widths[0], cfg.mix_widths[1], Activation::Relu),
            encoder: Lstm::new("interaction.encoder", cfg.mix_widths[1], cfg.hidden),
            decoder: Lstm::new("interaction.decoder", 2 * n, cfg.hidden),
            head: Dense::new("interaction.head", cfg.hidden, 2 * n, Activation::Identity),
            conv1,
            conv2,
            cfg,
        }
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut s = self.conv1.param_specs();
        s.extend(self.conv2.param_specs());
        s.extend(self.mix1.param_specs());
        s.extend(self.mix2.param_specs());
        s.extend(self.encoder.param_specs());
        s.extend(self.decoder.param_specs());
        s.extend(self.head.param_specs());
        s
    }

    /// Encoder states after each past frame of standardized `feats`.
    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, feats: &InteractionFeatures) -> Result<Vec<LstmVars>, NnError> {
        let n = self.cfg.agents;
        if feats.agents != n {
            return Err(NnError::Dimension {
                param: self.mix1.weight_name(),
                expected: vec![n],
                found: vec![feats.agents],
            });
        }
        let mut state = self.encoder.zero_state(tape);
        let mut out = Vec::with_capacity(feats.steps());
        for (agent, pair) in feats.agent.iter().zip(&feats.pairwise) {
            let img = Tensor::new(vec![n, n, PAIR_CHANNELS], pair.clone()).ok_or_else(|| NnError::Dimension {
                param: self.conv1.weight_name(),
                expected: vec![n, n, PAIR_CHANNELS],
                found: vec![pair.len()],
            })?;
            let x = tape.constant(img);
            let c1 = self.conv1.forward(tape, store, x)?;
            let c2 = self.conv2.forward(tape, store, c1)?;
            let a = tape.constant(Tensor::vector(agent.clone()));
            let joined = tape.concat(&[c2, a]);
            let m1 = self.mix1.forward(tape, store, joined)?;
            let m2 = self.mix2.forward(tape, store, m1)?;
            state = self.encoder.step(tape, store, m2, state)?;
            out.push(state);
        }
        Ok(out)
    }

    /// Unrolls the decoder from `state`; `first` is the observed `2N`
    /// acceleration at the origin. Returns the `[L, 2N]` forecast.
    pub fn decode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        state: LstmVars,
        first: &[f64],
        teacher: Option<TeacherForcing<'_>>,
    ) -> Result<Var, NnError> {
        let (l, a_max) = (self.cfg.horizon, self.cfg.a_max);
        let mut state = state;
        let mut input = tape.constant(Tensor::vector(first.iter().map(|a| a / a_max).collect()));
        let mut steps = Vec::with_capacity(l);
        for j in 0..l {
            state = self.decoder.step(tape, store, input, state)?;
            let z = self.head.forward(tape, store, state.hidden)?;
            let t = tape.tanh(z);
            let acc = tape.scale(t, a_max);
            steps.push(acc);
            input = match &teacher {
                Some(tf) if tf.mask.get(j).copied().unwrap_or(false) => {
                    tape.constant(Tensor::vector(tf.targets[j].iter().map(|a| a / a_max).collect()))
                }
                _ => t,
            };
        }
        let flat = tape.concat(&steps);
        Ok(tape.reshape(flat, &[l, 2 * self.cfg.agents]))
    }

    /// Forecast from the last past frame, on plain values.
    pub fn forecast(&self, store: &ParamStore, feats: &InteractionFeatures) -> Result<AccelerationForecast, NnError> {
        let mut tape = Tape::new();
        let states = self.encode(&mut tape, store, feats)?;
        let last = *states.last().ok_or_else(|| NnError::State("no past frames".into()))?;
        let first = feats.accel.last().expect("nonempty past");
        let m = self.decode(&mut tape, store, last, first, None)?;
        Ok(AccelerationForecast::from_matrix(tape.value(m)))
    }
}

/// Forecast of `net` on already standardized features.
pub fn interaction_forward(
    feats: &InteractionFeatures,
    params: &ParamStore,
    cfg: &InteractionConfig,
) -> Result<AccelerationForecast, NnError> {
    InteractionNet::new(cfg.clone()).forecast(params, feats)
}
