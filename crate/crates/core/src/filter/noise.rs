//! Recurrent noise models producing diagonal covariances per filter step.

use serde::{Deserialize, Serialize};

use crate::nn::{Activation, Dense, Lstm, LstmVars, NnError, ParamSpec, ParamStore, Tape, Var};
use crate::tensor::Tensor;

use super::DiagNoise;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub hidden: usize,
    /// Lower bound added to every variance (σ_min²).
    pub variance_floor: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            variance_floor: 1e-6,
        }
    }
}

/// `x → relu(W·x + b) → LSTM → head → softplus + floor`, where `x` is the
/// `2M` stacked (positions, velocities) vector of one filter step and the
/// output splits into position and velocity variances.
#[derive(Clone, Debug)]
pub struct NoiseModel {
    pub width: usize,
    pub cfg: NoiseConfig,
    input: Dense,
    lstm: Lstm,
    head: Dense,
}

impl NoiseModel {
    /// `width` is `M`, the number of flat `(axis, agent, step)` entries.
    pub fn new(prefix: &str, width: usize, cfg: NoiseConfig) -> Self {
        Self {
            input: Dense::new(format!("{prefix}.input"), 2 * width, cfg.hidden, Activation::Relu),
            lstm: Lstm::new(format!("{prefix}.lstm"), cfg.hidden, cfg.hidden),
            head: Dense::new(format!("{prefix}.head"), cfg.hidden, 2 * width, Activation::Identity),
            width,
            cfg,
        }
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut s = self.input.param_specs();
        s.extend(self.lstm.param_specs());
        s.extend(self.head.param_specs());
        s
    }

    pub fn zero_state(&self, tape: &mut Tape) -> LstmVars {
        self.lstm.zero_state(tape)
    }

    /// Consumes one history entry; returns `(var_p, var_v, new_state)`.
    pub fn step(&self, tape: &mut Tape, store: &ParamStore, x: Var, state: LstmVars) -> Result<(Var, Var, LstmVars), NnError> {
        let h = self.input.forward(tape, store, x)?;
        let state = self.lstm.step(tape, store, h, state)?;
        let z = self.head.forward(tape, store, state.hidden)?;
        let sp = tape.softplus(z);
        let var = tape.offset(sp, self.cfg.variance_floor);
        let p = tape.slice(var, 0, self.width);
        let v = tape.slice(var, self.width, self.width);
        Ok((p, v, state))
    }
}

/// Covariance diagonals after the model has consumed `history` (each entry
/// a `2M` input vector, oldest first).
pub fn noise_covariances(history: &[Vec<f64>], params: &ParamStore, model: &NoiseModel) -> Result<DiagNoise, NnError> {
    let mut tape = Tape::new();
    let mut state = model.zero_state(&mut tape);
    let mut last = None;
    for x in history {
        let xv = tape.constant(Tensor::vector(x.clone()));
        let (p, v, s) = model.step(&mut tape, params, xv, state)?;
        state = s;
        last = Some((p, v));
    }
    let (p, v) = last.ok_or_else(|| NnError::State("empty noise history".into()))?;
    Ok(DiagNoise {
        p: tape.value(p).data().to_vec(),
        v: tape.value(v).data().to_vec(),
    })
}
