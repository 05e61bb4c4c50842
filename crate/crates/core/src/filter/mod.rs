//! Multi-agent Kalman filter over stacked forecast windows.
//!
//! Per axis the state stacks, agent after agent, the pairs
//! `(p_{t+1}, v_{t+1}, …, p_{t+L}, v_{t+L})`. `F` and `B` are block
//! diagonal with a 2×2 block `[[1, dt], [0, 1]]` and a column
//! `(½dt², dt)` per agent and step, the observation matrix is the
//! identity, and the noise covariances are diagonal. Under those
//! conditions every covariance the filter produces is block diagonal
//! with the same 2×2 blocks, so the recursion is carried out on the
//! blocks directly: `pp`, `pv`, `vv` per (axis, agent, step).
//!
//! Flat vectors of length `M = 2·N·L` use the index
//! `axis·N·L + agent·L + step`.

pub mod dense;
pub mod noise;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{NnError, Tape, Var};
use crate::tensor::Tensor;

pub use dense::{DenseEstimate, GenericKalman};
pub use noise::{noise_covariances, NoiseConfig, NoiseModel};

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error("singular {0}")]
    Singular(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Dense `F` `(2NL)×(2NL)` and `B` `(2NL)×(NL)` for one axis.
pub fn build_f_b(n: usize, l: usize, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let (d, c) = (2 * n * l, n * l);
    let mut f = DMatrix::zeros(d, d);
    let mut b = DMatrix::zeros(d, c);
    for blk in 0..n * l {
        let r = 2 * blk;
        f[(r, r)] = 1.0;
        f[(r, r + 1)] = dt;
        f[(r + 1, r + 1)] = 1.0;
        b[(r, blk)] = 0.5 * dt * dt;
        b[(r + 1, blk)] = dt;
    }
    (f, b)
}

/// Flat index of `(axis, agent, step)`.
pub fn flat_index(n: usize, l: usize, axis: usize, agent: usize, step: usize) -> usize {
    axis * n * l + agent * l + step
}

/// Indices into a `[L, 2N]` forecast matrix (column `2n + axis`) that
/// produce the flat `(axis, agent, step)` order.
pub fn forecast_gather_indices(n: usize, l: usize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(2 * n * l);
    for axis in 0..2 {
        for agent in 0..n {
            for step in 0..l {
                idx.push(step * 2 * n + 2 * agent + axis);
            }
        }
    }
    idx
}

/// Posterior (or prior) mean and block covariance for both axes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterEstimate {
    pub agents: usize,
    pub horizon: usize,
    pub p: Vec<f64>,
    pub v: Vec<f64>,
    pub pp: Vec<f64>,
    pub pv: Vec<f64>,
    pub vv: Vec<f64>,
}

impl FilterEstimate {
    /// Mean `(p, v)` with covariance `p0·I`.
    pub fn new(agents: usize, horizon: usize, p: Vec<f64>, v: Vec<f64>, p0: f64) -> Self {
        let m = p.len();
        Self {
            agents,
            horizon,
            p,
            v,
            pp: vec![p0; m],
            pv: vec![0.0; m],
            vv: vec![p0; m],
        }
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn position(&self, axis: usize, agent: usize, step: usize) -> f64 {
        self.p[flat_index(self.agents, self.horizon, axis, agent, step)]
    }

    pub fn position_variance(&self, axis: usize, agent: usize, step: usize) -> f64 {
        self.pp[flat_index(self.agents, self.horizon, axis, agent, step)]
    }

    /// Stacked per-agent `(p, v, p, v, …)` mean vector of one axis.
    pub fn stacked(&self, axis: usize) -> DVector<f64> {
        let (n, l) = (self.agents, self.horizon);
        let mut out = DVector::zeros(2 * n * l);
        for a in 0..n {
            for k in 0..l {
                let i = flat_index(n, l, axis, a, k);
                let r = 2 * (a * l + k);
                out[r] = self.p[i];
                out[r + 1] = self.v[i];
            }
        }
        out
    }

    /// Full `(2NL)×(2NL)` covariance of one axis in stacked order.
    pub fn dense_covariance(&self, axis: usize) -> DMatrix<f64> {
        let (n, l) = (self.agents, self.horizon);
        let mut out = DMatrix::zeros(2 * n * l, 2 * n * l);
        for a in 0..n {
            for k in 0..l {
                let i = flat_index(n, l, axis, a, k);
                let r = 2 * (a * l + k);
                out[(r, r)] = self.pp[i];
                out[(r, r + 1)] = self.pv[i];
                out[(r + 1, r)] = self.pv[i];
                out[(r + 1, r + 1)] = self.vv[i];
            }
        }
        out
    }

    pub fn from_dense(agents: usize, horizon: usize, x: [&DenseEstimate; 2]) -> Self {
        let m = 2 * agents * horizon;
        let mut e = Self::new(agents, horizon, vec![0.0; m], vec![0.0; m], 0.0);
        for (axis, d) in x.iter().enumerate() {
            for a in 0..agents {
                for k in 0..horizon {
                    let i = flat_index(agents, horizon, axis, a, k);
                    let r = 2 * (a * horizon + k);
                    e.p[i] = d.mean[r];
                    e.v[i] = d.mean[r + 1];
                    e.pp[i] = d.cov[(r, r)];
                    e.pv[i] = d.cov[(r, r + 1)];
                    e.vv[i] = d.cov[(r + 1, r + 1)];
                }
            }
        }
        e
    }

    pub fn is_finite(&self) -> bool {
        [&self.p, &self.v, &self.pp, &self.pv, &self.vv]
            .iter()
            .all(|x| x.iter().all(|v| v.is_finite()))
    }

    /// Smallest eigenvalue over all 2×2 covariance blocks.
    pub fn min_eigenvalue(&self) -> f64 {
        (0..self.len())
            .map(|i| {
                let (a, b, d) = (self.pp[i], self.pv[i], self.vv[i]);
                let mid = 0.5 * (a + d);
                let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
                mid - rad
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Diagonal noise, split into position and velocity halves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagNoise {
    pub p: Vec<f64>,
    pub v: Vec<f64>,
}

impl DiagNoise {
    pub fn constant(m: usize, p: f64, v: f64) -> Self {
        Self {
            p: vec![p; m],
            v: vec![v; m],
        }
    }
}

fn check_len(what: &str, got: usize, want: usize) -> Result<(), FilterError> {
    if got != want {
        return Err(FilterError::Shape(format!("{what} has {got} entries, expected {want}")));
    }
    Ok(())
}

/// `S⁻ = F·Ŝ + B·U`, `P⁻ = F·P̂·Fᵀ + Q`.
#[allow(clippy::needless_range_loop)]
pub fn predict_step(prev: &FilterEstimate, u: &[f64], q: &DiagNoise, dt: f64) -> Result<FilterEstimate, FilterError> {
    let m = prev.len();
    check_len("control", u.len(), m)?;
    check_len("process noise", q.p.len().min(q.v.len()), m)?;
    if !prev.is_finite() || u.iter().chain(&q.p).chain(&q.v).any(|x| !x.is_finite()) {
        return Err(FilterError::NonFinite("predict input".into()));
    }
    let mut out = prev.clone();
    for i in 0..m {
        out.p[i] = prev.p[i] + dt * prev.v[i] + 0.5 * dt * dt * u[i];
        out.v[i] = prev.v[i] + dt * u[i];
        out.pp[i] = prev.pp[i] + 2.0 * dt * prev.pv[i] + dt * dt * prev.vv[i] + q.p[i];
        out.pv[i] = prev.pv[i] + dt * prev.vv[i];
        out.vv[i] = prev.vv[i] + q.v[i];
    }
    Ok(out)
}

/// `K = P⁻(P⁻ + R)⁻¹`, `Ŝ = S⁻ + K(T − S⁻)`, `P̂ = (I − K)P⁻`, symmetrized.
pub fn update_step(pred: &FilterEstimate, obs_p: &[f64], obs_v: &[f64], r: &DiagNoise) -> Result<FilterEstimate, FilterError> {
    let m = pred.len();
    check_len("observation", obs_p.len().min(obs_v.len()), m)?;
    check_len("measurement noise", r.p.len().min(r.v.len()), m)?;
    if !pred.is_finite() || obs_p.iter().chain(obs_v).chain(&r.p).chain(&r.v).any(|x| !x.is_finite()) {
        return Err(FilterError::NonFinite("update input".into()));
    }
    let mut out = pred.clone();
    for i in 0..m {
        let (pp, pv, vv) = (pred.pp[i], pred.pv[i], pred.vv[i]);
        let (a, d) = (pp + r.p[i], vv + r.v[i]);
        let det = a * d - pv * pv;
        if det.abs() < 1e-300 || !det.is_finite() {
            return Err(FilterError::Singular(format!("innovation block {i}")));
        }
        let k11 = (pp * d - pv * pv) / det;
        let k12 = (-pp * pv + pv * a) / det;
        let k21 = (pv * d - vv * pv) / det;
        let k22 = (-pv * pv + vv * a) / det;
        let (ep, ev) = (obs_p[i] - pred.p[i], obs_v[i] - pred.v[i]);
        out.p[i] = pred.p[i] + k11 * ep + k12 * ev;
        out.v[i] = pred.v[i] + k21 * ep + k22 * ev;
        let x11 = (1.0 - k11) * pp - k12 * pv;
        let x12 = (1.0 - k11) * pv - k12 * vv;
        let x21 = -k21 * pp + (1.0 - k22) * pv;
        let x22 = -k21 * pv + (1.0 - k22) * vv;
        out.pp[i] = x11;
        out.pv[i] = 0.5 * (x12 + x21);
        out.vv[i] = x22;
    }
    Ok(out)
}

/// One filter step's inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct StepInput {
    pub control: Vec<f64>,
    pub obs_p: Vec<f64>,
    pub obs_v: Vec<f64>,
}

/// Runs predict/update over `steps` with fixed diagonal noise and returns
/// every posterior.
pub fn filter_sequence_fixed(
    init: &FilterEstimate,
    steps: &[StepInput],
    q: &DiagNoise,
    r: &DiagNoise,
    dt: f64,
) -> Result<Vec<FilterEstimate>, FilterError> {
    let mut cur = init.clone();
    let mut out = Vec::with_capacity(steps.len());
    for s in steps {
        let pred = predict_step(&cur, &s.control, q, dt)?;
        cur = update_step(&pred, &s.obs_p, &s.obs_v, r)?;
        out.push(cur.clone());
    }
    Ok(out)
}

/// Filter state on the tape; every field is a `[M]` vector.
#[derive(Clone, Copy, Debug)]
pub struct TapeEstimate {
    pub p: Var,
    pub v: Var,
    pub pp: Var,
    pub pv: Var,
    pub vv: Var,
}

impl TapeEstimate {
    pub fn constant(tape: &mut Tape, e: &FilterEstimate) -> Self {
        let mut c = |x: &Vec<f64>| tape.constant(Tensor::vector(x.clone()));
        Self {
            p: c(&e.p),
            v: c(&e.v),
            pp: c(&e.pp),
            pv: c(&e.pv),
            vv: c(&e.vv),
        }
    }

    pub fn value(&self, tape: &Tape, agents: usize, horizon: usize) -> FilterEstimate {
        let g = |v: Var| tape.value(v).data().to_vec();
        FilterEstimate {
            agents,
            horizon,
            p: g(self.p),
            v: g(self.v),
            pp: g(self.pp),
            pv: g(self.pv),
            vv: g(self.vv),
        }
    }
}

/// Predicted mean only; the covariance part needs `Q`, which may itself
/// depend on this mean.
pub fn predict_mean_tape(tape: &mut Tape, prev: &TapeEstimate, u: Var, dt: f64) -> (Var, Var) {
    let dv = tape.scale(prev.v, dt);
    let du = tape.scale(u, 0.5 * dt * dt);
    let p1 = tape.add(prev.p, dv);
    let p = tape.add(p1, du);
    let vu = tape.scale(u, dt);
    let v = tape.add(prev.v, vu);
    (p, v)
}

pub fn predict_cov_tape(tape: &mut Tape, prev: &TapeEstimate, qp: Var, qv: Var, dt: f64) -> (Var, Var, Var) {
    let a = tape.scale(prev.pv, 2.0 * dt);
    let b = tape.scale(prev.vv, dt * dt);
    let pp1 = tape.add(prev.pp, a);
    let pp2 = tape.add(pp1, b);
    let pp = tape.add(pp2, qp);
    let c = tape.scale(prev.vv, dt);
    let pv = tape.add(prev.pv, c);
    let vv = tape.add(prev.vv, qv);
    (pp, pv, vv)
}

pub fn update_tape(tape: &mut Tape, pred: &TapeEstimate, obs_p: Var, obs_v: Var, rp: Var, rv: Var) -> TapeEstimate {
    let TapeEstimate { p, v, pp, pv, vv } = *pred;
    let a = tape.add(pp, rp);
    let d = tape.add(vv, rv);
    let ad = tape.mul(a, d);
    let pv2 = tape.mul(pv, pv);
    let det = tape.sub(ad, pv2);
    let pp_d = tape.mul(pp, d);
    let pp_pv = tape.mul(pp, pv);
    let pv_a = tape.mul(pv, a);
    let pv_d = tape.mul(pv, d);
    let vv_pv = tape.mul(vv, pv);
    let vv_a = tape.mul(vv, a);
    let n11 = tape.sub(pp_d, pv2);
    let n12 = tape.sub(pv_a, pp_pv);
    let n21 = tape.sub(pv_d, vv_pv);
    let n22 = tape.sub(vv_a, pv2);
    let k11 = tape.div(n11, det);
    let k12 = tape.div(n12, det);
    let k21 = tape.div(n21, det);
    let k22 = tape.div(n22, det);
    let ep = tape.sub(obs_p, p);
    let ev = tape.sub(obs_v, v);
    let t11 = tape.mul(k11, ep);
    let t12 = tape.mul(k12, ev);
    let t21 = tape.mul(k21, ep);
    let t22 = tape.mul(k22, ev);
    let p1 = tape.add(p, t11);
    let p_new = tape.add(p1, t12);
    let v1 = tape.add(v, t21);
    let v_new = tape.add(v1, t22);
    // X = (I − K)P⁻
    let k11pp = tape.mul(k11, pp);
    let k12pv = tape.mul(k12, pv);
    let k11pv = tape.mul(k11, pv);
    let k12vv = tape.mul(k12, vv);
    let k21pp = tape.mul(k21, pp);
    let k22pv = tape.mul(k22, pv);
    let k21pv = tape.mul(k21, pv);
    let k22vv = tape.mul(k22, vv);
    let x11a = tape.sub(pp, k11pp);
    let x11 = tape.sub(x11a, k12pv);
    let x12a = tape.sub(pv, k11pv);
    let x12 = tape.sub(x12a, k12vv);
    let x21a = tape.sub(pv, k22pv);
    let x21 = tape.sub(x21a, k21pp);
    let x22a = tape.sub(vv, k22vv);
    let x22 = tape.sub(x22a, k21pv);
    let xs = tape.add(x12, x21);
    let pv_new = tape.scale(xs, 0.5);
    TapeEstimate {
        p: p_new,
        v: v_new,
        pp: x11,
        pv: pv_new,
        vv: x22,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_block_matrices() {
        let (f, b) = build_f_b(1, 1, 0.1);
        assert_eq!(f, DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]));
        assert!((b[(0, 0)] - 0.005).abs() < 1e-18);
        assert_eq!(b[(1, 0)], 0.1);
    }

    #[test]
    fn two_agents_are_decoupled() {
        let (f, _) = build_f_b(2, 1, 0.1);
        assert_eq!(f.shape(), (4, 4));
        for r in 0..2 {
            for c in 2..4 {
                assert_eq!(f[(r, c)], 0.0);
                assert_eq!(f[(c, r)], 0.0);
            }
        }
    }

    #[test]
    fn constant_velocity_predict() {
        let e = FilterEstimate::new(1, 1, vec![0.0, 0.0], vec![1.0, 0.0], 1.0);
        let q = DiagNoise::constant(2, 0.0, 0.0);
        let s = predict_step(&e, &[0.0, 0.0], &q, 0.1).unwrap();
        assert!((s.p[0] - 0.1).abs() < 1e-15);
        assert_eq!(s.v[0], 1.0);
    }

    #[test]
    fn homogeneous_predict_is_fpf() {
        let mut e = FilterEstimate::new(1, 2, vec![0.0; 4], vec![0.0; 4], 1.0);
        e.pv = vec![0.3, -0.2, 0.1, 0.0];
        let s = predict_step(&e, &[0.0; 4], &DiagNoise::constant(4, 0.0, 0.0), 0.1).unwrap();
        let (f, _) = build_f_b(1, 2, 0.1);
        for axis in 0..2 {
            let want = &f * e.dense_covariance(axis) * f.transpose();
            assert!((s.dense_covariance(axis) - want).abs().max() < 1e-15);
            assert_eq!(s.stacked(axis), DVector::zeros(4));
        }
    }

    #[test]
    fn huge_measurement_noise_ignores_observation() {
        let e = FilterEstimate::new(2, 2, vec![1.0; 8], vec![2.0; 8], 3.0);
        let r = DiagNoise::constant(8, 1e12, 1e12);
        let post = update_step(&e, &[50.0; 8], &[-9.0; 8], &r).unwrap();
        for i in 0..8 {
            assert!((post.p[i] - 1.0).abs() < 1e-6);
            assert!((post.v[i] - 2.0).abs() < 1e-6);
        }
    }

    #[test]
    fn tiny_measurement_noise_follows_observation() {
        let e = FilterEstimate::new(1, 1, vec![0.0; 2], vec![0.0; 2], 1e4);
        let r = DiagNoise::constant(2, 1e-6, 1e-6);
        let post = update_step(&e, &[5.0, -5.0], &[1.0, 2.0], &r).unwrap();
        assert!((post.p[0] - 5.0).abs() < 1e-6 && (post.v[1] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn scalar_fusion_example() {
        // P⁻ = 1 on the position, R = 1: K = 0.5
        let mut e = FilterEstimate::new(1, 1, vec![0.0; 2], vec![0.0; 2], 1.0);
        e.pv = vec![0.0; 2];
        let post = update_step(&e, &[2.0, 2.0], &[0.0, 0.0], &DiagNoise::constant(2, 1.0, 1.0)).unwrap();
        assert_eq!(post.p[0], 1.0);
        assert_eq!(post.pp[0], 0.5);
    }

    #[test]
    fn gather_indices_layout() {
        // N = 2, L = 2: forecast row k holds (a0x, a0y, a1x, a1y)
        assert_eq!(forecast_gather_indices(2, 2), vec![0, 4, 2, 6, 1, 5, 3, 7]);
    }

    #[test]
    fn rejects_non_finite() {
        let e = FilterEstimate::new(1, 1, vec![f64::NAN, 0.0], vec![0.0; 2], 1.0);
        assert!(matches!(
            predict_step(&e, &[0.0; 2], &DiagNoise::constant(2, 0.0, 0.0), 0.1),
            Err(FilterError::NonFinite(_))
        ));
    }
}
