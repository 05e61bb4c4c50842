//! Filter checks against dense reference algebra.

use iaknn::data::{synth_scenes, BehaviorConfig};
use iaknn::filter::{build_f_b, filter_sequence_fixed, DiagNoise, FilterEstimate, StepInput};
use iaknn::interaction::Standardizer;
use iaknn::model::{Iaknn, ModelConfig, PreparedScene};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::{kron_f_b, random_spd2, rng, textbook_kalman_step, uniform_vec, Gaussian};

pub struct Instance {
    pub agents: usize,
    pub horizon: usize,
    pub init: FilterEstimate,
    pub steps: Vec<StepInput>,
    pub q: DiagNoise,
    pub r: DiagNoise,
    pub dt: f64,
}

/// Random `N = 2`, `L = 2`, three-step instance with fixed diagonal noise.
pub fn random_instance(seed: u64) -> Instance {
    let (n, l) = (2, 2);
    let m = 2 * n * l;
    let mut r = rng(seed);
    let mut init = FilterEstimate::new(n, l, uniform_vec(&mut r, m, -20.0, 20.0), uniform_vec(&mut r, m, -5.0, 30.0), 1.0);
    for i in 0..m {
        let [a, b, d] = random_spd2(&mut r);
        init.pp[i] = a;
        init.pv[i] = b;
        init.vv[i] = d;
    }
    let steps = (0..3)
        .map(|_| StepInput {
            control: uniform_vec(&mut r, m, -4.0, 4.0),
            obs_p: uniform_vec(&mut r, m, -20.0, 20.0),
            obs_v: uniform_vec(&mut r, m, -5.0, 30.0),
        })
        .collect();
    let q = DiagNoise {
        p: uniform_vec(&mut r, m, 1e-3, 2.0),
        v: uniform_vec(&mut r, m, 1e-3, 2.0),
    };
    let rn = DiagNoise {
        p: uniform_vec(&mut r, m, 1e-3, 2.0),
        v: uniform_vec(&mut r, m, 1e-3, 2.0),
    };
    Instance {
        agents: n,
        horizon: l,
        init,
        steps,
        q,
        r: rn,
        dt: r.gen_range(0.05..0.2),
    }
}

/// Stacked `(p, v, p, v, …)` index of block `blk` for one axis.
fn axis_blocks(inst: &Instance, axis: usize) -> Vec<usize> {
    let nl = inst.agents * inst.horizon;
    (0..nl).map(|blk| axis * nl + blk).collect()
}

fn dense_state(e: &FilterEstimate, flat: &[usize]) -> Gaussian {
    let d = 2 * flat.len();
    let mut mean = DVector::zeros(d);
    let mut cov = DMatrix::zeros(d, d);
    for (blk, &i) in flat.iter().enumerate() {
        mean[2 * blk] = e.p[i];
        mean[2 * blk + 1] = e.v[i];
        cov[(2 * blk, 2 * blk)] = e.pp[i];
        cov[(2 * blk, 2 * blk + 1)] = e.pv[i];
        cov[(2 * blk + 1, 2 * blk)] = e.pv[i];
        cov[(2 * blk + 1, 2 * blk + 1)] = e.vv[i];
    }
    Gaussian { mean, cov }
}

fn interleave(p: &[f64], v: &[f64], flat: &[usize]) -> DVector<f64> {
    DVector::from_iterator(2 * flat.len(), flat.iter().flat_map(|&i| [p[i], v[i]]))
}

/// Largest absolute difference between the block filter and the dense
/// textbook filter over every posterior mean and covariance entry
/// (including off-block covariance, which must stay zero).
pub fn block_vs_dense_max_diff(inst: &Instance) -> f64 {
    let block = filter_sequence_fixed(&inst.init, &inst.steps, &inst.q, &inst.r, inst.dt).expect("block filter");
    let (f, b) = kron_f_b(inst.agents, inst.horizon, inst.dt);
    let mut worst = 0.0f64;
    for axis in 0..2 {
        let flat = axis_blocks(inst, axis);
        let mut cur = dense_state(&inst.init, &flat);
        let q = DMatrix::from_diagonal(&interleave(&inst.q.p, &inst.q.v, &flat));
        let r = DMatrix::from_diagonal(&interleave(&inst.r.p, &inst.r.v, &flat));
        for (k, s) in inst.steps.iter().enumerate() {
            let u = DVector::from_iterator(flat.len(), flat.iter().map(|&i| s.control[i]));
            let z = interleave(&s.obs_p, &s.obs_v, &flat);
            cur = textbook_kalman_step(&cur, &f, &b, &u, &q, &z, &r);
            let got = dense_state(&block[k], &flat);
            worst = worst.max((&got.mean - &cur.mean).amax());
            worst = worst.max((&got.cov - &cur.cov).amax());
        }
    }
    worst
}

/// Same comparison against the library's generic dense filter, so the
/// reference used in production paths is itself checked.
pub fn block_vs_generic_max_diff(inst: &Instance) -> f64 {
    use iaknn::filter::{DenseEstimate, GenericKalman};
    let block = filter_sequence_fixed(&inst.init, &inst.steps, &inst.q, &inst.r, inst.dt).expect("block filter");
    let (f, b) = kron_f_b(inst.agents, inst.horizon, inst.dt);
    let d = f.nrows();
    let kf = GenericKalman {
        f,
        b,
        h: DMatrix::identity(d, d),
    };
    let mut worst = 0.0f64;
    for axis in 0..2 {
        let flat = axis_blocks(inst, axis);
        let g = dense_state(&inst.init, &flat);
        let mut cur = DenseEstimate { mean: g.mean, cov: g.cov };
        let q = DMatrix::from_diagonal(&interleave(&inst.q.p, &inst.q.v, &flat));
        let r = DMatrix::from_diagonal(&interleave(&inst.r.p, &inst.r.v, &flat));
        for (k, s) in inst.steps.iter().enumerate() {
            let u = DVector::from_iterator(flat.len(), flat.iter().map(|&i| s.control[i]));
            let z = interleave(&s.obs_p, &s.obs_v, &flat);
            let pred = kf.predict(&cur, &u, &q);
            cur = kf.update(&pred, &z, &r).expect("invertible");
            let got = dense_state(&block[k], &flat);
            worst = worst.max((&got.mean - &cur.mean).amax());
            worst = worst.max((&got.cov - &cur.cov).amax());
        }
    }
    worst
}

/// Checks `build_f_b` against the Kronecker construction for every
/// `(N, L)` in `1..=3 × 1..=4` and the explicit single-block case.
pub fn f_b_structure() -> Result<(), String> {
    for n in 1..=3 {
        for l in 1..=4 {
            let (f, b) = build_f_b(n, l, 0.1);
            let (fw, bw) = kron_f_b(n, l, 0.1);
            if f != fw || b != bw {
                return Err(format!("N = {n}, L = {l}: matrices differ"));
            }
        }
    }
    let (f, b) = build_f_b(1, 1, 0.1);
    let fw = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
    let bw = DMatrix::from_row_slice(2, 1, &[0.5 * 0.1 * 0.1, 0.1]);
    if f != fw || b != bw {
        return Err(format!("single block: F = {f}, B = {b}"));
    }
    if (b[(0, 0)] - 0.005).abs() > 1e-15 {
        return Err(format!("B[0] = {}", b[(0, 0)]));
    }
    Ok(())
}

/// Extremes seen while filtering a long synthetic scene with the learned
/// noise models.
#[derive(Clone, Debug)]
pub struct CovarianceStats {
    pub steps: usize,
    pub max_asymmetry: f64,
    pub min_eigenvalue: f64,
    pub min_noise: f64,
    pub floor: f64,
    pub all_finite: bool,
}

/// Runs the full model with a 50-step observation horizon on one
/// synthetic interacting scene.
pub fn covariance_invariants(param_seed: u64) -> CovarianceStats {
    let obs = 49;
    let past = 60;
    let cfg = ModelConfig {
        past_len: past,
        obs_horizon: obs,
        ..ModelConfig::default()
    };
    let behavior = BehaviorConfig {
        past_frames: past,
        ..BehaviorConfig::default()
    };
    let scene = synth_scenes(5, 1, &behavior).remove(0);
    let model = Iaknn::new(cfg.clone()).expect("valid config");
    let mut store = model.init_params(param_seed);
    let mut r = rng(param_seed + 1);
    for (_, p) in store.iter_mut() {
        for v in p.value.data_mut() {
            *v += r.gen_range(-0.05..0.05);
        }
    }
    let prep = PreparedScene::new(&scene, &Standardizer::identity(), &cfg).expect("prepared");
    let pred = model.predict(&store, &prep).expect("forward");
    let mut stats = CovarianceStats {
        steps: pred.estimates.len(),
        max_asymmetry: 0.0,
        min_eigenvalue: f64::INFINITY,
        min_noise: f64::INFINITY,
        floor: cfg.noise.variance_floor,
        all_finite: true,
    };
    for e in &pred.estimates {
        stats.all_finite &= e.is_finite();
        for axis in 0..2 {
            let c = e.dense_covariance(axis);
            stats.max_asymmetry = stats.max_asymmetry.max((&c - c.transpose()).amax());
            let eig = c.symmetric_eigenvalues();
            stats.min_eigenvalue = stats.min_eigenvalue.min(eig.min());
        }
    }
    for q in &pred.noise {
        for part in q {
            for &x in part {
                stats.min_noise = stats.min_noise.min(x);
            }
        }
    }
    stats
}
