//! Metric and loss comparisons against loop oracles.

use iaknn::eval::{nll, rmse, Trajectory};
use iaknn::train::loss;
use rand::Rng;

use super::{loss_loop, nll_loop, random_spd2, rmse_loop, rng, uniform_vec};

pub struct MetricDiffs {
    pub rmse: f64,
    pub nll: f64,
}

/// Largest deviation of `rmse` and `nll` from the loop oracles over a
/// random batch at every horizon.
pub fn metric_diffs(seed: u64) -> MetricDiffs {
    let mut r = rng(seed);
    let (samples, steps) = (r.gen_range(1..12), 50);
    let traj = |r: &mut rand_chacha::ChaCha8Rng, lo: f64, hi: f64| -> Vec<Trajectory> {
        (0..samples)
            .map(|_| (0..steps).map(|_| [r.gen_range(lo..hi), r.gen_range(lo..hi)]).collect())
            .collect()
    };
    let truth = traj(&mut r, -30.0, 30.0);
    let noise = traj(&mut r, -3.0, 3.0);
    let pred: Vec<Trajectory> = truth
        .iter()
        .zip(&noise)
        .map(|(t, e)| t.iter().zip(e).map(|(a, b)| [a[0] + b[0], a[1] + b[1]]).collect())
        .collect();
    let cov: Vec<Vec<[f64; 3]>> = (0..samples).map(|_| (0..steps).map(|_| random_spd2(&mut r)).collect()).collect();
    let mut d = MetricDiffs { rmse: 0.0, nll: 0.0 };
    for h in [1, 10, 20, 30, 40, 50] {
        d.rmse = d.rmse.max((rmse(&pred, &truth, h).unwrap() - rmse_loop(&pred, &truth, h)).abs());
        d.nll = d.nll.max((nll(&pred, &cov, &truth, h, 1e-6).unwrap() - nll_loop(&pred, &cov, &truth, h)).abs());
    }
    d
}

/// Deviation of the training loss from the loop oracle on a random
/// instance.
pub fn loss_diff(seed: u64, positions_only: bool) -> f64 {
    let mut r = rng(seed);
    let (agents, horizon, frames) = (r.gen_range(1..5), r.gen_range(1..8), r.gen_range(1..6));
    let m = 2 * agents * horizon;
    let pair = |r: &mut rand_chacha::ChaCha8Rng| (uniform_vec(r, m, -1.0, 1.0), uniform_vec(r, m, -1.0, 1.0));
    let est: Vec<_> = (0..frames).map(|_| pair(&mut r)).collect();
    let truth: Vec<_> = (0..frames).map(|_| pair(&mut r)).collect();
    (loss(&est, &truth, agents, positions_only).unwrap() - loss_loop(&est, &truth, agents, horizon, positions_only)).abs()
}
