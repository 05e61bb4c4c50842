//! Independent reference implementations used by the integration and
//! acceptance tests. Everything here is written as plain loops or dense
//! matrix algebra, without calling into the library code under test.

#![allow(dead_code)]

pub mod filtercases;
pub mod gradcases;
pub mod metriccases;
pub mod ngsim_proxy;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `y_i = act(Σ_j W[i][j]·x_j + b_i)` with `W` row-major `[out, in]`.
pub fn dense_loop(w: &[f64], b: &[f64], x: &[f64], act: fn(f64) -> f64) -> Vec<f64> {
    let (out, inp) = (b.len(), x.len());
    (0..out)
        .map(|i| {
            let mut s = b[i];
            for j in 0..inp {
                s += w[i * inp + j] * x[j];
            }
            act(s)
        })
        .collect()
}

/// Zero-padded cross-correlation: input `[h, w, c]`, weight `[o, k, k, c]`,
/// output `[h', w', o]`, all row-major.
#[allow(clippy::too_many_arguments)]
pub fn conv_loop(x: &[f64], h: usize, w: usize, c: usize, wt: &[f64], bias: &[f64], k: usize, stride: usize, pad: usize) -> (Vec<f64>, usize, usize) {
    let o = bias.len();
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; oh * ow * o];
    for oy in 0..oh {
        for ox in 0..ow {
            for oc in 0..o {
                let mut s = bias[oc];
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            continue;
                        }
                        for ic in 0..c {
                            s += wt[((oc * k + ky) * k + kx) * c + ic] * x[(iy as usize * w + ix as usize) * c + ic];
                        }
                    }
                }
                out[(oy * ow + ox) * o + oc] = s;
            }
        }
    }
    (out, oh, ow)
}

/// One LSTM step with gates `(i, f, g, o)` stacked in that order.
pub fn lstm_loop(w_ih: &[f64], w_hh: &[f64], b: &[f64], x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hid = h.len();
    let inp = x.len();
    let pre = |row: usize| {
        let mut s = b[row];
        for j in 0..inp {
            s += w_ih[row * inp + j] * x[j];
        }
        for j in 0..hid {
            s += w_hh[row * hid + j] * h[j];
        }
        s
    };
    let mut h_new = vec![0.0; hid];
    let mut c_new = vec![0.0; hid];
    for u in 0..hid {
        let i = sigmoid(pre(u));
        let f = sigmoid(pre(hid + u));
        let g = pre(2 * hid + u).tanh();
        let o = sigmoid(pre(3 * hid + u));
        c_new[u] = f * c[u] + i * g;
        h_new[u] = o * c_new[u].tanh();
    }
    (h_new, c_new)
}

/// `F = I_{NL} ⊗ [[1, dt], [0, 1]]`, `B = I_{NL} ⊗ [dt²/2, dt]ᵀ`.
pub fn kron_f_b(n: usize, l: usize, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let blocks = n * l;
    let eye = DMatrix::<f64>::identity(blocks, blocks);
    let f_blk = DMatrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]);
    let b_blk = DMatrix::from_row_slice(2, 1, &[0.5 * dt * dt, dt]);
    (eye.kronecker(&f_blk), eye.kronecker(&b_blk))
}

/// Mean and covariance of a dense linear-Gaussian state.
#[derive(Clone, Debug)]
pub struct Gaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Textbook predict/update with full observation `H = I`:
/// `x⁻ = F x + B u`, `P⁻ = F P Fᵀ + Q`, `K = P⁻ (P⁻ + R)⁻¹`,
/// `x̂ = x⁻ + K (z − x⁻)`, `P̂ = (I − K) P⁻`.
pub fn textbook_kalman_step(prev: &Gaussian, f: &DMatrix<f64>, b: &DMatrix<f64>, u: &DVector<f64>, q: &DMatrix<f64>, z: &DVector<f64>, r: &DMatrix<f64>) -> Gaussian {
    let mean = f * &prev.mean + b * u;
    let cov = f * &prev.cov * f.transpose() + q;
    let s = &cov + r;
    let k = &cov * s.try_inverse().expect("innovation covariance invertible");
    let n = cov.nrows();
    let mean = &mean + &k * (z - &mean);
    let post = (DMatrix::identity(n, n) - &k) * &cov;
    Gaussian {
        mean,
        cov: (&post + post.transpose()) * 0.5,
    }
}

/// Root mean squared displacement over samples and the first `horizon` steps.
pub fn rmse_loop(pred: &[Vec<[f64; 2]>], truth: &[Vec<[f64; 2]>], horizon: usize) -> f64 {
    let mut s = 0.0;
    let mut n = 0usize;
    for i in 0..pred.len() {
        for k in 0..horizon {
            let dx = pred[i][k][0] - truth[i][k][0];
            let dy = pred[i][k][1] - truth[i][k][1];
            s += dx * dx + dy * dy;
            n += 1;
        }
    }
    (s / n as f64).sqrt()
}

/// Mean of `−log N(x | m, Σ)` using `det` and `Σ⁻¹` directly.
pub fn nll_loop(mean: &[Vec<[f64; 2]>], cov: &[Vec<[f64; 3]>], truth: &[Vec<[f64; 2]>], horizon: usize) -> f64 {
    let mut s = 0.0;
    let mut n = 0usize;
    for i in 0..mean.len() {
        for k in 0..horizon {
            let [a, b, d] = cov[i][k];
            let det = a * d - b * b;
            let (rx, ry) = (truth[i][k][0] - mean[i][k][0], truth[i][k][1] - mean[i][k][1]);
            let quad = (d * rx * rx - 2.0 * b * rx * ry + a * ry * ry) / det;
            let density = (-0.5 * quad).exp() / (2.0 * std::f64::consts::PI * det.sqrt());
            s += -density.ln();
            n += 1;
        }
    }
    s / n as f64
}

/// Random symmetric positive-definite 2×2 as `[a, b, d]`.
pub fn random_spd2(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let (l11, l21, l22) = (rng.gen_range(0.3..2.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.3..2.0));
    [l11 * l11, l11 * l21, l21 * l21 + l22 * l22]
}

/// Loss over timestamps `t`, agents `i`, flat entries: Σ‖Ŝ − G‖² / ((L'+1)·N).
/// `est[t] = (p, v)` in flat `(axis, agent, step)` order.
pub fn loss_loop(est: &[(Vec<f64>, Vec<f64>)], truth: &[(Vec<f64>, Vec<f64>)], agents: usize, horizon: usize, positions_only: bool) -> f64 {
    let mut s = 0.0;
    for t in 0..est.len() {
        for i in 0..agents {
            for axis in 0..2 {
                for k in 0..horizon {
                    let idx = axis * agents * horizon + i * horizon + k;
                    s += (est[t].0[idx] - truth[t].0[idx]).powi(2);
                    if !positions_only {
                        s += (est[t].1[idx] - truth[t].1[idx]).powi(2);
                    }
                }
            }
        }
    }
    s / (est.len() * agents) as f64
}
