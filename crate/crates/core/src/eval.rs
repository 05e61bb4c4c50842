//! Forecast metrics, the constant-velocity baseline and evaluation reports.

use std::f64::consts::PI;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::SceneWindow;
use crate::interaction::Standardizer;
use crate::model::{Iaknn, PreparedScene};
use crate::nn::{NnError, ParamStore};

/// Evaluation horizons in steps (1 s to 5 s at 10 Hz).
pub const HORIZONS: [usize; 5] = [10, 20, 30, 40, 50];
/// Radius for the hit-rate metric, meters.
pub const HIT_RADIUS: f64 = 0.5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("covariance at sample {sample}, step {step} is not positive semidefinite (eigenvalue {eigenvalue})")]
    NotPsd { sample: usize, step: usize, eigenvalue: f64 },
    #[error("misaligned inputs: {0}")]
    Shape(String),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
}

/// A position trajectory, one `[x, y]` per future step.
pub type Trajectory = Vec<[f64; 2]>;

fn check_aligned(a: &[Trajectory], b: &[Trajectory], horizon: usize) -> Result<(), EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::Shape(format!("{} predictions vs {} truths", a.len(), b.len())));
    }
    if a.iter().chain(b).any(|t| t.len() < horizon) {
        return Err(EvalError::Shape(format!("trajectory shorter than horizon {horizon}")));
    }
    Ok(())
}

/// Root of the mean squared displacement over all samples and the first
/// `horizon` steps.
pub fn rmse(pred: &[Trajectory], truth: &[Trajectory], horizon: usize) -> Result<f64, EvalError> {
    check_aligned(pred, truth, horizon)?;
    let mut sum = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        for k in 0..horizon {
            let (dx, dy) = (p[k][0] - t[k][0], p[k][1] - t[k][1]);
            sum += dx * dx + dy * dy;
        }
    }
    let count = (pred.len() * horizon).max(1);
    Ok((sum / count as f64).sqrt())
}

/// Share of predicted positions within `radius` of the truth.
pub fn hit_rate(pred: &[Trajectory], truth: &[Trajectory], horizon: usize, radius: f64) -> Result<f64, EvalError> {
    check_aligned(pred, truth, horizon)?;
    let hits = pred
        .iter()
        .zip(truth)
        .flat_map(|(p, t)| (0..horizon).map(move |k| (p[k][0] - t[k][0]).hypot(p[k][1] - t[k][1])))
        .filter(|&d| d <= radius)
        .count();
    Ok(hits as f64 / (pred.len() * horizon).max(1) as f64)
}

/// Symmetric 2×2 covariance `[[a, b], [b, d]]` as `[a, b, d]`.
pub type Cov2 = [f64; 3];

/// Negative log density of `x` under `N(mean, cov)`, with eigenvalues of
/// `cov` raised to at least `floor`.
pub fn gaussian_nll(mean: [f64; 2], cov: Cov2, x: [f64; 2], floor: f64) -> Result<f64, f64> {
    let [a, b, d] = cov;
    let mid = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let (l1, l2) = (mid + rad, mid - rad);
    if l2 < -1e-9 {
        return Err(l2);
    }
    // eigenvector of l1
    let (ux, uy) = if b.abs() > 1e-300 {
        let (x, y) = (l1 - d, b);
        let n = x.hypot(y);
        (x / n, y / n)
    } else if a >= d {
        (1.0, 0.0)
    } else {
        (0.0, 1.0)
    };
    let (e1, e2) = (l1.max(floor), l2.max(floor));
    let (rx, ry) = (x[0] - mean[0], x[1] - mean[1]);
    let c1 = rx * ux + ry * uy;
    let c2 = -rx * uy + ry * ux;
    Ok((2.0 * PI).ln() + 0.5 * (e1 * e2).ln() + 0.5 * (c1 * c1 / e1 + c2 * c2 / e2))
}

/// Mean per-position negative log-likelihood over all samples and the
/// first `horizon` steps.
pub fn nll(mean: &[Trajectory], cov: &[Vec<Cov2>], truth: &[Trajectory], horizon: usize, floor: f64) -> Result<f64, EvalError> {
    check_aligned(mean, truth, horizon)?;
    if cov.len() != mean.len() || cov.iter().any(|c| c.len() < horizon) {
        return Err(EvalError::Shape("covariances do not cover the predictions".into()));
    }
    // the constant is added after averaging so the mode value is exact
    let ln2pi = (2.0 * PI).ln();
    let mut sum = 0.0;
    for (s, ((m, c), t)) in mean.iter().zip(cov).zip(truth).enumerate() {
        for k in 0..horizon {
            let v = gaussian_nll(m[k], c[k], t[k], floor).map_err(|eigenvalue| EvalError::NotPsd {
                sample: s,
                step: k,
                eigenvalue,
            })?;
            sum += v - ln2pi;
        }
    }
    Ok(ln2pi + sum / (mean.len() * horizon).max(1) as f64)
}

/// Linear extrapolation of every agent from its last past position and
/// velocity over `steps` future frames.
pub fn cv_baseline(scene: &SceneWindow, steps: usize, dt: f64) -> Vec<Trajectory> {
    scene
        .past
        .iter()
        .map(|t| {
            let f = t.frames.last().expect("non-empty past");
            (1..=steps)
                .map(|k| {
                    let s = k as f64 * dt;
                    [f.pos[0] + f.vel[0] * s, f.pos[1] + f.vel[1] * s]
                })
                .collect()
        })
        .collect()
}

/// True future positions per agent.
pub fn future_positions(scene: &SceneWindow, steps: usize) -> Vec<Trajectory> {
    scene
        .future
        .iter()
        .map(|t| t.frames.iter().take(steps).map(|f| f.pos).collect())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub model: String,
    pub horizon_s: f64,
    pub rmse_m: f64,
    /// `None` for models without a predictive covariance.
    pub nll: Option<f64>,
    pub hit_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scene_count: usize,
    pub agent_count: usize,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn row(&self, model: &str, horizon_s: f64) -> Option<&EvalRow> {
        self.rows
            .iter()
            .find(|r| r.model == model && (r.horizon_s - horizon_s).abs() < 1e-9)
    }

    pub fn write_json(&self, path: &Path) -> Result<(), EvalError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| EvalError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        std::fs::write(path, text + "\n").map_err(|e| EvalError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })
    }

    /// Flat CSV `model, horizon_s, rmse_m, nll` (empty `nll` when absent).
    pub fn write_csv(&self, path: &Path) -> Result<(), EvalError> {
        let io = |e: csv::Error| EvalError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        };
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record(["model", "horizon_s", "rmse_m", "nll"]).map_err(io)?;
        for r in &self.rows {
            w.write_record([
                r.model.clone(),
                format!("{}", r.horizon_s),
                format!("{:.9}", r.rmse_m),
                r.nll.map(|v| format!("{v:.9}")).unwrap_or_default(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| EvalError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })
    }
}

/// Per-scene predictions of every evaluated model.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenePredictions {
    pub truth: Vec<Trajectory>,
    pub iaknn: Vec<Trajectory>,
    pub iaknn_cov: Vec<Vec<Cov2>>,
    pub nofl: Vec<Trajectory>,
    pub cv: Vec<Trajectory>,
}

fn flat_to_trajectories(p: &[f64], n: usize, l: usize) -> Vec<Trajectory> {
    (0..n)
        .map(|a| (0..l).map(|k| [p[a * l + k], p[n * l + a * l + k]]).collect())
        .collect()
}

pub fn predict_scene(model: &Iaknn, store: &ParamStore, std: &Standardizer, scene: &SceneWindow) -> Result<ScenePredictions, EvalError> {
    let cfg = &model.cfg;
    let (n, l) = (cfg.agents, cfg.horizon);
    let prep = PreparedScene::new(scene, std, cfg)?;
    let pred = model.predict(store, &prep)?;
    let nofl = flat_to_trajectories(&pred.motion.p, n, l);
    let (iaknn, iaknn_cov) = match &pred.filtered {
        Some(f) => {
            let cov = (0..n)
                .map(|a| {
                    (0..l)
                        .map(|k| [f.position_variance(0, a, k), 0.0, f.position_variance(1, a, k)])
                        .collect()
                })
                .collect();
            (flat_to_trajectories(&f.p, n, l), cov)
        }
        None => (nofl.clone(), vec![vec![[0.0; 3]; l]; n]),
    };
    Ok(ScenePredictions {
        truth: future_positions(scene, l),
        iaknn,
        iaknn_cov,
        nofl,
        cv: cv_baseline(scene, l, cfg.dt),
    })
}

/// Scores the model, its motion-only ablation and the constant-velocity
/// baseline at every horizon in [`HORIZONS`] that fits the model horizon.
pub fn evaluate(model: &Iaknn, store: &ParamStore, std: &Standardizer, scenes: &[SceneWindow]) -> Result<EvalReport, EvalError> {
    let per_scene: Vec<ScenePredictions> = scenes
        .par_iter()
        .map(|s| predict_scene(model, store, std, s))
        .collect::<Result<_, _>>()?;
    let gather = |f: &dyn Fn(&ScenePredictions) -> &Vec<Trajectory>| -> Vec<Trajectory> {
        per_scene.iter().flat_map(|p| f(p).iter().cloned()).collect()
    };
    let truth = gather(&|p| &p.truth);
    let iaknn = gather(&|p| &p.iaknn);
    let nofl = gather(&|p| &p.nofl);
    let cv = gather(&|p| &p.cv);
    let cov: Vec<Vec<Cov2>> = per_scene.iter().flat_map(|p| p.iaknn_cov.iter().cloned()).collect();
    let floor = model.cfg.noise.variance_floor;
    let dt = model.cfg.dt;

    let mut rows = Vec::new();
    for &h in HORIZONS.iter().filter(|&&h| h <= model.cfg.horizon) {
        let horizon_s = (h as f64 * dt * 1e6).round() / 1e6;
        let with_cov = model.cfg.use_filter && !truth.is_empty();
        rows.push(EvalRow {
            model: "iaknn".into(),
            horizon_s,
            rmse_m: rmse(&iaknn, &truth, h)?,
            nll: if with_cov { Some(nll(&iaknn, &cov, &truth, h, floor)?) } else { None },
            hit_rate: hit_rate(&iaknn, &truth, h, HIT_RADIUS)?,
        });
        rows.push(EvalRow {
            model: "iaknn_nofl".into(),
            horizon_s,
            rmse_m: rmse(&nofl, &truth, h)?,
            nll: None,
            hit_rate: hit_rate(&nofl, &truth, h, HIT_RADIUS)?,
        });
        rows.push(EvalRow {
            model: "cv".into(),
            horizon_s,
            rmse_m: rmse(&cv, &truth, h)?,
            nll: None,
            hit_rate: hit_rate(&cv, &truth, h, HIT_RADIUS)?,
        });
    }
    Ok(EvalReport {
        scene_count: scenes.len(),
        agent_count: truth.len(),
        rows,
    })
}
