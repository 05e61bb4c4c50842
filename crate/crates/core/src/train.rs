//! Mini-batch training with Adam and global-norm clipping, plus the
//! checkpoint format.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, SceneWindow};
use crate::interaction::{build_features, Standardizer};
use crate::model::{Iaknn, ModelConfig, PreparedScene};
use crate::nn::checkpoint::StoreDocument;
use crate::nn::{adam_step, clip_global_norm, AdamConfig, NnError, ParamStore, Tape};
use crate::tensor::Tensor;

type SceneGrads = (f64, Vec<(String, Tensor)>);

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss {loss} on scene {scene}")]
    NonFiniteLoss { scene: String, loss: f64 },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training interrupted after {0} batches")]
    Interrupted(usize),
    #[error("checkpoint format version {found} is not supported by this build (expected {expected}); retrain with this release or convert the file")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: String, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_grad_norm: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Probability of feeding the true acceleration back into the decoder.
    pub teacher_forcing: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            max_grad_norm: 5.0,
            epochs: 20,
            batch_size: 4,
            seed: 0,
            teacher_forcing: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if !(self.eps > 0.0 && self.max_grad_norm > 0.0) {
            return bad("eps and max_grad_norm must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(0.0..=1.0).contains(&self.teacher_forcing) {
            return bad("teacher_forcing must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// Everything needed to rebuild a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub standardizer: Standardizer,
    pub store: StoreDocument,
    /// Mean training loss per epoch.
    pub losses: Vec<f64>,
}

impl Checkpoint {
    pub fn params(&self) -> Result<ParamStore, NnError> {
        self.store.to_store()
    }
}

/// Writes `ck` to a sibling temporary file and renames it into place.
pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), TrainError> {
    let io = |source| TrainError::Io {
        path: path.display().to_string(),
        source,
    };
    let tmp = temp_sibling(path);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        serde_json::to_writer(&mut f, ck).map_err(std::io::Error::other)?;
        f.write_all(b"\n")?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(io)
}

pub fn temp_sibling(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TrainError> {
    let text = fs::read_to_string(path).map_err(|source| TrainError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let bad = |msg: String| TrainError::Checkpoint {
        path: path.display().to_string(),
        msg,
    };
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    let found = raw
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| bad("missing format_version".into()))? as u32;
    if found != CHECKPOINT_FORMAT_VERSION {
        return Err(TrainError::VersionMismatch {
            found,
            expected: CHECKPOINT_FORMAT_VERSION,
        });
    }
    let ck: Checkpoint = serde_json::from_value(raw).map_err(|e| bad(e.to_string()))?;
    ck.model.validate()?;
    Ok(ck)
}

/// Loss curve CSV with columns `epoch, mean_loss` (epochs from 1).
pub fn write_loss_curve(path: &Path, losses: &[f64]) -> Result<(), TrainError> {
    let io = |e: csv::Error| TrainError::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(["epoch", "mean_loss"]).map_err(io)?;
    for (k, l) in losses.iter().enumerate() {
        w.write_record([(k + 1).to_string(), format!("{l:.17e}")]).map_err(io)?;
    }
    w.flush().map_err(|source| TrainError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Knobs that do not affect the result of an uninterrupted run.
#[derive(Default)]
pub struct TrainHooks<'a> {
    /// Stop with [`TrainError::Interrupted`] after this many batches.
    pub max_batches: Option<usize>,
    pub on_epoch: Option<&'a mut dyn FnMut(usize, f64)>,
}

fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over a simple combination
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn teacher_masks(cfg: &ModelConfig, ratio: f64, seed: u64) -> Option<Vec<Vec<bool>>> {
    if ratio <= 0.0 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = cfg.obs_horizon + 2;
    Some(
        (0..frames)
            .map(|_| (0..cfg.horizon).map(|_| rng.gen_bool(ratio)).collect())
            .collect(),
    )
}

/// Loss and parameter gradients of one scene.
pub fn scene_gradients(
    model: &Iaknn,
    store: &ParamStore,
    scene: &PreparedScene,
    teacher: Option<&[Vec<bool>]>,
) -> Result<(f64, Vec<(String, Tensor)>), TrainError> {
    let mut tape = Tape::new();
    let g = model.forward(&mut tape, store, scene, teacher)?;
    let loss = tape.value(g.loss).item();
    if !loss.is_finite() {
        return Err(TrainError::NonFiniteLoss {
            scene: scene.id.clone(),
            loss,
        });
    }
    let grads = tape.backward(g.loss)?;
    Ok((loss, tape.param_grads(&grads)))
}

/// Standardizer fitted on `scenes` and the prepared scenes.
pub fn prepare(scenes: &[SceneWindow], cfg: &ModelConfig) -> Result<(Standardizer, Vec<PreparedScene>), TrainError> {
    let feats = scenes
        .par_iter()
        .map(build_features)
        .collect::<Result<Vec<_>, _>>()?;
    let std = Standardizer::fit(&feats);
    let prepared = prepare_with(scenes, &std, cfg)?;
    Ok((std, prepared))
}

pub fn prepare_with(scenes: &[SceneWindow], std: &Standardizer, cfg: &ModelConfig) -> Result<Vec<PreparedScene>, TrainError> {
    Ok(scenes
        .par_iter()
        .map(|s| PreparedScene::new(s, std, cfg))
        .collect::<Result<Vec<_>, _>>()?)
}

/// Trains from a fresh initialization seeded by `cfg.seed`. Scenes in a
/// batch run in parallel; their gradients are summed in batch order and
/// averaged before clipping and the Adam step.
pub fn train(
    scenes: &[SceneWindow],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    hooks: TrainHooks<'_>,
) -> Result<Checkpoint, TrainError> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(TrainError::Config("no training scenes".into()));
    }
    let model = Iaknn::new(model_cfg.clone())?;
    let (standardizer, prepared) = prepare(scenes, model_cfg)?;
    let mut store = model.init_params(cfg.seed);
    let adam = cfg.adam();
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut batches = 0usize;
    let mut hooks = hooks;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, epoch as u64, u64::MAX)));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            if hooks.max_batches.is_some_and(|m| batches >= m) {
                return Err(TrainError::Interrupted(batches));
            }
            let results: Vec<Result<SceneGrads, TrainError>> = batch
                .par_iter()
                .map(|&i| {
                    let masks = teacher_masks(model_cfg, cfg.teacher_forcing, mix_seed(cfg.seed, epoch as u64, i as u64));
                    scene_gradients(&model, &store, &prepared[i], masks.as_deref())
                })
                .collect();
            let scale = 1.0 / batch.len() as f64;
            for r in results {
                let (loss, grads) = r?;
                epoch_loss += loss;
                for (name, g) in grads {
                    store.add_grad(&name, &g, scale)?;
                }
            }
            clip_global_norm(&mut store, cfg.max_grad_norm);
            adam_step(&mut store, &adam)?;
            batches += 1;
        }
        let mean = epoch_loss / prepared.len() as f64;
        losses.push(mean);
        if let Some(cb) = hooks.on_epoch.as_mut() {
            cb(epoch + 1, mean);
        }
    }

    Ok(Checkpoint {
        format_version: CHECKPOINT_FORMAT_VERSION,
        model: model_cfg.clone(),
        train: cfg.clone(),
        standardizer,
        store: StoreDocument::from_store(&store),
        losses,
    })
}

/// Sum of squared stacked-state errors over observation frames, divided
/// by `(L' + 1)·N`. Each estimate and truth is a flat `(p, v)` pair.
pub fn loss(estimates: &[(Vec<f64>, Vec<f64>)], truth: &[(Vec<f64>, Vec<f64>)], agents: usize, positions_only: bool) -> Result<f64, TrainError> {
    if estimates.len() != truth.len() || estimates.is_empty() {
        return Err(TrainError::Config("estimate and ground-truth horizons differ".into()));
    }
    let mut total = 0.0;
    for ((ep, ev), (gp, gv)) in estimates.iter().zip(truth) {
        if ep.len() != gp.len() || ev.len() != gv.len() {
            return Err(TrainError::Config("estimate and ground-truth windows differ".into()));
        }
        total += ep.iter().zip(gp).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        if !positions_only {
            total += ev.iter().zip(gv).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
    }
    Ok(total / (estimates.len() * agents) as f64)
}
