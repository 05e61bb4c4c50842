//! Finite-difference gradient cases covering every differentiable
//! component: tape operations, layers, the motion rollout, the noise
//! models, the filter recursion and the full pipeline.

use iaknn::data::{synth_scenes, BehaviorConfig};
use iaknn::filter::{predict_cov_tape, predict_mean_tape, update_tape, NoiseConfig, NoiseModel, TapeEstimate};
use iaknn::interaction::Standardizer;
use iaknn::model::{Iaknn, ModelConfig, PreparedScene};
use iaknn::motion::rollout_tape;
use iaknn::nn::{check_gradients, init_params, Activation, Conv2d, Dense, GradCheckConfig, GradCheckReport, Lstm, NnError, ParamStore, Tape, Var};
use iaknn::tensor::Tensor;

use super::{rng, uniform_vec};

/// Relative-error bound for every case.
pub const GRAD_TOL: f64 = 1e-4;
/// Central-difference step.
pub const GRAD_EPS: f64 = 1e-5;

fn cfg() -> GradCheckConfig {
    GradCheckConfig {
        eps: GRAD_EPS,
        per_tensor: 12,
        ..GradCheckConfig::default()
    }
}

fn store_of(seed: u64, entries: &[(&str, &[usize], f64, f64)]) -> ParamStore {
    let mut r = rng(seed);
    let mut s = ParamStore::new();
    for &(name, shape, lo, hi) in entries {
        let len = shape.iter().product();
        s.insert(name, Tensor::new(shape.to_vec(), uniform_vec(&mut r, len, lo, hi)).unwrap());
    }
    s
}

/// Random fixed projection so every output entry gets a distinct weight.
fn project(tape: &mut Tape, y: Var, seed: u64) -> Var {
    let len = tape.value(y).len();
    let w = tape.constant(Tensor::vector(uniform_vec(&mut rng(seed), len, -1.0, 1.0)));
    let y = tape.reshape(y, &[len]);
    let wy = tape.mul(w, y);
    let sq = tape.square(y);
    let sq = tape.scale(sq, 0.1);
    let both = tape.concat(&[wy, sq]);
    tape.sum(both)
}

/// Adds uniform noise to every parameter so that no gradient path sits at
/// its near-zero initialization.
fn jitter(store: &mut ParamStore, seed: u64, scale: f64) {
    let mut r = rng(seed);
    for (_, p) in store.iter_mut() {
        let n = p.value.len();
        let noise = uniform_vec(&mut r, n, -scale, scale);
        for (v, e) in p.value.data_mut().iter_mut().zip(noise) {
            *v += e;
        }
    }
}

fn run(name: &str, store: &ParamStore, f: impl Fn(&mut Tape, &ParamStore) -> Result<Var, NnError>) -> (String, GradCheckReport) {
    let report = check_gradients(store, &cfg(), f).unwrap_or_else(|e| panic!("{name}: {e}"));
    (name.to_string(), report)
}

pub fn elementwise_ops() -> (String, GradCheckReport) {
    let s = store_of(1, &[("a", &[5], -1.5, 1.5), ("b", &[5], 0.5, 2.0)]);
    run("tape elementwise ops", &s, |t, s| {
        let a = t.param(s, "a")?;
        let b = t.param(s, "b")?;
        let parts = [
            t.add(a, b),
            t.sub(a, b),
            t.mul(a, b),
            t.div(a, b),
            t.scale(a, -1.7),
            t.offset(b, 0.3),
            t.sigmoid(a),
            t.tanh(a),
            t.relu(a),
            t.softplus(a),
            t.square(a),
        ];
        let all = t.concat(&parts);
        Ok(project(t, all, 101))
    })
}

pub fn structural_ops() -> (String, GradCheckReport) {
    let s = store_of(2, &[("w", &[3, 4], -1.0, 1.0), ("x", &[4], -1.0, 1.0), ("m", &[3, 2], -1.0, 1.0)]);
    run("tape matvec/slice/gather/reshape/cumsum/broadcast", &s, |t, s| {
        let w = t.param(s, "w")?;
        let x = t.param(s, "x")?;
        let m = t.param(s, "m")?;
        let y = t.matvec(w, x);
        let sl = t.slice(y, 1, 2);
        let g = t.gather(x, vec![3, 0, 0, 2]);
        let cs = t.cumsum_rows(m);
        let br = t.broadcast_rows(sl, 3);
        let prod = t.mul(cs, br);
        let flat = t.reshape(prod, &[6]);
        let all = t.concat(&[y, g, flat]);
        Ok(project(t, all, 102))
    })
}

pub fn conv_op() -> (String, GradCheckReport) {
    let s = store_of(3, &[("x", &[4, 5, 2], -1.0, 1.0), ("w", &[3, 3, 3, 2], -1.0, 1.0), ("b", &[3], -0.5, 0.5)]);
    run("tape conv2d", &s, |t, s| {
        let x = t.param(s, "x")?;
        let w = t.param(s, "w")?;
        let b = t.param(s, "b")?;
        let y = t.conv2d(x, w, b, 2, 1);
        Ok(project(t, y, 103))
    })
}

pub fn dense_layers() -> Vec<(String, GradCheckReport)> {
    [Activation::Identity, Activation::Relu, Activation::Tanh]
        .into_iter()
        .enumerate()
        .map(|(i, act)| {
            let layer = Dense::new("d", 4, 3, act);
            let mut s = init_params(&layer.param_specs(), 10 + i as u64);
            jitter(&mut s, 20 + i as u64, 0.3);
            let x = uniform_vec(&mut rng(30 + i as u64), 4, -1.0, 1.0);
            run(&format!("dense layer ({act:?})"), &s, move |t, s| {
                let xv = t.constant(Tensor::vector(x.clone()));
                let y = layer.forward(t, s, xv)?;
                Ok(project(t, y, 104))
            })
        })
        .collect()
}

pub fn conv_layer() -> (String, GradCheckReport) {
    let layer = Conv2d {
        prefix: "c".into(),
        in_channels: 2,
        out_channels: 3,
        kernel: 3,
        stride: 1,
        padding: 1,
        activation: Activation::Relu,
    };
    let mut s = init_params(&layer.param_specs(), 4);
    jitter(&mut s, 5, 0.3);
    let x = uniform_vec(&mut rng(6), 4 * 4 * 2, -1.0, 1.0);
    run("conv2d layer", &s, move |t, s| {
        let xv = t.constant(Tensor::new(vec![4, 4, 2], x.clone()).unwrap());
        let y = layer.forward(t, s, xv)?;
        Ok(project(t, y, 105))
    })
}

pub fn lstm_layer() -> (String, GradCheckReport) {
    let layer = Lstm::new("l", 3, 4);
    let mut s = init_params(&layer.param_specs(), 7);
    jitter(&mut s, 8, 0.5);
    let xs: Vec<Vec<f64>> = (0..4).map(|k| uniform_vec(&mut rng(40 + k), 3, -1.0, 1.0)).collect();
    run("lstm layer (4 steps)", &s, move |t, s| {
        let mut st = layer.zero_state(t);
        let mut outs = Vec::new();
        for x in &xs {
            let xv = t.constant(Tensor::vector(x.clone()));
            st = layer.step(t, s, xv, st)?;
            outs.push(st.hidden);
        }
        outs.push(st.cell);
        let all = t.concat(&outs);
        Ok(project(t, all, 106))
    })
}

pub fn motion_rollout() -> (String, GradCheckReport) {
    let (l, n) = (6, 2);
    let s = store_of(9, &[("accel", &[l, 2 * n], -3.0, 3.0), ("p", &[2 * n], -5.0, 5.0), ("v", &[2 * n], 5.0, 25.0)]);
    run("motion rollout", &s, move |t, s| {
        let a = t.param(s, "accel")?;
        let p = t.param(s, "p")?;
        let v = t.param(s, "v")?;
        let (pos, vel) = rollout_tape(t, p, v, a, 0.1);
        let all = t.concat(&[pos, vel]);
        Ok(project(t, all, 107))
    })
}

pub fn noise_model() -> (String, GradCheckReport) {
    let model = NoiseModel::new("noise_q", 4, NoiseConfig { hidden: 5, variance_floor: 1e-6 });
    let mut s = init_params(&model.param_specs(), 11);
    jitter(&mut s, 12, 0.3);
    let xs: Vec<Vec<f64>> = (0..3).map(|k| uniform_vec(&mut rng(50 + k), 8, -1.0, 1.0)).collect();
    run("noise model (3 steps)", &s, move |t, s| {
        let mut st = model.zero_state(t);
        let mut outs = Vec::new();
        for x in &xs {
            let xv = t.constant(Tensor::vector(x.clone()));
            let (p, v, ns) = model.step(t, s, xv, st)?;
            st = ns;
            outs.push(p);
            outs.push(v);
        }
        let all = t.concat(&outs);
        Ok(project(t, all, 108))
    })
}

/// Predict/update recursion with control and noise as parameters.
pub fn filter_recursion() -> (String, GradCheckReport) {
    let m = 4;
    let s = store_of(
        13,
        &[
            ("u", &[3, m], -2.0, 2.0),
            ("q", &[3, 2 * m], -1.0, 1.0),
            ("r", &[3, 2 * m], -1.0, 1.0),
            ("obs", &[3, 2 * m], -1.0, 1.0),
        ],
    );
    run("filter recursion (3 steps)", &s, move |t, s| {
        let u = t.param(s, "u")?;
        let q = t.param(s, "q")?;
        let r = t.param(s, "r")?;
        let obs = t.param(s, "obs")?;
        let init = iaknn::filter::FilterEstimate::new(2, 1, vec![0.5, 1.0, -0.5, 0.2], vec![10.0, 12.0, 0.1, -0.3], 1.0);
        let mut cur = TapeEstimate::constant(t, &init);
        let mut outs = Vec::new();
        for k in 0..3 {
            let uk = t.slice(u, k * m, m);
            let qk = t.slice(q, k * 2 * m, 2 * m);
            let qk = t.softplus(qk);
            let rk = t.slice(r, k * 2 * m, 2 * m);
            let rk = t.softplus(rk);
            let ok = t.slice(obs, k * 2 * m, 2 * m);
            let (sp, sv) = predict_mean_tape(t, &cur, uk, 0.1);
            let qp = t.slice(qk, 0, m);
            let qv = t.slice(qk, m, m);
            let (pp, pv, vv) = predict_cov_tape(t, &cur, qp, qv, 0.1);
            let op0 = t.slice(ok, 0, m);
            let op = t.add(op0, sp);
            let ov0 = t.slice(ok, m, m);
            let ov = t.add(ov0, sv);
            let rp = t.slice(rk, 0, m);
            let rv = t.slice(rk, m, m);
            let pred = TapeEstimate { p: sp, v: sv, pp, pv, vv };
            cur = update_tape(t, &pred, op, ov, rp, rv);
            outs.extend([cur.p, cur.v, cur.pp, cur.pv, cur.vv]);
        }
        let all = t.concat(&outs);
        Ok(project(t, all, 109))
    })
}

/// Full interaction → motion → filter pipeline: `N = 2`, `L = 2`, three
/// filter steps.
pub fn end_to_end(use_filter: bool) -> (String, GradCheckReport) {
    let cfg = ModelConfig {
        use_filter,
        ..ModelConfig::tiny(2, 2, 6, 2)
    };
    let behavior = BehaviorConfig {
        agents: 2,
        past_frames: 6,
        future_frames: 2,
        ..BehaviorConfig::default()
    };
    let scene = synth_scenes(21, 1, &behavior).remove(0);
    let model = Iaknn::new(cfg.clone()).unwrap();
    let mut s = model.init_params(3);
    jitter(&mut s, 4, 0.2);
    let prep = PreparedScene::new(&scene, &Standardizer::identity(), &cfg).unwrap();
    let name = if use_filter { "end-to-end pipeline" } else { "end-to-end pipeline without filter" };
    run(name, &s, move |t, s| Ok(model.forward(t, s, &prep, None)?.loss))
}

pub fn all_cases() -> Vec<(String, GradCheckReport)> {
    let mut out = vec![elementwise_ops(), structural_ops(), conv_op()];
    out.extend(dense_layers());
    out.push(conv_layer());
    out.push(lstm_layer());
    out.push(motion_rollout());
    out.push(noise_model());
    out.push(filter_recursion());
    out.push(end_to_end(true));
    out.push(end_to_end(false));
    out
}
