use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

use super::ParamStore;

/// Half-width of the uniform distribution used for LSTM weight matrices.
pub const LSTM_INIT_RANGE: f64 = 0.001;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitKind {
    /// Uniform over `[-LSTM_INIT_RANGE, LSTM_INIT_RANGE]`.
    LstmUniform,
    /// Xavier/Glorot uniform with bound `sqrt(6 / (fan_in + fan_out))`.
    Xavier,
    Zero,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: InitKind,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], kind: InitKind) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            kind,
        }
    }
}

/// `(fan_in, fan_out)` for a weight laid out `[out, ..receptive.., in]`.
pub fn fans(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (1, 1),
        1 => (shape[0], shape[0]),
        n => {
            let receptive: usize = shape[1..n - 1].iter().product();
            (shape[n - 1] * receptive, shape[0] * receptive)
        }
    }
}

pub fn xavier_bound(shape: &[usize]) -> f64 {
    let (fi, fo) = fans(shape);
    (6.0 / (fi + fo) as f64).sqrt()
}

/// Initializes every parameter in `specs` from a generator seeded with
/// `seed`. Specs are drawn in the order given.
pub fn init_params(specs: &[ParamSpec], seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for spec in specs {
        let n: usize = spec.shape.iter().product();
        let data: Vec<f64> = match spec.kind {
            InitKind::Zero => vec![0.0; n],
            InitKind::LstmUniform => (0..n)
                .map(|_| rng.gen_range(-LSTM_INIT_RANGE..=LSTM_INIT_RANGE))
                .collect(),
            InitKind::Xavier => {
                let b = xavier_bound(&spec.shape);
                (0..n).map(|_| rng.gen_range(-b..=b)).collect()
            }
        };
        store.insert(
            spec.name.clone(),
            Tensor::new(spec.shape.clone(), data).expect("spec shape"),
        );
    }
    store
}
