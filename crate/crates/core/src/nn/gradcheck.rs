//! Central finite-difference checks of tape gradients.

use super::tape::{Tape, Var};
use super::{NnError, ParamStore};

/// Outcome of [`check_gradients`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// `(param, index, analytic, numeric)` of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub eps: f64,
    /// Denominator floor so that near-zero gradient pairs compare absolutely.
    pub floor: f64,
    /// Entries sampled per parameter tensor (evenly spaced).
    pub per_tensor: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            floor: 1e-6,
            per_tensor: 8,
        }
    }
}

pub fn relative_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

fn sample_indices(len: usize, k: usize) -> Vec<usize> {
    if len <= k {
        return (0..len).collect();
    }
    let mut idx: Vec<usize> = (0..k).map(|i| i * (len - 1) / (k - 1).max(1)).collect();
    idx.dedup();
    idx
}

/// Compares the analytic gradient of the scalar built by `f` with central
/// differences for a sample of entries of every parameter in `store`.
pub fn check_gradients<F>(store: &ParamStore, cfg: &GradCheckConfig, f: F) -> Result<GradCheckReport, NnError>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var, NnError>,
{
    let eval = |s: &ParamStore| -> Result<f64, NnError> {
        let mut tape = Tape::new();
        let loss = f(&mut tape, s)?;
        Ok(tape.value(loss).item())
    };
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let grads = tape.backward(loss)?;
    let analytic: std::collections::BTreeMap<String, _> = tape.param_grads(&grads).into_iter().collect();

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    let mut probe = store.clone();
    for (name, p) in store.iter() {
        for k in sample_indices(p.value.len(), cfg.per_tensor) {
            let orig = p.value.data()[k];
            probe.value_mut(name)?.data_mut()[k] = orig + cfg.eps;
            let up = eval(&probe)?;
            probe.value_mut(name)?.data_mut()[k] = orig - cfg.eps;
            let down = eval(&probe)?;
            probe.value_mut(name)?.data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * cfg.eps);
            let a = analytic.get(name).map_or(0.0, |g| g.data()[k]);
            let rel = relative_error(a, numeric, cfg.floor);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel.max(report.max_rel_error);
                report.worst = Some((name.clone(), k, a, numeric));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn detects_correct_gradient() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::vector(vec![0.3, -1.2, 2.0]));
        let r = check_gradients(&s, &GradCheckConfig::default(), |t, s| {
            let w = t.param(s, "w")?;
            let q = t.tanh(w);
            let sq = t.square(q);
            Ok(t.sum(sq))
        })
        .unwrap();
        assert_eq!(r.checked, 3);
        assert!(r.max_rel_error < 1e-7, "{r:?}");
    }

    #[test]
    fn sampling_is_spread() {
        assert_eq!(sample_indices(3, 8), vec![0, 1, 2]);
        assert_eq!(sample_indices(100, 3), vec![0, 49, 99]);
    }
}
