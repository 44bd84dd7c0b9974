use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DiffGraph, NodeId, Real};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference half step.
    pub step: f64,
    /// Denominator floor for the relative error.
    pub floor: f64,
    /// Number of parameter entries to check; `None` checks every entry.
    pub samples: Option<usize>,
    /// Check up to this many entries of every parameter instead, so small
    /// tensors are covered next to large ones. Overrides `samples`.
    pub per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-3, floor: 1e-6, samples: None, per_param: None, seed: 0 }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat entry index of the worst entry.
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric gradient at the worst entry.
    pub worst_values: (f64, f64),
    pub checked: usize,
}

/// Compares backward-pass gradients with central differences obtained by
/// replaying the tape. Leaf values are restored before returning.
pub fn grad_check<T: Real>(graph: &mut DiffGraph<T>, loss: NodeId, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    if !(opts.step > 0.0) {
        return Err(Error::invalid(format!("step must be positive, got {}", opts.step)));
    }
    let analytic = graph.backward(loss)?;
    let params: Vec<(String, NodeId)> = graph.params().to_vec();
    let sizes: Vec<usize> = params.iter().map(|(_, id)| graph.value(*id).numel()).collect();
    let total: usize = sizes.iter().sum();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut picks: Vec<usize> = match (opts.per_param, opts.samples) {
        (Some(k), _) => {
            let mut offset = 0;
            let mut picks = Vec::new();
            for &n in &sizes {
                picks.extend(rand::seq::index::sample(&mut rng, n, k.min(n)).into_iter().map(|i| offset + i));
                offset += n;
            }
            picks
        }
        (None, Some(k)) if k < total => rand::seq::index::sample(&mut rng, total, k).into_vec(),
        _ => (0..total).collect(),
    };
    picks.sort_unstable();

    let mut report = GradCheckReport::default();
    let mut offsets = Vec::with_capacity(sizes.len());
    let mut acc = 0;
    for &s in &sizes {
        offsets.push(acc);
        acc += s;
    }

    for flat in picks {
        let p = offsets.partition_point(|&o| o <= flat) - 1;
        let entry = flat - offsets[p];
        let (name, id) = &params[p];
        let original = graph.value(*id).clone();

        let mut eval_at = |delta: f64| -> Result<f64> {
            let mut t = original.clone();
            let v = t.data()[entry].f64() + delta;
            t.data_mut()[entry] = T::of(v);
            graph.set_leaf(*id, t)?;
            graph.recompute()?;
            let l = graph.value(loss).item()?.f64();
            if !l.is_finite() {
                return Err(Error::NonFinite(format!("loss while perturbing '{name}'[{entry}]")));
            }
            Ok(l)
        };
        let plus = eval_at(opts.step)?;
        let minus = eval_at(-opts.step)?;
        graph.set_leaf(*id, original)?;

        let numeric = (plus - minus) / (2.0 * opts.step);
        let exact = analytic[name].data()[entry].f64();
        let rel = (exact - numeric).abs() / exact.abs().max(numeric.abs()).max(opts.floor);
        if report.worst.is_none() || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = Some((name.clone(), entry));
            report.worst_values = (exact, numeric);
        }
        report.checked += 1;
    }
    graph.recompute()?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn quadratic_is_exact() {
        let mut g = DiffGraph::<f64>::new();
        let x = g.param("x", Tensor::new(vec![1], vec![3.0]).unwrap()).unwrap();
        let y = g.square(x).unwrap();
        let l = g.sum(y).unwrap();
        let r = grad_check(&mut g, l, &GradCheckOptions::default()).unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
        assert_eq!(r.checked, 1);
    }

    #[test]
    fn constant_function_passes() {
        let mut g = DiffGraph::<f64>::new();
        let x = g.param("x", Tensor::new(vec![2], vec![3.0, -1.0]).unwrap()).unwrap();
        let zero = g.scale(x, 0.0).unwrap();
        let c = g.add_scalar(zero, 4.0).unwrap();
        let l = g.sum(c).unwrap();
        let r = grad_check(&mut g, l, &GradCheckOptions::default()).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
    }

    #[test]
    fn per_param_sampling_covers_every_tensor() {
        let mut g = DiffGraph::<f64>::new();
        let a = g.param("a", Tensor::from_fn(&[50], |i| i[0] as f64 * 0.1).unwrap()).unwrap();
        let b = g.param("b", Tensor::new(vec![2], vec![0.5, -0.25]).unwrap()).unwrap();
        let (sa, sb) = (g.square(a).unwrap(), g.square(b).unwrap());
        let (la, lb) = (g.sum(sa).unwrap(), g.sum(sb).unwrap());
        let l = g.add(la, lb).unwrap();
        let opts = GradCheckOptions { per_param: Some(3), ..Default::default() };
        let r = grad_check(&mut g, l, &opts).unwrap();
        assert_eq!(r.checked, 5);
        assert!(r.max_rel_error < 1e-8);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut g = DiffGraph::<f64>::new();
        let x = g.param("x", Tensor::new(vec![2], vec![3.0, -1.0]).unwrap()).unwrap();
        let opts = GradCheckOptions { step: 0.0, ..Default::default() };
        let l = g.sum(x).unwrap();
        assert!(grad_check(&mut g, l, &opts).is_err());
        assert!(grad_check(&mut g, x, &GradCheckOptions::default()).is_err());
    }
}
