//! Central finite-difference gradient checking.

use super::params::ParamStore;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Max relative error per parameter tensor.
    pub per_tensor: Vec<(String, f64)>,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }

    pub fn worst(&self) -> Option<&(String, f64)> {
        self.per_tensor
            .iter()
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
    }
}

/// Compares the analytic gradients currently stored in `store` against
/// central finite differences of `loss_fn`. The caller must have populated
/// the gradients with one backward pass of the same loss, and `loss_fn` must
/// be a pure forward evaluation (no RNG drift between calls).
///
/// Relative error uses an absolute floor in the denominator so near-zero
/// gradients are compared absolutely rather than amplifying noise.
pub fn gradient_check(
    store: &mut ParamStore,
    mut loss_fn: impl FnMut(&ParamStore) -> f64,
    eps: f64,
    tolerance: f64,
) -> GradCheckReport {
    let analytic: Vec<Vec<f64>> = store
        .ids()
        .map(|id| store.grad(id).data().to_vec())
        .collect();
    let ids: Vec<_> = store.ids().collect();
    let mut per_tensor = Vec::with_capacity(ids.len());
    let mut max_rel = 0.0f64;
    for (t, id) in ids.iter().enumerate() {
        let n = store.value(*id).len();
        let mut tensor_max = 0.0f64;
        for e in 0..n {
            let orig = store.value(*id).data()[e];
            store.value_mut(*id).data_mut()[e] = orig + eps;
            let plus = loss_fn(store);
            store.value_mut(*id).data_mut()[e] = orig - eps;
            let minus = loss_fn(store);
            store.value_mut(*id).data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[t][e];
            let rel = (a - numeric).abs() / (a.abs().max(numeric.abs()) + 1e-3);
            tensor_max = tensor_max.max(rel);
        }
        per_tensor.push((store.name(*id).to_string(), tensor_max));
        max_rel = max_rel.max(tensor_max);
    }
    GradCheckReport {
        per_tensor,
        max_rel_err: max_rel,
        tolerance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn quadratic_gradient_passes_and_corrupted_fails() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_vec(&[3], vec![0.5, -1.0, 2.0]));
        // loss = sum(w^2); gradient = 2w
        let w = store.value(id).data().to_vec();
        for (e, v) in w.iter().enumerate() {
            store.grad_mut(id).data_mut()[e] = 2.0 * v;
        }
        let loss = |s: &ParamStore| s.value(s.id_of("w").unwrap()).data().iter().map(|v| v * v).sum::<f64>();
        let report = gradient_check(&mut store, loss, 1e-6, 1e-6);
        assert!(report.passed(), "max rel err {}", report.max_rel_err);

        // negative control: corrupt the backward
        store.grad_mut(id).data_mut()[1] *= 1.5;
        let report = gradient_check(&mut store, loss, 1e-6, 1e-6);
        assert!(!report.passed());
    }
}
