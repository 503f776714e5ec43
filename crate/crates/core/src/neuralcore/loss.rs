//! Pinball (quantile) loss.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Pinball loss of a single (observation, prediction, level) triple:
/// max(q*(y-yhat), (q-1)*(y-yhat)).
pub fn quantile_loss_value(y: f64, yhat: f64, q: f64) -> f64 {
    let e = y - yhat;
    f64::max(q * e, (q - 1.0) * e)
}

/// Mean pinball loss over unmasked samples and all quantile levels, plus the
/// gradient w.r.t. the predictions. `yhat` is (n x n_quantiles); `mask[i]`
/// excludes sample i from the loss (gap-filled labels). The subgradient at
/// y == yhat is taken as 0.
pub fn pinball_loss(
    y: &[f64],
    yhat: &Tensor,
    quantiles: &[f64],
    mask: &[bool],
) -> Result<(f64, Tensor)> {
    if quantiles.iter().any(|q| *q <= 0.0 || *q >= 1.0) {
        return Err(Error::config(format!(
            "quantile levels must lie in (0,1): {quantiles:?}"
        )));
    }
    let n = y.len();
    if yhat.rows() != n || yhat.cols() != quantiles.len() || mask.len() != n {
        return Err(Error::shape(
            "pinball_loss",
            format!(
                "y {}, yhat {:?}, quantiles {}, mask {}",
                n,
                yhat.shape(),
                quantiles.len(),
                mask.len()
            ),
        ));
    }
    let n_active = mask.iter().filter(|m| !**m).count();
    if n_active == 0 {
        return Err(Error::data("pinball_loss: every sample masked"));
    }
    let total = (n_active * quantiles.len()) as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(yhat.shape());
    for i in 0..n {
        if mask[i] {
            continue;
        }
        for (j, &q) in quantiles.iter().enumerate() {
            let e = y[i] - yhat.at(i, j);
            loss += f64::max(q * e, (q - 1.0) * e);
            let g = if e > 0.0 {
                -q
            } else if e < 0.0 {
                1.0 - q
            } else {
                0.0
            };
            grad.set(i, j, g / total);
        }
    }
    Ok((loss / total, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn half_absolute_error_at_median() {
        assert!((quantile_loss_value(2.0, 0.0, 0.5) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn pinball_asymmetry() {
        assert!((quantile_loss_value(1.0, 0.0, 0.9) - 0.9).abs() < 1e-15);
        assert!((quantile_loss_value(-1.0, 0.0, 0.9) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn rejects_quantile_outside_unit_interval() {
        let yhat = Tensor::zeros(&[1, 1]);
        assert!(pinball_loss(&[0.0], &yhat, &[1.0], &[false]).is_err());
        assert!(pinball_loss(&[0.0], &yhat, &[0.0], &[false]).is_err());
    }

    #[test]
    fn constant_minimizer_recovers_empirical_quantile() {
        // the pinball minimizer over a constant predictor is attained at an
        // order statistic: brute-force over all sample points and compare
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for &q in &[0.1, 0.25, 0.5, 0.9] {
            let n = 101;
            let ys: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let mean_loss = |c: f64| -> f64 {
                ys.iter().map(|&y| quantile_loss_value(y, c, q)).sum::<f64>() / n as f64
            };
            let best = ys
                .iter()
                .cloned()
                .min_by(|a, b| mean_loss(*a).partial_cmp(&mean_loss(*b)).unwrap())
                .unwrap();
            let mut sorted = ys.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            // with n*q non-integer the minimizer is the ceil(n*q)-th order stat
            let k = (q * n as f64).ceil() as usize - 1;
            assert_eq!(best, sorted[k], "q={q}");
        }
    }

    #[test]
    fn masked_samples_do_not_contribute() {
        let y = [1.0, 100.0];
        let yhat = Tensor::from_vec(&[2, 1], vec![0.0, 0.0]);
        let (loss, grad) = pinball_loss(&y, &yhat, &[0.5], &[false, true]).unwrap();
        assert!((loss - 0.5).abs() < 1e-15);
        assert_eq!(grad.at(1, 0), 0.0);
    }
}
