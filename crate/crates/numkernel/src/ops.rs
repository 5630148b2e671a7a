//! Value-level numerics shared by the tape and by callers that only need a
//! forward result.

use crate::error::{KernelError, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Probabilities are floored here before taking logs.
pub const LOG_FLOOR: f64 = 1e-12;

/// Max-shifted softmax.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(KernelError::Domain("softmax of an empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(KernelError::Numeric("softmax input"));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// `-ln(max(pred[target], 1e-12))`.
pub fn cross_entropy(pred: &[f64], target: usize) -> Result<f64> {
    let p = *pred.get(target).ok_or_else(|| {
        KernelError::Domain(format!("target {target} out of range for {} classes", pred.len()))
    })?;
    Ok(-p.max(LOG_FLOOR).ln())
}

pub(crate) fn check_dropout_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(KernelError::Domain(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok(())
}

/// Entries are 0 with probability `rate`, else `1/(1-rate)`.
pub(crate) fn dropout_mask(n: usize, rate: f64, rng: &mut Rng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..n).map(|_| if rng.bernoulli(rate) { 0.0 } else { keep }).collect()
}

/// Inverted dropout on a standalone tensor. Identity in eval mode.
pub fn dropout(v: &Tensor, rate: f64, rng: &mut Rng, training: bool) -> Result<Tensor> {
    check_dropout_rate(rate)?;
    if !training || rate == 0.0 {
        return Ok(v.clone());
    }
    let mask = dropout_mask(v.len(), rate, rng);
    let values = v.values().iter().zip(&mask).map(|(x, m)| x * m).collect();
    Tensor::new(v.shape().to_vec(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn softmax_closed_forms() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let p = softmax(&[2f64.ln(), 0.0]).unwrap();
        assert_abs_diff_eq!(p[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn softmax_large_logits_do_not_overflow() {
        let p = softmax(&[1000.0, 999.0]).unwrap();
        // shift-by-max identity: same as softmax(1, 0)
        let e = 1f64.exp();
        assert_abs_diff_eq!(p[0], e / (e + 1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(p[0], 0.7311, epsilon = 1e-4);
        assert_abs_diff_eq!(p[1], 0.2689, epsilon = 1e-4);
    }

    #[test]
    fn softmax_empty_is_domain_error() {
        assert!(matches!(softmax(&[]), Err(KernelError::Domain(_))));
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(&[1.0, 0.0], 0).unwrap(), 0.0);
        assert_abs_diff_eq!(cross_entropy(&[0.5, 0.5], 1).unwrap(), 2f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(cross_entropy(&[0.9526, 0.0474], 1).unwrap(), 3.0491, epsilon = 1e-3);
        assert_abs_diff_eq!(cross_entropy(&[1.0, 0.0], 1).unwrap(), -(1e-12f64).ln(), epsilon = 1e-9);
        assert!(matches!(cross_entropy(&[0.5, 0.5], 2), Err(KernelError::Domain(_))));
    }

    #[test]
    fn dropout_modes() {
        let mut rng = Rng::new(1);
        let t = Tensor::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(dropout(&t, 0.0, &mut rng, true).unwrap(), t);
        assert_eq!(dropout(&t, 0.2, &mut rng, false).unwrap(), t);
        assert!(matches!(dropout(&t, 1.0, &mut rng, true), Err(KernelError::Domain(_))));
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut rng = Rng::new(2024);
        let t = Tensor::new(vec![10_000], vec![1.0; 10_000]).unwrap();
        let out = dropout(&t, 0.2, &mut rng, true).unwrap();
        let mean = out.values().iter().sum::<f64>() / 10_000.0;
        assert!((mean - 1.0).abs() < 0.03, "mean {mean}");
        assert!(out.values().iter().all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-15));
    }
}
