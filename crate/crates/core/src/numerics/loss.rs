use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Probability floor applied before taking logs in cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

/// Numerically stable softmax (max subtraction), written into `out`.
pub fn softmax_into<T: Scalar>(logits: &[T], out: &mut [T]) {
    debug_assert_eq!(logits.len(), out.len());
    let max = logits
        .iter()
        .fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
    let mut total = 0.0f64;
    for (o, l) in out.iter_mut().zip(logits) {
        let e = (l.as_f64() - max).exp();
        *o = T::lit(e);
        total += e;
    }
    let inv = 1.0 / total;
    for o in out.iter_mut() {
        *o = T::lit(o.as_f64() * inv);
    }
}

pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); logits.len()];
    softmax_into(logits, &mut out);
    out
}

/// Cross-entropy of `softmax(logits)` against class `target`.
///
/// Returns the loss and its gradient with respect to the logits,
/// `softmax(logits) - onehot(target)`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &[T], target: usize) -> Result<(f64, Vec<T>)> {
    if logits.is_empty() {
        return Err(Error::contract("softmax_cross_entropy on empty logits"));
    }
    if target >= logits.len() {
        return Err(Error::Index {
            index: target,
            len: logits.len(),
        });
    }
    let mut d = softmax(logits);
    let loss = -d[target].as_f64().max(PROB_FLOOR).ln();
    d[target] -= T::one();
    Ok((loss, d))
}

/// Cross-entropy `-ln p[target]` of an already normalized distribution.
#[inline]
pub fn categorical_nll<T: Scalar>(probs: &[T], target: usize) -> f64 {
    -probs[target].as_f64().max(PROB_FLOOR).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_logits() {
        let (loss, d) = softmax_cross_entropy(&[0.0f64; 4], 1).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert!((loss - 1.3863).abs() < 1e-4);
        assert!((d[1] + 0.75).abs() < 1e-12 && (d[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn saturated_correct_class() {
        let (loss, _) = softmax_cross_entropy(&[100.0f32, 0.0, 0.0], 0).unwrap();
        assert!(loss < 1e-30);
    }

    #[test]
    fn hand_computed_value() {
        let e = std::f64::consts::E;
        let oracle = -(e.powi(3) / (e + e * e + e.powi(3))).ln();
        let (loss, _) = softmax_cross_entropy(&[1.0f64, 2.0, 3.0], 2).unwrap();
        assert!((loss - oracle).abs() < 1e-12);
        assert!((loss - 0.4076).abs() < 1e-4);
    }

    #[test]
    fn target_out_of_range() {
        assert!(matches!(
            softmax_cross_entropy(&[0.0f64, 1.0], 2),
            Err(Error::Index { index: 2, len: 2 })
        ));
        assert!(softmax_cross_entropy::<f64>(&[], 0).is_err());
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let p = softmax(&[1e4f32, -1e4, 0.0]);
        assert!(p.iter().all(|v| v.is_finite()));
        let (loss, _) = softmax_cross_entropy(&[1e4f32, -1e4, 0.0], 1).unwrap();
        assert!((loss + PROB_FLOOR.ln()).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn softmax_normalized_and_shift_invariant(
            logits in proptest::collection::vec(-50.0f64..50.0, 1..20),
            shift in -1e3f64..1e3,
        ) {
            let p = softmax(&logits);
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
            let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
            let q = softmax(&shifted);
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
