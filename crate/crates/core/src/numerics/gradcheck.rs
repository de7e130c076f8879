use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::ParamSet;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub h: f64,
    /// Entries checked per parameter; every entry when the parameter is smaller.
    pub samples_per_param: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: 1e-4,
            samples_per_param: 16,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(parameter name, flat index)` of the worst entry.
    pub worst: Option<(String, usize)>,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub checked: usize,
}

/// Relative error `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the gradients currently stored in `params` against central
/// differences of `loss_fn`.
///
/// `loss_fn` must be a pure function of the parameter values; the stored
/// gradients must be those of the same loss at the current values.
pub fn finite_diff_check<T, P, F>(
    mut loss_fn: F,
    params: &mut P,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    T: Scalar,
    P: ParamSet<T>,
    F: FnMut(&P) -> f64,
{
    if !(opts.h > 0.0) {
        return Err(Error::contract("finite difference step must be > 0"));
    }
    let base = loss_fn(params);
    let again = loss_fn(params);
    if base.to_bits() != again.to_bits() {
        return Err(Error::contract(format!(
            "loss function is not deterministic ({base} vs {again})"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport::default();
    let count = params.params().len();
    for pi in 0..count {
        let len = params.params()[pi].value.len();
        let picks: Vec<usize> = if len <= opts.samples_per_param {
            (0..len).collect()
        } else {
            let mut v = sample(&mut rng, len, opts.samples_per_param).into_vec();
            v.sort_unstable();
            v
        };
        for idx in picks {
            let (orig, analytic) = {
                let p = &params.params()[pi];
                (p.value.as_slice()[idx], p.grad.as_slice()[idx].as_f64())
            };
            let plus = T::lit(orig.as_f64() + opts.h);
            let minus = T::lit(orig.as_f64() - opts.h);
            params.params_mut()[pi].value.as_mut_slice()[idx] = plus;
            let lp = loss_fn(params);
            params.params_mut()[pi].value.as_mut_slice()[idx] = minus;
            let lm = loss_fn(params);
            params.params_mut()[pi].value.as_mut_slice()[idx] = orig;
            // The representable step can differ from `2h` in low precision.
            let numeric = (lp - lm) / (plus.as_f64() - minus.as_f64());
            let err = relative_error(analytic, numeric);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = err;
                report.worst = Some((params.params()[pi].name.clone(), idx));
                report.worst_analytic = analytic;
                report.worst_numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Matrix, Parameter};
    use std::cell::Cell;

    fn random_params() -> Vec<Parameter<f64>> {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        vec![
            Parameter::new("a", Matrix::uniform(3, 4, 2.0, &mut rng)),
            Parameter::new("b", Matrix::uniform(1, 5, 2.0, &mut rng)),
        ]
    }

    #[test]
    fn sum_of_params() {
        let mut ps = random_params();
        for p in ps.iter_mut() {
            p.grad.fill(1.0);
        }
        let loss = |ps: &Vec<Parameter<f64>>| -> f64 {
            ps.iter().flat_map(|p| p.value.as_slice()).sum()
        };
        let r = finite_diff_check(loss, &mut ps, &GradCheckOptions::default()).unwrap();
        assert!(r.max_rel_err < 1e-8, "{r:?}");
        assert_eq!(r.checked, 17);
    }

    #[test]
    fn half_squared_norm() {
        let mut ps = random_params();
        for p in ps.iter_mut() {
            p.grad = p.value.clone();
        }
        let loss = |ps: &Vec<Parameter<f64>>| -> f64 { 0.5 * ps.iter().map(|p| p.value.sum_squares()).sum::<f64>() };
        let r = finite_diff_check(loss, &mut ps, &GradCheckOptions::default()).unwrap();
        assert!(r.max_rel_err < 1e-6, "{r:?}");
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let mut ps = random_params();
        for p in ps.iter_mut() {
            p.grad = p.value.map(|v| 2.0 * v);
        }
        let loss = |ps: &Vec<Parameter<f64>>| -> f64 { 0.5 * ps.iter().map(|p| p.value.sum_squares()).sum::<f64>() };
        let r = finite_diff_check(loss, &mut ps, &GradCheckOptions::default()).unwrap();
        assert!(r.max_rel_err > 0.4);
    }

    #[test]
    fn nondeterministic_loss_rejected() {
        let mut ps = random_params();
        let calls = Cell::new(0.0);
        let loss = |_: &Vec<Parameter<f64>>| -> f64 {
            calls.set(calls.get() + 1.0);
            calls.get()
        };
        assert!(matches!(
            finite_diff_check(loss, &mut ps, &GradCheckOptions::default()),
            Err(Error::Contract(_))
        ));
    }
}
