use crate::error::{Error, Result};

/// `log(sum(exp(logw)))`, or `None` if every entry is `-inf` or any entry is NaN/`+inf`.
pub fn log_sum_exp(logw: &[f64]) -> Option<f64> {
    let mut max = f64::NEG_INFINITY;
    for &v in logw {
        if v.is_nan() || v == f64::INFINITY {
            return None;
        }
        if v > max {
            max = v;
        }
    }
    if max == f64::NEG_INFINITY {
        return None;
    }
    let s: f64 = logw.iter().map(|&v| (v - max).exp()).sum();
    Some(max + s.ln())
}

/// Writes normalized probabilities into `out` and returns the log of the
/// unnormalized total. `None` signals collapse.
pub(crate) fn normalize_into(logw: &[f64], out: &mut [f64]) -> Option<f64> {
    debug_assert_eq!(logw.len(), out.len());
    let mut max = f64::NEG_INFINITY;
    for &v in logw {
        if v.is_nan() || v == f64::INFINITY {
            return None;
        }
        if v > max {
            max = v;
        }
    }
    if max == f64::NEG_INFINITY {
        return None;
    }
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(logw) {
        let e = (v - max).exp();
        *o = e;
        sum += e;
    }
    let inv = 1.0 / sum;
    for o in out.iter_mut() {
        *o *= inv;
    }
    Some(max + sum.ln())
}

/// Normalize log-weights to probabilities using the max-shift trick.
pub fn normalize_log_weights(logw: &[f64]) -> Result<Vec<f64>> {
    if logw.is_empty() {
        return Err(Error::invalid("normalize_log_weights: empty weight vector"));
    }
    if logw.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::NonFinite("normalize_log_weights: NaN or +inf log-weight".into()));
    }
    let mut out = vec![0.0; logw.len()];
    normalize_into(logw, &mut out).ok_or(Error::WeightCollapse)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn equal_weights() {
        let w = normalize_log_weights(&[0.0, 0.0, 0.0]).unwrap();
        for v in w {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn two_to_one() {
        let w = normalize_log_weights(&[0.0, 2f64.ln()]).unwrap();
        assert_abs_diff_eq!(w[0], 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn large_offsets_do_not_overflow() {
        let w = normalize_log_weights(&[1000.0, 1000.0 + 3f64.ln()]).unwrap();
        assert_abs_diff_eq!(w[0], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(w[1], 0.75, epsilon = 1e-12);
    }

    #[test]
    fn collapse_is_an_error() {
        let e = normalize_log_weights(&[f64::NEG_INFINITY; 4]).unwrap_err();
        assert!(matches!(e, Error::WeightCollapse));
        assert!(normalize_log_weights(&[0.0, f64::NAN]).is_err());
        assert!(normalize_log_weights(&[]).is_err());
    }

    #[test]
    fn partial_neg_infinity_is_fine() {
        let w = normalize_log_weights(&[f64::NEG_INFINITY, 0.0]).unwrap();
        assert_eq!(w, vec![0.0, 1.0]);
    }

    #[test]
    fn log_sum_exp_matches_direct() {
        let v = [0.1, -2.0, 1.5];
        let direct: f64 = v.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert_abs_diff_eq!(log_sum_exp(&v).unwrap(), direct, epsilon = 1e-14);
    }

    proptest! {
        #[test]
        fn shift_invariant_and_normalized(
            logw in proptest::collection::vec(-50.0f64..50.0, 1..64),
            shift in -1e4f64..1e4,
        ) {
            let a = normalize_log_weights(&logw).unwrap();
            let shifted: Vec<f64> = logw.iter().map(|v| v + shift).collect();
            let b = normalize_log_weights(&shifted).unwrap();
            let sum: f64 = a.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9 * x.max(1e-300) + 1e-15);
            }
        }
    }
}
