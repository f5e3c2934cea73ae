use crate::error::{Error, Result};

/// kappa-expectile of a weighted discrete distribution: the root of
/// `kappa E[(x - v)_+] = (1 - kappa) E[(v - x)_+]`, by bisection on
/// `[min x, max x]` to `tol`.
pub fn expectile(values: &[f64], weights: &[f64], kappa: f64, tol: f64) -> Result<f64> {
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(Error::invalid(format!("kappa {kappa} outside (0, 1)")));
    }
    if values.len() != weights.len() {
        return Err(Error::Shape("values and weights differ in length".into()));
    }
    let total: f64 = weights.iter().sum();
    if values.is_empty() || !(total > 0.0) {
        return Err(Error::EmptySupport("expectile of an empty distribution".into()));
    }
    let foc = |v: f64| -> f64 {
        values
            .iter()
            .zip(weights)
            .map(|(&x, &w)| if x > v { kappa * w * (x - v) } else { -(1.0 - kappa) * w * (v - x) })
            .sum()
    };
    let mut lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // foc is decreasing in v: positive at lo, negative at hi.
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if foc(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Asymmetric squared objective minimized by the expectile.
pub fn expectile_objective(values: &[f64], weights: &[f64], kappa: f64, v: f64) -> f64 {
    values
        .iter()
        .zip(weights)
        .map(|(&x, &w)| {
            let u = x - v;
            w * (kappa - if u < 0.0 { 1.0 } else { 0.0 }).abs() * u * u
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_is_mean() {
        let v = expectile(&[1.0, 2.0, 6.0], &[0.5, 0.25, 0.25], 0.5, 1e-12).unwrap();
        assert!((v - 2.5).abs() < 1e-10);
    }

    #[test]
    fn point_mass() {
        for kappa in [0.1, 0.5, 0.93] {
            assert_eq!(expectile(&[-3.5], &[1.0], kappa, 1e-12).unwrap(), -3.5);
        }
    }

    #[test]
    fn two_point() {
        let v = expectile(&[-1.0, 0.0], &[0.5, 0.5], 0.9, 1e-12).unwrap();
        assert!((v + 0.1).abs() < 1e-10);
    }

    #[test]
    fn empty_is_error() {
        assert!(matches!(expectile(&[], &[], 0.5, 1e-10), Err(Error::EmptySupport(_))));
        assert!(expectile(&[1.0], &[1.0], 1.0, 1e-10).is_err());
    }
}
