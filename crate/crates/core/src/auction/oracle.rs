use super::{check_corridor, evaluate, Boundary, ClearingResult, Responder};
use crate::error::Result;

/// Three-case equilibrium by bisection. `boundary_tolerance` is the imbalance (kW) below which
/// a corridor end still counts as balanced; 0 gives the pure sign test.
pub fn oracle_bisection<R: Responder>(responders: &[R], fit: f64, tou: f64, tol_price: f64, boundary_tolerance: f64) -> Result<ClearingResult> {
    check_corridor(fit, tou)?;
    let f = |p: f64| -> Result<(Vec<f64>, f64)> {
        let q = evaluate(responders, p, false)?;
        let s = q.iter().sum();
        Ok((q, s))
    };
    let done = |price: f64, q: Vec<f64>, s: f64, boundary: Boundary, evals: usize| ClearingResult {
        price,
        quantities: q,
        p_grid: -s,
        iterations: 0,
        evaluations: evals,
        boundary,
        price_path: Vec::new(),
        converged: true,
    };
    let (q_lo, f_lo) = f(fit)?;
    if f_lo < -boundary_tolerance {
        return Ok(done(fit, q_lo, f_lo, Boundary::Fit, 1));
    }
    let (q_hi, f_hi) = f(tou)?;
    if f_hi > boundary_tolerance {
        return Ok(done(tou, q_hi, f_hi, Boundary::Tou, 2));
    }
    if f_lo <= 0.0 {
        return Ok(done(fit, q_lo, f_lo, Boundary::Interior, 2));
    }
    if f_hi >= 0.0 {
        return Ok(done(tou, q_hi, f_hi, Boundary::Interior, 2));
    }
    let (mut lo, mut hi) = (fit, tou);
    let mut evals = 2;
    while hi - lo > tol_price.max(f64::EPSILON * tou) {
        let mid = 0.5 * (lo + hi);
        let (_, fm) = f(mid)?;
        evals += 1;
        if fm > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let price = 0.5 * (lo + hi);
    let (q, s) = f(price)?;
    Ok(done(price, q, s, Boundary::Interior, evals + 1))
}

#[cfg(test)]
mod tests {
    use super::super::LinearResponder;
    use super::*;

    #[test]
    fn the_three_cases() {
        let r = |root| vec![LinearResponder { slope: 100.0, root, cap: f64::INFINITY }];
        let c = oracle_bisection(&r(0.0), 0.04, 0.2, 1e-12, 0.0).unwrap();
        assert_eq!(c.boundary, Boundary::Fit);
        assert!(c.p_grid > 0.0);
        let c = oracle_bisection(&r(1.0), 0.04, 0.2, 1e-12, 0.0).unwrap();
        assert_eq!(c.boundary, Boundary::Tou);
        assert!(c.p_grid < 0.0);
        // F = c - price, scaled.
        let c = oracle_bisection(&r(0.137), 0.04, 0.2, 1e-12, 0.0).unwrap();
        assert_eq!(c.boundary, Boundary::Interior);
        assert!((c.price - 0.137).abs() <= 1e-12);
    }

    #[test]
    fn tolerance_keeps_near_balanced_ends_interior() {
        let r = vec![LinearResponder { slope: 100.0, root: 0.02, cap: f64::INFINITY }];
        assert_eq!(oracle_bisection(&r, 0.04, 0.2, 1e-12, 0.0).unwrap().boundary, Boundary::Fit);
        let c = oracle_bisection(&r, 0.04, 0.2, 1e-12, 5.0).unwrap();
        assert_eq!((c.boundary, c.price), (Boundary::Interior, 0.04));
    }
}
