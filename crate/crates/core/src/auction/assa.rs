use serde::{Deserialize, Serialize};

use super::{check_corridor, evaluate, AssaConfig, Boundary, BoundaryRule, ClearingResult, PathPoint, Responder};
use crate::error::Result;

struct Search<'a, R> {
    responders: &'a [R],
    fit: f64,
    tou: f64,
    delta: f64,
    parallel: bool,
    path: Vec<PathPoint>,
    best: Option<(f64, Vec<f64>, f64)>,
    evaluations: usize,
}

impl<R: Responder> Search<'_, R> {
    fn eval(&mut self, iter: usize, price: f64, sigma: f64) -> Result<(Vec<f64>, f64)> {
        let q = evaluate(self.responders, price, self.parallel)?;
        let f: f64 = q.iter().sum();
        self.evaluations += 1;
        self.path.push(PathPoint { iter, price, imbalance_kw: f, sigma });
        if self.best.as_ref().is_none_or(|b| f.abs() < b.2.abs()) {
            self.best = Some((price, q.clone(), f));
        }
        Ok((q, f))
    }

    fn finish(self, price: f64, q: Vec<f64>, f: f64, iterations: usize, boundary: Boundary) -> ClearingResult {
        ClearingResult { price, quantities: q, p_grid: -f, iterations, evaluations: self.evaluations, boundary, price_path: self.path, converged: true }
    }

    fn give_up(mut self, iterations: usize) -> ClearingResult {
        let (price, q, f) = self.best.take().expect("at least one evaluation");
        let boundary = classify(price, f, self.fit, self.tou, self.delta);
        ClearingResult { price, quantities: q, p_grid: -f, iterations, evaluations: self.evaluations, boundary, price_path: self.path, converged: false }
    }

    /// Stop condition at a price sitting on a corridor end.
    fn boundary_stop(&self, price: f64, f: f64) -> Option<Boundary> {
        if price <= self.fit && f < -self.delta {
            Some(Boundary::Fit)
        } else if price >= self.tou && f > self.delta {
            Some(Boundary::Tou)
        } else {
            None
        }
    }
}

fn classify(price: f64, f: f64, fit: f64, tou: f64, delta: f64) -> Boundary {
    if f.abs() <= delta {
        Boundary::Interior
    } else if price <= fit && f < 0.0 {
        Boundary::Fit
    } else if price >= tou && f > 0.0 {
        Boundary::Tou
    } else {
        Boundary::Interior
    }
}

/// Adaptive step-size price search: `price += sigma * F`, halving `sigma` whenever the
/// imbalance changes sign. Stops when `|F| <= delta` or a corridor end is reached.
pub fn clear_assa<R: Responder>(responders: &[R], fit: f64, tou: f64, cfg: &AssaConfig, last_price: Option<f64>) -> Result<ClearingResult> {
    check_corridor(fit, tou)?;
    cfg.validate()?;
    let mut s = Search { responders, fit, tou, delta: cfg.delta, parallel: cfg.parallel, path: Vec::new(), best: None, evaluations: 0 };
    let mut price = cfg.initial_price(fit, tou, last_price);
    let mut sigma = cfg.sigma0;
    let mut prev_f: Option<f64> = None;
    let mut k = 0;
    loop {
        let (q, f) = s.eval(k, price, sigma)?;
        if f.abs() <= cfg.delta {
            return Ok(s.finish(price, q, f, k, Boundary::Interior));
        }
        if let Some(b) = s.boundary_stop(price, f) {
            return Ok(s.finish(price, q, f, k, b));
        }
        if k >= cfg.max_iterations {
            log::warn!("ASSA hit the iteration cap ({k}); returning best-seen price");
            return Ok(s.give_up(k));
        }
        if prev_f.is_some_and(|p| p * f < 0.0) {
            sigma *= 0.5;
        }
        prev_f = Some(f);
        let next = price + sigma * f;
        k += 1;
        if cfg.boundary_rule == BoundaryRule::Verbatim && (next < fit || next > tou) {
            let (edge, b) = if next < fit { (fit, Boundary::Fit) } else { (tou, Boundary::Tou) };
            let (q, f) = s.eval(k, edge, sigma)?;
            return Ok(s.finish(edge, q, f, k, b));
        }
        price = next.clamp(fit, tou);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FixedStepFailure {
    /// The price sequence came back to an earlier price without meeting the tolerance.
    Oscillation { cycle_length: usize, iterations: usize, path: Vec<PathPoint> },
    IterationCap { iterations: usize, path: Vec<PathPoint> },
}

/// Constant-step price search (no halving); boundary handling as in the projected rule.
pub fn clear_fixed_step<R: Responder>(
    responders: &[R],
    fit: f64,
    tou: f64,
    sigma: f64,
    delta: f64,
    cap: usize,
) -> Result<std::result::Result<ClearingResult, FixedStepFailure>> {
    check_corridor(fit, tou)?;
    AssaConfig { sigma0: sigma, delta, max_iterations: cap.max(1), ..Default::default() }.validate()?;
    let mut s = Search { responders, fit, tou, delta, parallel: false, path: Vec::new(), best: None, evaluations: 0 };
    let mut price = 0.5 * (fit + tou);
    let mut seen: Vec<f64> = Vec::new();
    let mut k = 0;
    loop {
        let (q, f) = s.eval(k, price, sigma)?;
        if f.abs() <= delta {
            return Ok(Ok(s.finish(price, q, f, k, Boundary::Interior)));
        }
        if let Some(b) = s.boundary_stop(price, f) {
            return Ok(Ok(s.finish(price, q, f, k, b)));
        }
        if let Some(j) = seen.iter().rposition(|p| (p - price).abs() <= 1e-12) {
            return Ok(Err(FixedStepFailure::Oscillation { cycle_length: k - j, iterations: k, path: s.path }));
        }
        if k >= cap {
            return Ok(Err(FixedStepFailure::IterationCap { iterations: k, path: s.path }));
        }
        seen.push(price);
        price = (price + sigma * f).clamp(fit, tou);
        k += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::super::{InitPolicy, LinearResponder};
    use super::*;

    fn lin(slope: f64, root: f64) -> Vec<LinearResponder> {
        vec![LinearResponder { slope, root, cap: f64::INFINITY }]
    }

    #[test]
    fn balanced_start_needs_no_update() {
        let r = lin(1000.0, 0.1);
        let cfg = AssaConfig { init_policy: InitPolicy::Custom(0.1), ..Default::default() };
        let c = clear_assa(&r, 0.04, 0.2, &cfg, None).unwrap();
        assert_eq!((c.iterations, c.price, c.boundary), (0, 0.1, Boundary::Interior));
    }

    #[test]
    fn persistent_shortage_stops_at_tou_within_kmax() {
        // F(price) = 10_000 - 1000 price > 0 on the whole corridor.
        let r = lin(1000.0, 10.0);
        let cfg = AssaConfig { init_policy: InitPolicy::Fit, ..Default::default() };
        let c = clear_assa(&r, 0.04, 0.2, &cfg, None).unwrap();
        assert_eq!(c.boundary, Boundary::Tou);
        assert_eq!(c.price, 0.2);
        assert!(c.p_grid < 0.0);
        let f_tou = -1000.0 * (0.2 - 10.0);
        let kmax = ((0.2 - 0.04) / (cfg.sigma0 * f_tou)).ceil() as usize;
        assert!(c.iterations <= kmax, "{} > {kmax}", c.iterations);
    }

    #[test]
    fn surplus_stops_at_fit() {
        let r = lin(1000.0, -5.0);
        let c = clear_assa(&r, 0.04, 0.2, &AssaConfig::default(), Some(0.15)).unwrap();
        assert_eq!((c.boundary, c.price), (Boundary::Fit, 0.04));
        assert!(c.p_grid > 5.0);
    }

    #[test]
    fn overshoot_past_the_corridor_is_not_mistaken_for_a_boundary() {
        // A steep aggregate: the first step jumps far past TOU although the root is interior.
        let r = lin(1e6, 0.12);
        let cfg = AssaConfig { init_policy: InitPolicy::Fit, ..Default::default() };
        let projected = clear_assa(&r, 0.04, 0.2, &cfg, None).unwrap();
        assert_eq!(projected.boundary, Boundary::Interior);
        assert!((projected.price - 0.12).abs() <= 5.0 / 1e6 + 1e-12);
        let verbatim = clear_assa(&r, 0.04, 0.2, &AssaConfig { boundary_rule: BoundaryRule::Verbatim, ..cfg }, None).unwrap();
        assert_eq!(verbatim.boundary, Boundary::Tou);
        assert!(verbatim.p_grid > cfg.delta);
    }

    #[test]
    fn fixed_step_oscillates_above_the_stability_limit() {
        let m = 2000.0;
        let r = lin(m, 0.1);
        let sig = 3.0 / m;
        match clear_fixed_step(&r, 0.04, 0.2, sig, 5.0, 200).unwrap() {
            Err(FixedStepFailure::Oscillation { cycle_length, .. }) => assert_eq!(cycle_length, 2),
            other => panic!("{other:?}"),
        }
        let ok = clear_fixed_step(&r, 0.04, 0.2, 0.5 / m, 5.0, 200).unwrap().unwrap();
        let assa = clear_assa(&r, 0.04, 0.2, &AssaConfig { sigma0: sig, ..Default::default() }, None).unwrap();
        assert!(assa.converged && (ok.price - assa.price).abs() <= 2.0 * 5.0 / m);
    }

    #[test]
    fn fixed_step_with_zero_imbalance_stops_at_once() {
        let r = lin(0.0, 0.1);
        let c = clear_fixed_step(&r, 0.04, 0.2, 1.0, 5.0, 10).unwrap().unwrap();
        assert_eq!(c.iterations, 0);
    }
}
