use serde::{Deserialize, Serialize};

use super::{evaluate, Boundary, ClearingResult, Responder};
use crate::error::Result;

/// Pass/fail per equilibrium condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumCheck {
    pub price_feasible: bool,
    pub best_response: bool,
    pub balance: bool,
    pub complementarity: bool,
    /// Export only at FiT, import only at ToU, interior only when balanced.
    pub directional: bool,
    pub max_response_gap_kw: f64,
}

impl EquilibriumCheck {
    pub fn all_pass(&self) -> bool {
        self.price_feasible && self.best_response && self.balance && self.complementarity && self.directional
    }
}

pub fn verify_equilibrium<R: Responder>(result: &ClearingResult, responders: &[R], fit: f64, tou: f64, delta: f64) -> Result<EquilibriumCheck> {
    let price = result.price;
    let edge = 1e-12 * tou.abs().max(1.0);
    let price_feasible = price >= fit - edge && price <= tou + edge;

    let fresh = evaluate(responders, price, false)?;
    let gap = if fresh.len() == result.quantities.len() {
        fresh.iter().zip(&result.quantities).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    let best_response = gap <= 1e-6;

    let balance = (result.imbalance() + result.p_grid).abs() <= delta.max(1e-6);

    let at_fit = (price - fit).abs() <= edge;
    let at_tou = (price - tou).abs() <= edge;
    let complementarity = result.p_grid.abs() <= delta || at_fit || at_tou;

    let directional = match result.boundary {
        Boundary::Interior => result.p_grid.abs() <= delta,
        Boundary::Fit => at_fit,
        Boundary::Tou => at_tou,
    } && (result.p_grid >= -delta || at_tou)
        && (result.p_grid <= delta || at_fit);

    Ok(EquilibriumCheck { price_feasible, best_response, balance, complementarity, directional, max_response_gap_kw: gap })
}

#[cfg(test)]
mod tests {
    use super::super::{clear_assa, AssaConfig, LinearResponder};
    use super::*;

    #[test]
    fn assa_output_passes_and_tampering_fails() {
        let rs = vec![LinearResponder { slope: 400.0, root: 0.1, cap: 50.0 }, LinearResponder { slope: 200.0, root: 0.15, cap: 30.0 }];
        let c = clear_assa(&rs, 0.04, 0.2, &AssaConfig::default(), None).unwrap();
        assert!(verify_equilibrium(&c, &rs, 0.04, 0.2, 5.0).unwrap().all_pass());

        let mut bad = c.clone();
        bad.price = 0.25;
        let v = verify_equilibrium(&bad, &rs, 0.04, 0.2, 5.0).unwrap();
        assert!(!v.price_feasible);

        let mut zero = c.clone();
        zero.p_grid = 0.0;
        assert!(verify_equilibrium(&zero, &rs, 0.04, 0.2, 5.0).unwrap().complementarity);
    }
}
