//! Who pays what in one interval.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SettlementRule {
    /// Everyone, residual included, trades at the cleared price.
    Uniform,
    /// Each agent buys from the utility at ToU and sells at FiT.
    Tariff,
    /// The short side trades at the cleared price; the long side shares the cleared-price
    /// revenue with the utility residual (ToU for imports, FiT for exports) pro rata.
    Blended,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settlement {
    /// $ paid by each agent (negative = received).
    pub payments: Vec<f64>,
    /// $ the utility pays the community for `p_grid` (negative = community pays).
    pub utility_receipt: f64,
}

impl Settlement {
    /// Money left at the operator; zero when buyers pay exactly what sellers and the utility get.
    pub fn operator_balance(&self) -> f64 {
        self.payments.iter().sum::<f64>() + self.utility_receipt
    }
}

pub fn settle(rule: SettlementRule, price: f64, fit: f64, tou: f64, p_ex: &[f64], p_grid: f64, dt: f64) -> Settlement {
    match rule {
        SettlementRule::Uniform => Settlement { payments: p_ex.iter().map(|p| price * p * dt).collect(), utility_receipt: price * p_grid * dt },
        SettlementRule::Tariff => {
            let payments: Vec<f64> = p_ex.iter().map(|&p| if p > 0.0 { tou * p * dt } else { fit * p * dt }).collect();
            // Agents deal with the utility directly; nothing passes through an operator.
            let utility_receipt = -payments.iter().sum::<f64>();
            Settlement { payments, utility_receipt }
        }
        SettlementRule::Blended => {
            let buy: f64 = p_ex.iter().filter(|p| **p > 0.0).sum();
            let sell: f64 = -p_ex.iter().filter(|p| **p < 0.0).sum::<f64>();
            let residual = buy - sell;
            let (buy_rate, sell_rate) = if residual >= 0.0 {
                let r = if buy > 0.0 { (price * sell + tou * residual) / buy } else { price };
                (r, price)
            } else {
                let r = if sell > 0.0 { (price * buy + fit * -residual) / sell } else { price };
                (price, r)
            };
            let payments = p_ex.iter().map(|&p| if p > 0.0 { buy_rate * p * dt } else { sell_rate * p * dt }).collect();
            let rate = if residual >= 0.0 { tou } else { fit };
            Settlement { payments, utility_receipt: rate * p_grid * dt }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_price_conserves_money() {
        let p = [30.0, -20.0, -12.0];
        let s = settle(SettlementRule::Uniform, 0.1, 0.04, 0.2, &p, 2.0, 1.0 / 12.0);
        assert!(s.operator_balance().abs() < 1e-12);
        assert!((s.payments[0] / 30.0 - s.payments[1] / -20.0).abs() < 1e-15);
    }

    #[test]
    fn blended_import_charges_buyers_the_mix() {
        let p = [30.0, -10.0];
        let s = settle(SettlementRule::Blended, 0.1, 0.04, 0.2, &p, -20.0, 1.0);
        assert!((s.payments[1] - -1.0).abs() < 1e-12);
        assert!((s.payments[0] - (0.1 * 10.0 + 0.2 * 20.0)).abs() < 1e-12);
        assert!(s.operator_balance().abs() < 1e-12);
        let e = settle(SettlementRule::Blended, 0.1, 0.04, 0.2, &[5.0, -25.0], 20.0, 1.0);
        assert!((e.payments[1] - -(0.1 * 5.0 + 0.04 * 20.0)).abs() < 1e-12);
        assert!(e.operator_balance().abs() < 1e-12);
    }

    #[test]
    fn tariff_buys_at_tou_and_sells_at_fit() {
        let s = settle(SettlementRule::Tariff, f64::NAN, 0.04, 0.2, &[10.0, -10.0, 0.0], 0.0, 1.0);
        assert_eq!(s.payments, vec![2.0, -0.4, 0.0]);
    }
}
