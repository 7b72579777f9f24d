use serde::{Deserialize, Serialize};

use super::{check_corridor, Boundary, ClearingResult, Responder};
use crate::error::{Error, Result};

/// An agent's quoted (price, quantity) pairs on a shared ascending price grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidCurve {
    pub prices: Vec<f64>,
    pub quantities: Vec<f64>,
}

/// `d` uniformly spaced candidate prices on `[fit, tou]`; a single candidate is the midpoint.
pub fn price_grid(fit: f64, tou: f64, d: usize) -> Result<Vec<f64>> {
    check_corridor(fit, tou)?;
    match d {
        0 => Err(Error::config("bid dimension must be at least 1")),
        1 => Ok(vec![0.5 * (fit + tou)]),
        _ => Ok((0..d).map(|i| if i + 1 == d { tou } else { fit + (tou - fit) * i as f64 / (d - 1) as f64 }).collect()),
    }
}

/// Best response at every grid price; a running minimum removes non-monotone noise.
pub fn make_bid_curve<R: Responder + ?Sized>(responder: &R, prices: &[f64]) -> Result<BidCurve> {
    let mut quantities = Vec::with_capacity(prices.len());
    let mut floor = f64::INFINITY;
    for &p in prices {
        floor = floor.min(responder.respond(p)?);
        quantities.push(floor);
    }
    Ok(BidCurve { prices: prices.to_vec(), quantities })
}

/// Pick the grid price minimizing the absolute aggregate imbalance (ties to the lowest price);
/// the residual goes to the utility grid. `boundary` names the side that settles it.
pub fn clear_conventional(bids: &[BidCurve], fit: f64, tou: f64, delta: f64) -> Result<ClearingResult> {
    check_corridor(fit, tou)?;
    let first = bids.first().ok_or_else(|| Error::config("conventional auction needs at least one bid curve"))?;
    if first.prices.is_empty() {
        return Err(Error::config("bid curves are empty"));
    }
    for b in bids {
        if b.prices != first.prices || b.quantities.len() != b.prices.len() {
            return Err(Error::config("all bid curves must quote the same price grid"));
        }
    }
    let d = first.prices.len();
    let mut best = (0, f64::INFINITY);
    for i in 0..d {
        let s: f64 = bids.iter().map(|b| b.quantities[i]).sum();
        if s.abs() < best.1.abs() {
            best = (i, s);
        }
    }
    let (i, s) = best;
    let boundary = if s.abs() <= delta {
        Boundary::Interior
    } else if s > 0.0 {
        Boundary::Tou
    } else {
        Boundary::Fit
    };
    Ok(ClearingResult {
        price: first.prices[i],
        quantities: bids.iter().map(|b| b.quantities[i]).collect(),
        p_grid: -s,
        iterations: 0,
        evaluations: d,
        boundary,
        price_path: Vec::new(),
        converged: true,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{oracle_bisection, LinearResponder};
    use super::*;

    #[test]
    fn grid_shapes() {
        assert_eq!(price_grid(0.04, 0.2, 1).unwrap(), vec![0.5 * (0.04 + 0.2)]);
        let g = price_grid(0.04, 0.2, 5).unwrap();
        assert_eq!((g[0], g[4]), (0.04, 0.2));
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert!(price_grid(0.04, 0.2, 0).is_err());
    }

    #[test]
    fn single_candidate_is_returned_whatever_the_imbalance() {
        let r = LinearResponder { slope: 1.0, root: 10.0, cap: f64::INFINITY };
        let b = make_bid_curve(&r, &price_grid(0.04, 0.2, 1).unwrap()).unwrap();
        let c = clear_conventional(&[b], 0.04, 0.2, 5.0).unwrap();
        assert_eq!(c.price, 0.5 * (0.04 + 0.2));
    }

    #[test]
    fn curves_are_monotone_and_flat_when_constant() {
        let noisy = |p: f64| Ok(-100.0 * p + if (p * 1e3) as i64 % 2 == 0 { 0.5 } else { 0.0 });
        let b = make_bid_curve(&noisy, &price_grid(0.0, 0.1, 50).unwrap()).unwrap();
        assert!(b.quantities.windows(2).all(|w| w[1] <= w[0]));
        let flat = |_: f64| Ok(3.0);
        assert!(make_bid_curve(&flat, &[0.1, 0.2, 0.3]).unwrap().quantities.iter().all(|q| *q == 3.0));
    }

    #[test]
    fn fine_grids_approach_the_equilibrium() {
        let rs: Vec<LinearResponder> = (0..5).map(|i| LinearResponder { slope: 300.0 + 50.0 * i as f64, root: 0.08 + 0.01 * i as f64, cap: 40.0 }).collect();
        let oracle = oracle_bisection(&rs, 0.04, 0.2, 1e-12, 0.0).unwrap();
        let grid = price_grid(0.04, 0.2, 200).unwrap();
        let bids: Vec<BidCurve> = rs.iter().map(|r| make_bid_curve(r, &grid).unwrap()).collect();
        let c = clear_conventional(&bids, 0.04, 0.2, 5.0).unwrap();
        assert!((c.price - oracle.price).abs() <= (0.2 - 0.04) / 199.0 + 1e-12);
        assert!(clear_conventional(&[], 0.04, 0.2, 5.0).is_err());
    }
}
