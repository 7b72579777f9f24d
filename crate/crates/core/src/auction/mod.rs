//! Community market clearing.
//!
//! Every clearing works against responders: an agent's best-response exchange `P_ex(price)`
//! (kW, positive = buy). The aggregate imbalance is `F(price) = sum P_ex`; the community's
//! grid exchange is the residual `p_grid = -F` (positive = export to the utility).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;

mod assa;
mod conventional;
mod oracle;
mod verify;

pub use assa::{clear_assa, clear_fixed_step, FixedStepFailure};
pub use conventional::{clear_conventional, make_bid_curve, price_grid, BidCurve};
pub use oracle::oracle_bisection;
pub use verify::{verify_equilibrium, EquilibriumCheck};

pub trait Responder: Sync {
    /// Exchange in kW the agent chooses at `price`.
    fn respond(&self, price: f64) -> Result<f64>;
}

impl<F> Responder for F
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    fn respond(&self, price: f64) -> Result<f64> {
        self(price)
    }
}

impl Responder for Box<dyn Responder + '_> {
    fn respond(&self, price: f64) -> Result<f64> {
        (**self).respond(price)
    }
}

/// `P_ex = clamp(-slope * (price - root), -cap, cap)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearResponder {
    pub slope: f64,
    pub root: f64,
    pub cap: f64,
}

impl Responder for LinearResponder {
    fn respond(&self, price: f64) -> Result<f64> {
        Ok((-self.slope * (price - self.root)).clamp(-self.cap, self.cap))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    #[default]
    Interior,
    Fit,
    Tou,
}

impl std::fmt::Display for Boundary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Boundary::Interior => "interior",
            Boundary::Fit => "fit",
            Boundary::Tou => "tou",
        })
    }
}

impl std::str::FromStr for Boundary {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "interior" => Ok(Boundary::Interior),
            "fit" => Ok(Boundary::Fit),
            "tou" => Ok(Boundary::Tou),
            other => Err(format!("unknown boundary {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "price", rename_all = "snake_case")]
pub enum InitPolicy {
    LastPrice,
    Fit,
    Tou,
    Midpoint,
    Custom(f64),
}

/// What ASSA does when a price update leaves the corridor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryRule {
    /// Clamp, evaluate at the boundary, and stop there only if the imbalance still pushes
    /// outward by more than `delta`; otherwise keep iterating from the boundary.
    Projected,
    /// Stop at the boundary as soon as an update overshoots it.
    Verbatim,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssaConfig {
    pub sigma0: f64,
    pub delta: f64,
    pub max_iterations: usize,
    pub init_policy: InitPolicy,
    pub boundary_rule: BoundaryRule,
    pub parallel: bool,
}

impl Default for AssaConfig {
    fn default() -> Self {
        AssaConfig {
            sigma0: 5e-6,
            delta: 5.0,
            max_iterations: 200,
            init_policy: InitPolicy::LastPrice,
            boundary_rule: BoundaryRule::Projected,
            parallel: true,
        }
    }
}

impl AssaConfig {
    pub fn validate(&self) -> Result<()> {
        use crate::error::Error;
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return Err(Error::config("sigma0 must be positive"));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::config("delta must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(Error::config("max_iterations must be at least 1"));
        }
        Ok(())
    }

    pub fn initial_price(&self, fit: f64, tou: f64, last_price: Option<f64>) -> f64 {
        let mid = 0.5 * (fit + tou);
        let p = match self.init_policy {
            InitPolicy::LastPrice => last_price.unwrap_or(mid),
            InitPolicy::Fit => fit,
            InitPolicy::Tou => tou,
            InitPolicy::Midpoint => mid,
            InitPolicy::Custom(p) => p,
        };
        p.clamp(fit, tou)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub iter: usize,
    pub price: f64,
    pub imbalance_kw: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClearingResult {
    pub price: f64,
    pub quantities: Vec<f64>,
    pub p_grid: f64,
    /// Number of price updates.
    pub iterations: usize,
    /// Number of rounds in which every responder was evaluated.
    pub evaluations: usize,
    pub boundary: Boundary,
    pub price_path: Vec<PathPoint>,
    pub converged: bool,
}

impl ClearingResult {
    pub fn imbalance(&self) -> f64 {
        self.quantities.iter().sum()
    }
}

pub(crate) fn evaluate<R: Responder>(responders: &[R], price: f64, parallel: bool) -> Result<Vec<f64>> {
    if parallel && responders.len() > 1 {
        responders.par_iter().map(|r| r.respond(price)).collect()
    } else {
        responders.iter().map(|r| r.respond(price)).collect()
    }
}

pub(crate) fn check_corridor(fit: f64, tou: f64) -> Result<()> {
    if !(fit < tou) || !fit.is_finite() || !tou.is_finite() {
        return Err(crate::error::Error::config(format!("price corridor [{fit}, {tou}] is empty")));
    }
    Ok(())
}
