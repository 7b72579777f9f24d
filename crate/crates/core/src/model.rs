//! Domain types shared by every layer of the simulator.
//!
//! Units: power kW, energy kWh, money $, prices $/kWh, SoC as a fraction of capacity.
//! Sign convention: `p_ex > 0` means the microgrid buys; `p_grid > 0` means the community exports.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalGrid {
    pub dt_hours: f64,
    pub periods_per_day: usize,
    pub horizon_days: usize,
}

impl IntervalGrid {
    pub fn new(periods_per_day: usize, horizon_days: usize) -> Result<Self> {
        if periods_per_day == 0 {
            return Err(Error::config("periods_per_day must be positive"));
        }
        let g = IntervalGrid { dt_hours: 24.0 / periods_per_day as f64, periods_per_day, horizon_days };
        g.validate()?;
        Ok(g)
    }

    /// 288 five-minute intervals per day.
    pub fn five_minute(horizon_days: usize) -> Self {
        IntervalGrid { dt_hours: 1.0 / 12.0, periods_per_day: 288, horizon_days }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt_hours > 0.0) {
            return Err(Error::config("dt_hours must be positive"));
        }
        if (self.periods_per_day as f64 * self.dt_hours - 24.0).abs() > 1e-12 {
            return Err(Error::config(format!(
                "periods_per_day ({}) x dt_hours ({}) must equal 24",
                self.periods_per_day, self.dt_hours
            )));
        }
        if self.horizon_days == 0 {
            return Err(Error::config("horizon_days must be at least 1"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.periods_per_day * self.horizon_days
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn with_days(&self, horizon_days: usize) -> Self {
        IntervalGrid { horizon_days, ..*self }
    }

    /// Hour of day at the start of interval `t` (interval-of-day index).
    pub fn hour_of(&self, t: usize) -> f64 {
        (t % self.periods_per_day) as f64 * self.dt_hours
    }
}

/// Utility tariff: buy at `tou`, sell at `fit`, indexed by interval of day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSchedule {
    pub tou: Vec<f64>,
    pub fit: Vec<f64>,
}

impl PriceSchedule {
    pub fn new(tou: Vec<f64>, fit: Vec<f64>) -> Result<Self> {
        let s = PriceSchedule { tou, fit };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tou.len() != self.fit.len() || self.tou.is_empty() {
            return Err(Error::config("tariff: tou and fit must be non-empty and equally long"));
        }
        for (t, (&b, &s)) in self.tou.iter().zip(&self.fit).enumerate() {
            if !(s >= 0.0 && b >= 0.0) || !b.is_finite() {
                return Err(Error::config(format!("tariff: negative or non-finite price at interval {t}")));
            }
            if !(s < b) {
                return Err(Error::config(format!("tariff: fit {s} must be below tou {b} at interval {t}")));
            }
        }
        Ok(())
    }

    /// `(fit, tou)` for an absolute or interval-of-day index.
    pub fn corridor(&self, t: usize) -> (f64, f64) {
        let i = t % self.tou.len();
        (self.fit[i], self.tou[i])
    }

    pub fn periods(&self) -> usize {
        self.tou.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistributionFamily {
    Normal,
    /// Beta(alpha, beta), standardized to zero mean and unit variance.
    Beta { alpha: f64, beta: f64 },
    /// Standardized samples of the forecast error; re-standardized on use.
    Empirical { samples: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundDistribution {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub family: DistributionFamily,
}

impl BoundDistribution {
    pub fn constant(value: f64, len: usize) -> Self {
        BoundDistribution { mean: vec![value; len], std: vec![0.0; len], family: DistributionFamily::Normal }
    }

    pub fn validate(&self, name: &str, len: usize) -> Result<()> {
        if self.mean.len() != self.std.len() {
            return Err(Error::config(format!("{name}: mean and std lengths differ")));
        }
        if self.mean.len() != len {
            return Err(Error::config(format!("{name}: expected {len} values, found {}", self.mean.len())));
        }
        if self.std.iter().any(|s| !(*s >= 0.0)) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::config(format!("{name}: std must be non-negative and means finite")));
        }
        match &self.family {
            DistributionFamily::Beta { alpha, beta } if !(*alpha > 0.0 && *beta > 0.0) => {
                Err(Error::config(format!("{name}: beta parameters must be positive")))
            }
            DistributionFamily::Empirical { samples } if samples.len() < 2 => {
                Err(Error::config(format!("{name}: empirical family needs at least two samples")))
            }
            _ => Ok(()),
        }
    }
}

fn default_confidence() -> f64 {
    0.05
}

/// Generalized energy storage: batteries plus storage-like flexible load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GesParams {
    pub capacity_kwh: f64,
    pub eta_c: f64,
    pub eta_d: f64,
    /// Fraction of stored energy lost per interval.
    pub self_discharge: f64,
    /// Exogenous SoC increment per interval of day.
    pub baseline_soc_gain: Vec<f64>,
    pub cost_charge: f64,
    pub cost_discharge: f64,
    pub p_charge_max: BoundDistribution,
    pub p_discharge_max: BoundDistribution,
    pub soc_upper: BoundDistribution,
    pub soc_lower: BoundDistribution,
    /// Chance-constraint risk level.
    #[serde(default = "default_confidence")]
    pub confidence: f64,
}

impl GesParams {
    pub fn validate(&self, periods: usize) -> Result<()> {
        if !(self.capacity_kwh > 0.0) {
            return Err(Error::config("ges: capacity must be positive"));
        }
        if !(self.eta_c > 0.0 && self.eta_c <= 1.0 && self.eta_d > 0.0 && self.eta_d <= 1.0) {
            return Err(Error::config("ges: efficiencies must lie in (0, 1]"));
        }
        if !(self.self_discharge >= 0.0 && self.self_discharge < 1.0) {
            return Err(Error::config("ges: self_discharge must lie in [0, 1)"));
        }
        if self.baseline_soc_gain.len() != periods {
            return Err(Error::config("ges: baseline_soc_gain must have one value per interval of day"));
        }
        if !(self.cost_charge >= 0.0 && self.cost_discharge >= 0.0) {
            return Err(Error::config("ges: costs must be non-negative"));
        }
        if !(self.confidence > 0.0 && self.confidence <= 0.5) {
            return Err(Error::config("ges: confidence must lie in (0, 0.5]"));
        }
        self.p_charge_max.validate("ges.p_charge_max", periods)?;
        self.p_discharge_max.validate("ges.p_discharge_max", periods)?;
        self.soc_upper.validate("ges.soc_upper", periods)?;
        self.soc_lower.validate("ges.soc_lower", periods)?;
        for t in 0..periods {
            if !(self.soc_lower.mean[t] < self.soc_upper.mean[t]) {
                return Err(Error::config(format!("ges: soc_lower must be below soc_upper at interval {t}")));
            }
        }
        Ok(())
    }

    /// Per-interval retention factor `1 - self_discharge`.
    pub fn retention(&self) -> f64 {
        1.0 - self.self_discharge
    }
}

fn default_band() -> f64 {
    0.005
}

/// Dispatchable generator. Its marginal cost rises linearly from `cost_per_kwh` at `p_min`
/// to `cost_per_kwh + marginal_band` at `p_max`; a zero band gives a purely linear cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgParams {
    pub cost_per_kwh: f64,
    pub p_min: f64,
    pub p_max: f64,
    #[serde(default = "default_band")]
    pub marginal_band: f64,
}

impl DgParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_min >= 0.0 && self.p_min <= self.p_max) {
            return Err(Error::config("dg: need 0 <= p_min <= p_max"));
        }
        if !(self.cost_per_kwh >= 0.0 && self.marginal_band >= 0.0) {
            return Err(Error::config("dg: cost and marginal band must be non-negative"));
        }
        Ok(())
    }

    /// Coefficient `b` of the `0.5 b (p - p_min)^2` term, $/kW^2 per hour.
    pub fn quad_coeff(&self) -> f64 {
        let span = self.p_max - self.p_min;
        if span > 0.0 { self.marginal_band / span } else { 0.0 }
    }

    /// Cost in $ of running at `p` kW for `dt` hours.
    pub fn cost(&self, p: f64, dt: f64) -> f64 {
        let x = p - self.p_min;
        (self.cost_per_kwh * p + 0.5 * self.quad_coeff() * x * x) * dt
    }
}

/// Nameplate figures the synthetic generator drew; kept for traceability and per-unit bases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Ratings {
    pub load_kw: f64,
    pub pv_kw: f64,
    pub wind_kw: f64,
    pub es_kwh: f64,
    pub es_duration_h: f64,
    pub ves_kwh: f64,
    pub ves_duration_h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub r_pu: f64,
    pub x_pu: f64,
}

fn default_v_sub() -> f64 {
    1.0
}
fn default_v_dev() -> f64 {
    0.05
}

/// Radial feeder rooted at bus 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub bus_count: usize,
    pub branches: Vec<Branch>,
    #[serde(default = "default_v_sub")]
    pub v_substation: f64,
    #[serde(default = "default_v_dev")]
    pub v_deviation_max: f64,
    /// Power base in kW for per-unit conversion.
    pub s_base_kw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicrogridSpec {
    pub id: String,
    pub load_kw: Vec<f64>,
    pub res_kw: Vec<f64>,
    pub reactive_load_kvar: Vec<f64>,
    pub ges: GesParams,
    pub dg: DgParams,
    pub bus_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<NetworkSpec>,
    pub soc_init: f64,
    #[serde(default)]
    pub ratings: Ratings,
}

impl MicrogridSpec {
    pub fn validate(&self, grid: &IntervalGrid) -> Result<()> {
        let n = grid.len();
        let tag = |m: String| Error::config(format!("microgrid {}: {m}", self.id));
        for (name, seq) in [("load_kw", &self.load_kw), ("res_kw", &self.res_kw), ("reactive_load_kvar", &self.reactive_load_kvar)] {
            if seq.len() != n {
                return Err(tag(format!("{name} has {} values, horizon needs {n}", seq.len())));
            }
        }
        if self.load_kw.iter().chain(&self.res_kw).any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(tag("load and RES must be finite and non-negative".into()));
        }
        self.ges.validate(grid.periods_per_day).map_err(|e| tag(e.to_string()))?;
        self.dg.validate().map_err(|e| tag(e.to_string()))?;
        let (lo, hi) = (self.ges.soc_lower.mean[0], self.ges.soc_upper.mean[0]);
        if !(self.soc_init >= lo - TOL && self.soc_init <= hi + TOL) {
            return Err(tag(format!("soc_init {} outside [{lo}, {hi}]", self.soc_init)));
        }
        if let Some(net) = &self.network {
            crate::network::validate(net).map_err(|e| tag(e.to_string()))?;
            if self.bus_index >= net.bus_count {
                return Err(tag(format!("bus_index {} beyond {} buses", self.bus_index, net.bus_count)));
            }
        }
        Ok(())
    }

    /// Net load `load - res` at absolute interval `t`.
    pub fn net_load(&self, t: usize) -> f64 {
        self.load_kw[t] - self.res_kw[t]
    }

    /// Net load sequence of one day of the horizon.
    pub fn day_net_load(&self, day: usize, periods: usize) -> Vec<f64> {
        (day * periods..(day + 1) * periods).map(|t| self.net_load(t)).collect()
    }
}

/// One day of net load and price trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDay {
    pub net_load_kw: Vec<f64>,
    pub price: Vec<f64>,
    pub day_average_price: f64,
}

impl ScenarioDay {
    pub fn new(net_load_kw: Vec<f64>, price: Vec<f64>) -> Result<Self> {
        if net_load_kw.len() != price.len() || price.is_empty() {
            return Err(Error::data("scenario day: net load and price lengths differ or are empty"));
        }
        let day_average_price = price.iter().sum::<f64>() / price.len() as f64;
        Ok(ScenarioDay { net_load_kw, price, day_average_price })
    }

    pub fn periods(&self) -> usize {
        self.price.len()
    }

    pub fn validate(&self, periods: usize) -> Result<()> {
        if self.net_load_kw.len() != periods || self.price.len() != periods {
            return Err(Error::data(format!("scenario day must have {periods} intervals")));
        }
        let mean = self.price.iter().sum::<f64>() / periods as f64;
        if (mean - self.day_average_price).abs() > 1e-9 {
            return Err(Error::data("scenario day: day_average_price disagrees with the price mean"));
        }
        Ok(())
    }
}

/// Deterministic equivalents of the chance-constrained GES bounds, per interval of day.
/// `soc_min[t]`/`soc_max[t]` bound the SoC reached at the end of interval `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeterministicBounds {
    pub p_charge_max: Vec<f64>,
    pub p_discharge_max: Vec<f64>,
    pub soc_max: Vec<f64>,
    pub soc_min: Vec<f64>,
}

impl DeterministicBounds {
    pub fn periods(&self) -> usize {
        self.soc_max.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.soc_max.len();
        if self.soc_min.len() != n || self.p_charge_max.len() != n || self.p_discharge_max.len() != n {
            return Err(Error::config("bounds: sequence lengths differ"));
        }
        for t in 0..n {
            if self.soc_min[t] > self.soc_max[t] {
                return Err(Error::config(format!(
                    "bounds: soc_min {} exceeds soc_max {} at interval {t}",
                    self.soc_min[t], self.soc_max[t]
                )));
            }
            if self.p_charge_max[t] < 0.0 || self.p_discharge_max[t] < 0.0 {
                return Err(Error::config(format!("bounds: negative power bound at interval {t}")));
            }
        }
        Ok(())
    }
}

/// Scenario days paired with their hindsight-optimal SoC trajectories.
/// Each trajectory has `T + 1` points: the initial SoC followed by the SoC after every interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoricalDataset {
    pub scenarios: VecDeque<ScenarioDay>,
    pub optimal_soc: VecDeque<Vec<f64>>,
    pub window_capacity: Option<usize>,
}

impl HistoricalDataset {
    pub fn new(window_capacity: Option<usize>) -> Self {
        HistoricalDataset { scenarios: VecDeque::new(), optimal_soc: VecDeque::new(), window_capacity }
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    /// Append a pair, checking the trajectory against `bounds`; evicts the oldest entry past capacity.
    pub fn push(&mut self, day: ScenarioDay, soc: Vec<f64>, bounds: &DeterministicBounds) -> Result<()> {
        let t = day.periods();
        if soc.len() != t + 1 || bounds.periods() != t {
            return Err(Error::data(format!("dataset: SoC trajectory must have {} points", t + 1)));
        }
        for i in 0..t {
            let s = soc[i + 1];
            if s < bounds.soc_min[i] - 1e-6 || s > bounds.soc_max[i] + 1e-6 {
                return Err(Error::Invariant(format!(
                    "dataset: stored SoC {s} outside [{}, {}] at interval {i}",
                    bounds.soc_min[i], bounds.soc_max[i]
                )));
            }
        }
        self.scenarios.push_back(day);
        self.optimal_soc.push_back(soc);
        if let Some(cap) = self.window_capacity {
            while self.scenarios.len() > cap.max(1) {
                self.scenarios.pop_front();
                self.optimal_soc.pop_front();
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() || self.scenarios.len() != self.optimal_soc.len() {
            return Err(Error::data("dataset: need S >= 1 aligned scenarios and SoC trajectories"));
        }
        Ok(())
    }
}

/// One interval's dispatch for one microgrid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct DispatchDecision {
    pub p_dg: f64,
    pub p_charge: f64,
    pub p_discharge: f64,
    pub p_ex: f64,
    pub soc_next: f64,
    /// Set when the SoC window was unreachable and the decision was clamped.
    pub clamped: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rejects_inconsistent_resolution() {
        assert!(IntervalGrid::new(288, 1).is_ok());
        let bad = IntervalGrid { dt_hours: 0.1, periods_per_day: 288, horizon_days: 1 };
        assert!(bad.validate().is_err());
        assert!(IntervalGrid::new(288, 0).is_err());
        assert_eq!(IntervalGrid::five_minute(2).len(), 576);
    }

    #[test]
    fn tariff_requires_strict_corridor() {
        assert!(PriceSchedule::new(vec![0.1, 0.2], vec![0.05, 0.05]).is_ok());
        assert!(PriceSchedule::new(vec![0.1], vec![0.1]).is_err());
        assert!(PriceSchedule::new(vec![0.1], vec![-0.01]).is_err());
    }

    #[test]
    fn constant_price_average() {
        let d = ScenarioDay::new(vec![0.0; 288], vec![0.1; 288]).unwrap();
        assert!((d.day_average_price - 0.1).abs() < 1e-12);
        d.validate(288).unwrap();
    }

    #[test]
    fn dg_cost_band_zero_is_linear() {
        let dg = DgParams { cost_per_kwh: 0.15, p_min: 0.0, p_max: 100.0, marginal_band: 0.0 };
        assert!((dg.cost(50.0, 0.5) - 3.75).abs() < 1e-12);
        let dg = DgParams { marginal_band: 0.01, ..dg };
        // marginal cost at p_max = a + band
        let h = 1e-4;
        let mc = (dg.cost(100.0, 1.0) - dg.cost(100.0 - h, 1.0)) / h;
        assert!((mc - 0.16).abs() < 1e-6);
    }

    #[test]
    fn dataset_window_evicts_oldest() {
        let bounds = DeterministicBounds {
            p_charge_max: vec![1.0; 2],
            p_discharge_max: vec![1.0; 2],
            soc_max: vec![0.9; 2],
            soc_min: vec![0.1; 2],
        };
        let mut ds = HistoricalDataset::new(Some(2));
        for k in 0..3 {
            let day = ScenarioDay::new(vec![k as f64; 2], vec![0.1; 2]).unwrap();
            ds.push(day, vec![0.5; 3], &bounds).unwrap();
        }
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.scenarios[0].net_load_kw[0], 1.0);
        let day = ScenarioDay::new(vec![0.0; 2], vec![0.1; 2]).unwrap();
        assert!(ds.push(day, vec![0.5, 0.95, 0.5], &bounds).is_err());
    }
}
