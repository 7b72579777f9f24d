use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::report::IntervalRecord;
use crate::auction::Boundary;
use crate::error::{Error, Result};

/// Bid dimensions the speedup is reported against.
pub const SPEEDUP_DIMENSIONS: [usize; 3] = [5, 10, 20];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Speedup {
    /// `D / mean price updates`; absent when no interval needed an update.
    pub per_iteration: Option<f64>,
    /// `D / (mean price updates + 1)`.
    pub per_evaluation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct EquilibriumFailures {
    pub checked: usize,
    pub price_feasible: usize,
    pub best_response: usize,
    pub balance: usize,
    pub complementarity: usize,
    pub directional: usize,
}

impl EquilibriumFailures {
    pub fn total(&self) -> usize {
        self.price_feasible + self.best_response + self.balance + self.complementarity + self.directional
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSummary {
    pub sigma: f64,
    pub converged: usize,
    pub oscillations: usize,
    pub cap_hits: usize,
    pub mean_iterations_converged: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Metrics {
    pub intervals: usize,
    pub agents: Vec<String>,
    pub strategies: Vec<String>,
    pub self_sufficiency_pct: f64,
    pub reverse_flow_pct: f64,
    /// Mean over agents of the cumulative cost, $.
    pub avg_mg_cost: f64,
    pub total_cost: f64,
    pub agent_costs: Vec<f64>,
    pub strategy_costs: BTreeMap<String, f64>,
    pub mean_iterations: f64,
    pub max_iterations: usize,
    pub mean_evaluations: f64,
    pub speedup_vs_d: BTreeMap<String, Speedup>,
    pub grid_import_kwh: f64,
    pub grid_export_kwh: f64,
    // Filled by the engine.
    #[serde(default)]
    pub iteration_cap_hits: usize,
    #[serde(default)]
    pub m0_costs: Option<Vec<f64>>,
    #[serde(default)]
    pub optimality_gap_pct: Option<f64>,
    #[serde(default)]
    pub balance_violations: usize,
    #[serde(default)]
    pub money_violations: usize,
    #[serde(default)]
    pub max_operator_imbalance: f64,
    #[serde(default)]
    pub clamped_decisions: usize,
    #[serde(default)]
    pub weight_underflows: usize,
    #[serde(default)]
    pub voltage_violation_intervals: Option<usize>,
    #[serde(default)]
    pub equilibrium_failures: Option<EquilibriumFailures>,
    #[serde(default)]
    pub fixed_step_probe: Vec<ProbeSummary>,
}

/// Speedup of a `d`-point bid auction over a mean of `mean_iterations` price updates.
pub fn speedup(d: usize, mean_iterations: f64) -> Speedup {
    let d = d as f64;
    Speedup { per_iteration: (mean_iterations > 0.0).then(|| d / mean_iterations), per_evaluation: d / (mean_iterations + 1.0) }
}

pub fn compute_metrics(trace: &[IntervalRecord], agents: &[String], strategies: &[String], delta: f64, dt: f64) -> Result<Metrics> {
    if trace.is_empty() {
        return Err(Error::data("metrics need a non-empty trace"));
    }
    let n = trace.len() as f64;
    let interior = trace.iter().filter(|r| r.boundary == Boundary::Interior).count();
    let reverse = trace.iter().filter(|r| r.p_grid_kw > delta).count();
    let k = agents.len();
    let mut agent_costs = vec![0.0; k];
    for r in trace {
        if r.agents.len() != k {
            return Err(Error::data(format!("record {}/{} has {} agents, expected {k}", r.day, r.interval, r.agents.len())));
        }
        for (c, a) in agent_costs.iter_mut().zip(&r.agents) {
            *c += a.cost;
        }
    }
    let total: f64 = agent_costs.iter().sum();
    let mut strategy_costs = BTreeMap::new();
    for (s, c) in strategies.iter().zip(&agent_costs) {
        *strategy_costs.entry(s.clone()).or_insert(0.0) += c;
    }
    let mean_iterations = trace.iter().map(|r| r.iterations as f64).sum::<f64>() / n;
    let mean_evaluations = trace.iter().map(|r| r.evaluations as f64).sum::<f64>() / n;
    Ok(Metrics {
        intervals: trace.len(),
        agents: agents.to_vec(),
        strategies: strategies.to_vec(),
        self_sufficiency_pct: 100.0 * interior as f64 / n,
        reverse_flow_pct: 100.0 * reverse as f64 / n,
        avg_mg_cost: if k > 0 { total / k as f64 } else { 0.0 },
        total_cost: total,
        agent_costs,
        strategy_costs,
        mean_iterations,
        max_iterations: trace.iter().map(|r| r.iterations).max().unwrap_or(0),
        mean_evaluations,
        speedup_vs_d: SPEEDUP_DIMENSIONS.iter().map(|&d| (d.to_string(), speedup(d, mean_iterations))).collect(),
        grid_import_kwh: trace.iter().map(|r| (-r.p_grid_kw).max(0.0) * dt).sum(),
        grid_export_kwh: trace.iter().map(|r| r.p_grid_kw.max(0.0) * dt).sum(),
        ..Default::default()
    })
}

#[cfg(test)]
mod tests {
    use super::super::report::AgentRecord;
    use super::*;

    fn rec(boundary: Boundary, p_grid: f64, iterations: usize) -> IntervalRecord {
        IntervalRecord {
            day: 0,
            interval: 0,
            p2p_price: 0.1,
            p_grid_kw: p_grid,
            iterations,
            evaluations: iterations + 1,
            boundary,
            agents: vec![AgentRecord { cost: 1.0, ..Default::default() }],
        }
    }

    fn ids() -> (Vec<String>, Vec<String>) {
        (vec!["MG1".into()], vec!["ddoo".into()])
    }

    #[test]
    fn all_interior() {
        let (a, s) = ids();
        let m = compute_metrics(&vec![rec(Boundary::Interior, 0.0, 2); 4], &a, &s, 5.0, 1.0).unwrap();
        assert_eq!((m.self_sufficiency_pct, m.reverse_flow_pct), (100.0, 0.0));
        assert_eq!(m.total_cost, 4.0);
        assert!(compute_metrics(&[], &a, &s, 5.0, 1.0).is_err());
    }

    #[test]
    fn half_exporting() {
        let (a, s) = ids();
        let t = vec![rec(Boundary::Fit, 50.0, 1), rec(Boundary::Tou, -50.0, 1), rec(Boundary::Fit, 20.0, 1), rec(Boundary::Interior, 1.0, 1)];
        let m = compute_metrics(&t, &a, &s, 5.0, 1.0).unwrap();
        assert_eq!(m.reverse_flow_pct, 50.0);
        assert_eq!(m.grid_export_kwh, 71.0);
    }

    #[test]
    fn speedup_readings() {
        let s = speedup(20, 1.07);
        assert!((s.per_evaluation - 9.66).abs() < 0.005);
        assert!((speedup(10, 1.07).per_evaluation - 4.83).abs() < 0.005);
        assert_eq!(speedup(5, 0.0).per_iteration, None);
    }
}
