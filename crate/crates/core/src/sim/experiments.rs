//! Preset experiment batteries. Each returns one comparison table.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{realized_days, run_horizon, MarketMode, SimConfig, SimInputs, SimulationReport};
use crate::error::{Error, Result};
use crate::io::default_tariff;
use crate::model::{IntervalGrid, MicrogridSpec, PriceSchedule};
use crate::strategy::StrategyKind;
use crate::synth::{generate_fleet, synth_history};

pub const PRESETS: [&str; 6] = ["case-compare", "assa-vs-fixed", "da-dimension-sweep", "strategy-compare", "phi-sweep", "delay-stress"];

pub const PHI_SWEEP: [f64; 5] = [0.0, 500.0, 5000.0, 5e4, 5e5];
pub const DELAYS: [usize; 3] = [0, 1, 2];
/// Step sizes probed against ASSA, $/kWh per kW.
pub const FIXED_STEPS: [f64; 3] = [5e-6, 5e-5, 5e-4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentOptions {
    pub seed: u64,
    pub agents: usize,
    pub days: usize,
    pub periods_per_day: usize,
    /// Agent studied in the price-taker replays.
    pub agent: usize,
    pub history_days: usize,
    pub mc_samples: usize,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions { seed: 7, agents: 20, days: 7, periods_per_day: 288, agent: 6, history_days: 7, mc_samples: 100_000 }
    }
}

impl ExperimentOptions {
    fn validate(&self) -> Result<()> {
        if self.agents == 0 || self.days == 0 || self.history_days == 0 {
            return Err(Error::config("experiment needs at least one agent, one day and one history day"));
        }
        if self.agent >= self.agents {
            return Err(Error::config(format!("replay agent {} outside a fleet of {}", self.agent, self.agents)));
        }
        Ok(())
    }

    fn tariff(&self) -> PriceSchedule {
        default_tariff(self.periods_per_day)
    }

    fn config(&self, days: usize) -> Result<SimConfig> {
        let mut cfg = SimConfig::new(IntervalGrid::new(self.periods_per_day, days)?, self.tariff());
        cfg.seed = self.seed;
        cfg.mc_samples = self.mc_samples;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, header: &[&str]) -> Self {
        Table { name: name.into(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, label: impl Into<String>, values: &[f64]) {
        let mut row = vec![label.into()];
        row.extend(values.iter().map(|v| format!("{v}")));
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(s, "{}", r.join(","));
        }
        s
    }

    /// Numeric cell lookup by row label and column name.
    pub fn value(&self, label: &str, column: &str) -> Option<f64> {
        let c = self.header.iter().position(|h| h == column)?;
        self.rows.iter().find(|r| r[0] == label)?.get(c)?.parse().ok()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(format!("{}.csv", self.name));
        fs::write(&path, self.to_csv()).map_err(|e| Error::io(&path, e))
    }
}

/// Seeded community: fleet over the run horizon plus proxy-priced history.
pub fn community(opts: &ExperimentOptions) -> Result<SimInputs> {
    let grid = IntervalGrid::new(opts.periods_per_day, opts.days)?;
    let fleet = generate_fleet(opts.seed, opts.agents, &grid)?;
    let history = synth_history(opts.seed, &fleet, &opts.tariff(), opts.periods_per_day, opts.history_days)?;
    Ok(SimInputs { fleet, history })
}

/// Single-agent price-taker setting. A myopic community trades over `history_days + days`; the
/// studied agent's first days become its scenario history and the rest are replayed at the
/// community's cleared prices, starting from the state the community left it in.
#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub inputs: SimInputs,
    pub prices: Vec<f64>,
    pub grid: IntervalGrid,
}

pub fn replay_setup(opts: &ExperimentOptions) -> Result<Replay> {
    opts.validate()?;
    let total = opts.history_days + opts.days;
    let mut cfg = opts.config(total)?;
    cfg.strategies = vec![StrategyKind::Greedy];
    cfg.compute_gap = false;
    let fleet = generate_fleet(opts.seed, opts.agents, &cfg.grid)?;
    let warm = run_horizon(&SimInputs { fleet: fleet.clone(), history: Vec::new() }, &cfg)?;
    let ppd = opts.periods_per_day;
    let cut = opts.history_days * ppd;
    let k = opts.agent;
    let history = realized_days(&fleet[k..=k], &warm.trace[..cut], ppd)?.remove(0);
    let mg = &fleet[k];
    let slice = |v: &[f64]| v[cut..].to_vec();
    let agent = MicrogridSpec {
        load_kw: slice(&mg.load_kw),
        res_kw: slice(&mg.res_kw),
        reactive_load_kvar: slice(&mg.reactive_load_kvar),
        soc_init: warm.trace[cut - 1].agents[k].soc,
        ..mg.clone()
    };
    Ok(Replay {
        inputs: SimInputs { fleet: vec![agent], history: vec![history] },
        prices: warm.trace[cut..].iter().map(|r| r.p2p_price).collect(),
        grid: IntervalGrid::new(ppd, opts.days)?,
    })
}

pub fn run_replay(replay: &Replay, opts: &ExperimentOptions, strategy: StrategyKind, delay: usize) -> Result<SimulationReport> {
    let mut cfg = opts.config(opts.days)?;
    cfg.market = MarketMode::PriceTaker { prices: replay.prices.clone() };
    cfg.strategies = vec![strategy];
    cfg.delay = delay;
    run_horizon(&replay.inputs, &cfg)
}

/// The M0–M3 / ablation roster of the replay study, with labels.
pub fn roster() -> Vec<(&'static str, StrategyKind)> {
    vec![
        ("m0_hindsight", StrategyKind::HindsightReplay),
        ("m1_ddoo", StrategyKind::ddoo()),
        ("m1a_greedy", StrategyKind::Greedy),
        ("m1b_irt_only", StrategyKind::IrtOnly { phi: 5000.0, tau: 1.0 }),
        ("m2_lyapunov", StrategyKind::Lyapunov { v: None, theta: None }),
        ("m3_mpc", StrategyKind::MpcOracle { horizon: 48, forecast_error: 0.0, cyclic: true, seed: 0 }),
    ]
}

fn gap(cost: f64, m0: f64) -> f64 {
    if m0.abs() > 1e-12 {
        100.0 * (cost - m0) / m0.abs()
    } else {
        0.0
    }
}

pub fn case_compare(opts: &ExperimentOptions) -> Result<Table> {
    opts.validate()?;
    let inputs = community(opts)?;
    let mut t = Table::new("case-compare", &["case", "self_sufficiency_pct", "reverse_flow_pct", "avg_mg_cost", "mean_iterations", "grid_import_kwh", "grid_export_kwh"]);
    for (label, market) in [("p2p_assa", MarketMode::Assa), ("no_p2p", MarketMode::NoP2p)] {
        let mut cfg = opts.config(opts.days)?;
        cfg.market = market;
        cfg.compute_gap = false;
        let m = run_horizon(&inputs, &cfg)?.metrics;
        t.push(label, &[m.self_sufficiency_pct, m.reverse_flow_pct, m.avg_mg_cost, m.mean_iterations, m.grid_import_kwh, m.grid_export_kwh]);
    }
    Ok(t)
}

pub fn assa_vs_fixed(opts: &ExperimentOptions) -> Result<Table> {
    opts.validate()?;
    let inputs = community(opts)?;
    let mut cfg = opts.config(opts.days)?;
    cfg.compute_gap = false;
    cfg.fixed_step_probe = FIXED_STEPS.to_vec();
    let m = run_horizon(&inputs, &cfg)?.metrics;
    let n = m.intervals as f64;
    let mut t = Table::new("assa-vs-fixed", &["method", "sigma", "converged_pct", "oscillation_pct", "cap_pct", "mean_iterations_converged"]);
    t.push("assa", &[cfg.assa.sigma0, 100.0 * (n - m.iteration_cap_hits as f64) / n, 0.0, 100.0 * m.iteration_cap_hits as f64 / n, m.mean_iterations]);
    for p in &m.fixed_step_probe {
        let pct = |x: usize| 100.0 * x as f64 / n;
        t.push("fixed", &[p.sigma, pct(p.converged), pct(p.oscillations), pct(p.cap_hits), p.mean_iterations_converged.unwrap_or(f64::NAN)]);
    }
    Ok(t)
}

pub fn da_dimension_sweep(opts: &ExperimentOptions) -> Result<Table> {
    opts.validate()?;
    let inputs = community(opts)?;
    let mut t = Table::new("da-dimension-sweep", &["market", "dimension", "avg_mg_cost", "total_cost", "mean_evaluations", "speedup_per_iteration", "speedup_per_evaluation"]);
    let mut cfg = opts.config(opts.days)?;
    cfg.compute_gap = false;
    let assa = run_horizon(&inputs, &cfg)?.metrics;
    t.push("assa", &[0.0, assa.avg_mg_cost, assa.total_cost, assa.mean_evaluations, f64::NAN, f64::NAN]);
    for d in super::SPEEDUP_DIMENSIONS {
        cfg.market = MarketMode::Conventional { dimension: d };
        let m = run_horizon(&inputs, &cfg)?.metrics;
        let s = &assa.speedup_vs_d[&d.to_string()];
        t.push("conventional", &[d as f64, m.avg_mg_cost, m.total_cost, m.mean_evaluations, s.per_iteration.unwrap_or(f64::INFINITY), s.per_evaluation]);
    }
    Ok(t)
}

pub fn strategy_compare(opts: &ExperimentOptions) -> Result<Table> {
    let replay = replay_setup(opts)?;
    let mut t = Table::new("strategy-compare", &["strategy", "cost", "gap_pct", "final_soc"]);
    let mut m0 = None;
    for (label, kind) in roster() {
        let r = run_replay(&replay, opts, kind, 0)?;
        let bound = *m0.get_or_insert(r.metrics.m0_costs.as_ref().map_or(f64::NAN, |v| v[0]));
        let soc = r.trace.last().map_or(f64::NAN, |x| x.agents[0].soc);
        t.push(label, &[r.metrics.total_cost, gap(r.metrics.total_cost, bound), soc]);
    }
    Ok(t)
}

pub fn phi_sweep(opts: &ExperimentOptions) -> Result<Table> {
    let replay = replay_setup(opts)?;
    let mut t = Table::new("phi-sweep", &["phi", "cost", "gap_pct"]);
    for phi in PHI_SWEEP {
        let r = run_replay(&replay, opts, StrategyKind::Ddoo { phi, tau: 1.0 }, 0)?;
        let m0 = r.metrics.m0_costs.as_ref().map_or(f64::NAN, |v| v[0]);
        t.push(format!("{phi}"), &[r.metrics.total_cost, gap(r.metrics.total_cost, m0)]);
    }
    Ok(t)
}

pub fn delay_stress(opts: &ExperimentOptions) -> Result<Table> {
    let replay = replay_setup(opts)?;
    let mut t = Table::new("delay-stress", &["delay_intervals", "cost", "gap_pct"]);
    for d in DELAYS {
        let r = run_replay(&replay, opts, StrategyKind::ddoo(), d)?;
        let m0 = r.metrics.m0_costs.as_ref().map_or(f64::NAN, |v| v[0]);
        t.push(format!("{d}"), &[r.metrics.total_cost, gap(r.metrics.total_cost, m0)]);
    }
    Ok(t)
}

pub fn run_preset(name: &str, opts: &ExperimentOptions) -> Result<Table> {
    match name {
        "case-compare" => case_compare(opts),
        "assa-vs-fixed" => assa_vs_fixed(opts),
        "da-dimension-sweep" => da_dimension_sweep(opts),
        "strategy-compare" => strategy_compare(opts),
        "phi-sweep" => phi_sweep(opts),
        "delay-stress" => delay_stress(opts),
        other => Err(Error::config(format!("unknown preset {other:?}; expected one of {}", PRESETS.join(", ")))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentOptions {
        ExperimentOptions { seed: 3, agents: 3, days: 1, periods_per_day: 24, agent: 1, history_days: 2, mc_samples: 2000 }
    }

    #[test]
    fn table_csv_and_lookup() {
        let mut t = Table::new("x", &["label", "a", "b"]);
        t.push("r1", &[1.0, 2.5]);
        assert_eq!(t.to_csv(), "label,a,b\nr1,1,2.5\n");
        assert_eq!(t.value("r1", "b"), Some(2.5));
        assert_eq!(t.value("r2", "b"), None);
    }

    #[test]
    fn replay_slices_the_warm_up() {
        let o = tiny();
        let r = replay_setup(&o).unwrap();
        assert_eq!(r.prices.len(), 24);
        assert_eq!(r.inputs.history[0].len(), 2);
        assert_eq!(r.inputs.fleet[0].load_kw.len(), 24);
        r.inputs.fleet[0].validate(&r.grid).unwrap();
    }

    #[test]
    fn every_preset_produces_rows() {
        let o = tiny();
        for p in PRESETS {
            let t = run_preset(p, &o).unwrap();
            assert!(!t.rows.is_empty(), "{p}");
            assert!(t.rows.iter().all(|r| r.len() == t.header.len()), "{p}");
        }
        assert!(matches!(run_preset("nope", &o), Err(Error::Config(_))));
    }

    #[test]
    fn replay_agent_must_exist() {
        let o = ExperimentOptions { agent: 3, ..tiny() };
        assert!(replay_setup(&o).is_err());
    }
}
