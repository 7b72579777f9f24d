//! The multi-day market loop: observe, prepare agents, clear, apply, settle, record.

use std::time::Instant;

use rayon::prelude::*;

use crate::auction::{
    clear_assa, clear_conventional, clear_fixed_step, make_bid_curve, price_grid, verify_equilibrium, AssaConfig, Boundary, ClearingResult,
    FixedStepFailure,
};
use crate::chance::{reformulate_bounds, DEFAULT_SAMPLES};
use crate::dispatch::{build_offline_dataset, rolling_update, solve_hindsight, DayDispatchOptions, DayDispatchSolution, Exchange, Stage};
use crate::error::{Error, Result};
use crate::model::{DeterministicBounds, DispatchDecision, HistoricalDataset, IntervalGrid, MicrogridSpec, PriceSchedule, ScenarioDay};
use crate::network;
use crate::online::OnlineContext;
use crate::strategy::{prepare, tune_lyapunov, AgentEnv, Observation, Prepared, StrategyKind};

pub mod experiments;
mod metrics;
mod report;
mod settlement;

pub use metrics::{compute_metrics, speedup, EquilibriumFailures, Metrics, ProbeSummary, Speedup, SPEEDUP_DIMENSIONS};
pub use report::{read_report, read_trace, trace_header, write_report, write_trace, AgentRecord, EquilibriumRow, IntervalRecord, SimulationReport, Timing};
pub use settlement::{settle, Settlement, SettlementRule};

#[derive(Debug, Clone, PartialEq)]
pub enum MarketMode {
    /// Community price found by the adaptive step-size search.
    Assa,
    /// One-shot auction over `dimension`-point bid curves.
    Conventional { dimension: usize },
    /// No community market: every agent trades with the utility tariff.
    NoP2p,
    /// Agents take a recorded price series (indexed by absolute interval).
    PriceTaker { prices: Vec<f64> },
}

impl MarketMode {
    pub fn label(&self) -> String {
        match self {
            MarketMode::Assa => "assa".into(),
            MarketMode::Conventional { dimension } => format!("conventional_d{dimension}"),
            MarketMode::NoP2p => "no_p2p".into(),
            MarketMode::PriceTaker { .. } => "price_taker".into(),
        }
    }

    pub fn settlement_rule(&self) -> SettlementRule {
        match self {
            MarketMode::Assa | MarketMode::PriceTaker { .. } => SettlementRule::Uniform,
            MarketMode::Conventional { .. } => SettlementRule::Blended,
            MarketMode::NoP2p => SettlementRule::Tariff,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub grid: IntervalGrid,
    pub tariff: PriceSchedule,
    pub market: MarketMode,
    pub assa: AssaConfig,
    /// One strategy per agent, or a single strategy for everyone.
    pub strategies: Vec<StrategyKind>,
    pub enforce_network: bool,
    pub rolling_update: bool,
    pub window: Option<usize>,
    pub delay: usize,
    /// Keep price paths and reference signals.
    pub verbose_trace: bool,
    /// Check the equilibrium conditions after every ASSA clearing.
    pub verify_equilibria: bool,
    /// Solve the hindsight optimum on the realized data for the optimality gap.
    pub compute_gap: bool,
    /// Also run the fixed-step search with these step sizes on every ASSA interval.
    pub fixed_step_probe: Vec<f64>,
    pub mc_samples: usize,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(grid: IntervalGrid, tariff: PriceSchedule) -> Self {
        SimConfig {
            grid,
            tariff,
            market: MarketMode::Assa,
            assa: AssaConfig::default(),
            strategies: vec![StrategyKind::ddoo()],
            enforce_network: false,
            rolling_update: false,
            window: None,
            delay: 0,
            verbose_trace: false,
            verify_equilibria: false,
            compute_gap: true,
            fixed_step_probe: Vec::new(),
            mc_samples: DEFAULT_SAMPLES,
            seed: 0,
        }
    }
}

/// Fleet with its per-agent scenario history (used for the offline dataset and tuning).
#[derive(Debug, Clone, PartialEq)]
pub struct SimInputs {
    pub fleet: Vec<MicrogridSpec>,
    pub history: Vec<Vec<ScenarioDay>>,
}

fn validate(inputs: &SimInputs, cfg: &SimConfig) -> Result<Vec<StrategyKind>> {
    cfg.grid.validate()?;
    cfg.tariff.validate()?;
    cfg.assa.validate()?;
    let n = inputs.fleet.len();
    if n == 0 {
        return Err(Error::config("fleet is empty"));
    }
    if cfg.tariff.periods() != cfg.grid.periods_per_day {
        return Err(Error::config(format!("tariff has {} intervals, grid has {}", cfg.tariff.periods(), cfg.grid.periods_per_day)));
    }
    for mg in &inputs.fleet {
        mg.validate(&cfg.grid)?;
    }
    let strategies = match cfg.strategies.len() {
        1 => vec![cfg.strategies[0].clone(); n],
        k if k == n => cfg.strategies.clone(),
        k => return Err(Error::config(format!("{k} strategies for {n} agents"))),
    };
    for s in &strategies {
        s.validate()?;
    }
    let needs_history = strategies.iter().any(|s| s.bandwidth().is_some() || matches!(s, StrategyKind::Lyapunov { v: None, .. }));
    if needs_history {
        if inputs.history.len() != n {
            return Err(Error::config(format!("history given for {} agents, fleet has {n}", inputs.history.len())));
        }
        for (mg, h) in inputs.fleet.iter().zip(&inputs.history) {
            if h.is_empty() {
                return Err(Error::config(format!("{}: empty scenario history", mg.id)));
            }
            for d in h {
                d.validate(cfg.grid.periods_per_day)?;
            }
        }
    }
    match &cfg.market {
        MarketMode::Conventional { dimension: 0 } => return Err(Error::config("bid dimension must be at least 1")),
        MarketMode::PriceTaker { prices } if prices.len() < cfg.grid.len() => {
            return Err(Error::config(format!("price series covers {} intervals, run needs {}", prices.len(), cfg.grid.len())))
        }
        MarketMode::PriceTaker { prices } if prices.iter().any(|p| !p.is_finite() || *p < 0.0) => {
            return Err(Error::data("price series has negative or non-finite entries"))
        }
        _ => {}
    }
    if cfg.mc_samples < 1000 {
        return Err(Error::config("mc_samples must be at least 1000"));
    }
    Ok(strategies)
}

/// Community price the oracle strategies assume: the proxy market on true fleet net load.
fn community_oracle_prices(fleet: &[MicrogridSpec], tariff: &PriceSchedule, len: usize) -> Vec<f64> {
    let mut capacity: f64 = fleet.iter().map(|m| m.ratings.load_kw).sum();
    if capacity <= 0.0 {
        capacity = fleet.iter().map(|m| m.load_kw.iter().copied().fold(0.0, f64::max)).sum::<f64>().max(1.0);
    }
    (0..len)
        .map(|i| {
            let net: f64 = fleet.iter().map(|m| m.net_load(i)).sum();
            let (fit, tou) = tariff.corridor(i % tariff.periods());
            crate::synth::proxy_price(fit, tou, net, capacity, 0.0)
        })
        .collect()
}

struct Cleared {
    price: f64,
    decisions: Vec<DispatchDecision>,
    p_grid: f64,
    iterations: usize,
    evaluations: usize,
    boundary: Boundary,
    result: Option<ClearingResult>,
}

fn classify_residual(p_grid: f64, delta: f64) -> Boundary {
    if p_grid.abs() <= delta {
        Boundary::Interior
    } else if p_grid > 0.0 {
        Boundary::Fit
    } else {
        Boundary::Tou
    }
}

fn decide_all(prepared: &[Prepared], exchange: impl Fn(usize) -> Exchange + Sync) -> Result<Vec<DispatchDecision>> {
    prepared.par_iter().enumerate().map(|(k, p)| p.decide_with(exchange(k))).collect()
}

fn clear_interval(prepared: &[Prepared], cfg: &SimConfig, t_abs: usize, fit: f64, tou: f64, last_price: Option<f64>) -> Result<Cleared> {
    let delta = cfg.assa.delta;
    let from_decisions = |price: f64, decisions: Vec<DispatchDecision>, evaluations: usize| {
        let p_grid = -decisions.iter().map(|d| d.p_ex).sum::<f64>();
        Cleared { price, decisions, p_grid, iterations: 0, evaluations, boundary: classify_residual(p_grid, delta), result: None }
    };
    match &cfg.market {
        MarketMode::Assa => {
            let responders: Vec<_> = prepared.iter().map(|p| move |price: f64| p.decide(price).map(|d| d.p_ex)).collect();
            let res = clear_assa(&responders, fit, tou, &cfg.assa, last_price)?;
            let decisions = decide_all(prepared, |_| Exchange::Uniform(res.price))?;
            Ok(Cleared {
                price: res.price,
                decisions,
                p_grid: res.p_grid,
                iterations: res.iterations,
                evaluations: res.evaluations,
                boundary: res.boundary,
                result: Some(res),
            })
        }
        MarketMode::Conventional { dimension } => {
            let grid = price_grid(fit, tou, *dimension)?;
            let bids = prepared
                .par_iter()
                .map(|p| make_bid_curve(&|price: f64| p.decide(price).map(|d| d.p_ex), &grid))
                .collect::<Result<Vec<_>>>()?;
            let res = clear_conventional(&bids, fit, tou, delta)?;
            let decisions = decide_all(prepared, |_| Exchange::Uniform(res.price))?;
            Ok(from_decisions(res.price, decisions, *dimension))
        }
        MarketMode::NoP2p => {
            let decisions = decide_all(prepared, |_| Exchange::Split { buy: tou, sell: fit })?;
            let mut c = from_decisions(0.0, decisions, 1);
            c.price = if c.p_grid < 0.0 { tou } else { fit };
            Ok(c)
        }
        MarketMode::PriceTaker { prices } => {
            let price = prices[t_abs];
            Ok(from_decisions(price, decide_all(prepared, |_| Exchange::Uniform(price))?, 1))
        }
    }
}

#[derive(Default)]
struct Counters {
    cap_hits: usize,
    balance_violations: usize,
    money_violations: usize,
    max_operator_imbalance: f64,
    clamped: usize,
    underflows: usize,
    voltage: usize,
    eq: EquilibriumFailures,
    probes: Vec<ProbeSummary>,
    probe_iters: Vec<usize>,
    wall: Vec<f64>,
}

/// Balance tolerance used for the per-interval conservation checks.
fn balance_tolerance(delta: f64) -> f64 {
    delta.max(1e-6) + 1e-9
}

pub fn run_horizon(inputs: &SimInputs, cfg: &SimConfig) -> Result<SimulationReport> {
    let started = Instant::now();
    let mut strategies = validate(inputs, cfg)?;
    let fleet = &inputs.fleet;
    let n = fleet.len();
    let periods = cfg.grid.periods_per_day;
    let dt = cfg.grid.dt_hours;
    let split = matches!(cfg.market, MarketMode::NoP2p);

    let bounds: Vec<DeterministicBounds> = fleet
        .par_iter()
        .enumerate()
        .map(|(k, mg)| reformulate_bounds(&mg.ges, cfg.mc_samples, cfg.seed.wrapping_add(1000 * k as u64)))
        .collect::<Result<_>>()?;

    let offline_opts = DayDispatchOptions { enforce_network: cfg.enforce_network, enforce_cycle: true, ..Default::default() };
    let mut datasets: Vec<Option<HistoricalDataset>> = (0..n)
        .into_par_iter()
        .map(|k| match strategies[k].bandwidth() {
            Some(_) => build_offline_dataset(&fleet[k], &inputs.history[k], &bounds[k], &offline_opts, cfg.window).map(Some),
            None => Ok(None),
        })
        .collect::<Result<_>>()?;

    for k in 0..n {
        if let StrategyKind::Lyapunov { v: None, theta } = strategies[k] {
            let env = AgentEnv { mg: &fleet[k], bounds: &bounds[k], tariff: &cfg.tariff, periods, enforce_network: false, delay: 0 };
            let week = &inputs.history[k][..inputs.history[k].len().min(7)];
            strategies[k] = StrategyKind::Lyapunov { v: Some(tune_lyapunov(&env, week, theta)?), theta };
        }
    }

    let oracle_prices: Option<Vec<f64>> = match &cfg.market {
        MarketMode::PriceTaker { prices } => Some(prices.clone()),
        MarketMode::NoP2p => None,
        _ => Some(community_oracle_prices(fleet, &cfg.tariff, cfg.grid.len())),
    };

    let plans: Vec<Option<DayDispatchSolution>> = (0..n)
        .into_par_iter()
        .map(|k| {
            if strategies[k] != StrategyKind::HindsightReplay {
                return Ok(None);
            }
            let len = cfg.grid.len();
            let prices = oracle_prices.clone().unwrap_or_else(|| vec![0.0; len]);
            let net: Vec<f64> = (0..len).map(|i| fleet[k].net_load(i)).collect();
            hindsight(&fleet[k], &bounds[k], &net, &prices, cfg).map(Some)
        })
        .collect::<Result<_>>()?;

    let mut soc: Vec<f64> = fleet.iter().map(|m| m.soc_init).collect();
    let mut trace: Vec<IntervalRecord> = Vec::with_capacity(cfg.grid.len());
    let mut equilibria = Vec::new();
    let mut c = Counters {
        probes: cfg.fixed_step_probe.iter().map(|&s| ProbeSummary { sigma: s, converged: 0, oscillations: 0, cap_hits: 0, mean_iterations_converged: None }).collect(),
        probe_iters: vec![0; cfg.fixed_step_probe.len()],
        ..Default::default()
    };
    let rule = cfg.market.settlement_rule();
    let mut last_price: Option<f64> = None;

    for day in 0..cfg.grid.horizon_days {
        let day_start_soc = soc.clone();
        let mut contexts: Vec<Option<OnlineContext<'_>>> = (0..n)
            .map(|k| match (&datasets[k], &strategies[k]) {
                (Some(ds), StrategyKind::Ddoo { phi, tau } | StrategyKind::IrtOnly { phi, tau }) => OnlineContext::new(ds, *tau, *phi).map(Some),
                _ => Ok(None),
            })
            .collect::<Result<_>>()?;
        let mut day_prices = Vec::with_capacity(periods);

        for t in 0..periods {
            let t_abs = day * periods + t;
            let (fit, tou) = cfg.tariff.corridor(t);
            let prepared: Vec<Prepared> = (0..n)
                .into_par_iter()
                .map(|k| {
                    let env = AgentEnv { mg: &fleet[k], bounds: &bounds[k], tariff: &cfg.tariff, periods, enforce_network: cfg.enforce_network, delay: cfg.delay };
                    let obs = Observation {
                        t: t_abs,
                        soc: soc[k],
                        day_start_soc: day_start_soc[k],
                        online: contexts[k].as_ref(),
                        oracle_prices: oracle_prices.as_deref(),
                        plan: plans[k].as_ref(),
                        split_market: split,
                    };
                    prepare(&strategies[k], &env, &obs)
                })
                .collect::<Result<_>>()
                .map_err(|e| e.at(day, t))?;
            c.underflows += prepared.iter().filter(|p| p.signals().is_some_and(|s| s.underflow)).count();

            let clock = Instant::now();
            let cleared = clear_interval(&prepared, cfg, t_abs, fit, tou, last_price).map_err(|e| e.at(day, t))?;
            c.wall.push(clock.elapsed().as_secs_f64());

            if let Some(res) = &cleared.result {
                if !res.converged {
                    c.cap_hits += 1;
                }
                let responders: Vec<_> = prepared.iter().map(|p| move |price: f64| p.decide(price).map(|d| d.p_ex)).collect();
                if cfg.verify_equilibria {
                    let v = verify_equilibrium(res, &responders, fit, tou, cfg.assa.delta).map_err(|e| e.at(day, t))?;
                    c.eq.checked += 1;
                    c.eq.price_feasible += usize::from(!v.price_feasible);
                    c.eq.best_response += usize::from(!v.best_response);
                    c.eq.balance += usize::from(!v.balance);
                    c.eq.complementarity += usize::from(!v.complementarity);
                    c.eq.directional += usize::from(!v.directional);
                }
                for (i, &sigma) in cfg.fixed_step_probe.iter().enumerate() {
                    match clear_fixed_step(&responders, fit, tou, sigma, cfg.assa.delta, cfg.assa.max_iterations).map_err(|e| e.at(day, t))? {
                        Ok(r) => {
                            c.probes[i].converged += 1;
                            c.probe_iters[i] += r.iterations;
                        }
                        Err(FixedStepFailure::Oscillation { .. }) => c.probes[i].oscillations += 1,
                        Err(FixedStepFailure::IterationCap { .. }) => c.probes[i].cap_hits += 1,
                    }
                }
                if cfg.verbose_trace {
                    equilibria.extend(res.price_path.iter().map(|p| EquilibriumRow {
                        day,
                        interval: t,
                        iter: p.iter,
                        price: p.price,
                        imbalance_kw: p.imbalance_kw,
                        sigma: p.sigma,
                    }));
                }
            }

            let p_ex: Vec<f64> = cleared.decisions.iter().map(|d| d.p_ex).collect();
            if (p_ex.iter().sum::<f64>() + cleared.p_grid).abs() > balance_tolerance(cfg.assa.delta) {
                c.balance_violations += 1;
            }
            let s = settle(rule, cleared.price, fit, tou, &p_ex, cleared.p_grid, dt);
            let imbalance = s.operator_balance().abs();
            c.max_operator_imbalance = c.max_operator_imbalance.max(imbalance);
            if imbalance > 1e-6 {
                c.money_violations += 1;
            }

            let mut agents = Vec::with_capacity(n);
            for k in 0..n {
                let d = &cleared.decisions[k];
                c.clamped += usize::from(d.clamped);
                let cost = operating_cost(&fleet[k], &bounds[k], t_abs, periods, dt, d) + s.payments[k];
                let sig = prepared[k].signals().filter(|_| cfg.verbose_trace);
                agents.push(AgentRecord {
                    p_ex_kw: d.p_ex,
                    soc: d.soc_next,
                    cost,
                    p_dg_kw: d.p_dg,
                    p_charge_kw: d.p_charge,
                    p_discharge_kw: d.p_discharge,
                    irt: sig.map(|s| s.irt_soc),
                    rpb: sig.map(|s| s.rpb),
                });
                if let Some(net) = fleet[k].network.as_ref().filter(|_| !cfg.enforce_network) {
                    let (p, q) = network::bus_injections(&fleet[k], net, t_abs, d.p_dg + d.p_discharge - d.p_charge);
                    let state = network::solve_lindistflow(net, &p, &q).map_err(|e| e.at(day, t))?;
                    c.voltage += usize::from(!network::check_voltage(net, &state).is_empty());
                }
                soc[k] = d.soc_next;
                if let Some(ctx) = contexts[k].as_mut() {
                    ctx.observe(fleet[k].net_load(t_abs), cleared.price);
                }
            }
            if matches!(cfg.market, MarketMode::Assa) {
                last_price = Some(cleared.price);
            }
            day_prices.push(cleared.price);
            trace.push(IntervalRecord {
                day,
                interval: t,
                p2p_price: cleared.price,
                p_grid_kw: cleared.p_grid,
                iterations: cleared.iterations,
                evaluations: cleared.evaluations,
                boundary: cleared.boundary,
                agents,
            });
        }
        drop(contexts);

        if cfg.rolling_update {
            for k in 0..n {
                if let Some(ds) = datasets[k].as_mut() {
                    let realized = ScenarioDay::new(fleet[k].day_net_load(day, periods), day_prices.clone())?;
                    rolling_update(ds, &realized, &fleet[k], &bounds[k], &offline_opts).map_err(|e| e.at(day, periods - 1))?;
                }
            }
        }
    }

    let agents: Vec<String> = fleet.iter().map(|m| m.id.clone()).collect();
    let labels: Vec<String> = strategies.iter().map(|s| s.label().to_string()).collect();
    let mut metrics = compute_metrics(&trace, &agents, &labels, cfg.assa.delta, dt)?;
    if cfg.compute_gap {
        let m0 = hindsight_costs(fleet, &bounds, &trace, cfg)?;
        let total: f64 = m0.iter().sum();
        metrics.optimality_gap_pct = (total.abs() > 1e-12).then(|| 100.0 * (metrics.total_cost - total) / total.abs());
        metrics.m0_costs = Some(m0);
    }
    metrics.iteration_cap_hits = c.cap_hits;
    metrics.balance_violations = c.balance_violations;
    metrics.money_violations = c.money_violations;
    metrics.max_operator_imbalance = c.max_operator_imbalance;
    metrics.clamped_decisions = c.clamped;
    metrics.weight_underflows = c.underflows;
    metrics.voltage_violation_intervals = fleet.iter().any(|m| m.network.is_some() && !cfg.enforce_network).then_some(c.voltage);
    metrics.equilibrium_failures = cfg.verify_equilibria.then_some(c.eq);
    for (p, iters) in c.probes.iter_mut().zip(&c.probe_iters) {
        p.mean_iterations_converged = (p.converged > 0).then(|| *iters as f64 / p.converged as f64);
    }
    metrics.fixed_step_probe = c.probes;

    let wall = &c.wall;
    let timing = Timing {
        total_wall_s: started.elapsed().as_secs_f64(),
        mean_clearing_wall_s: wall.iter().sum::<f64>() / wall.len().max(1) as f64,
        max_clearing_wall_s: wall.iter().copied().fold(0.0, f64::max),
    };
    Ok(SimulationReport { trace, metrics, equilibria, timing })
}

/// Conservation checks a finished run must pass; anything else is an internal error.
pub fn check_invariants(report: &SimulationReport) -> Result<()> {
    let m = &report.metrics;
    if m.balance_violations > 0 {
        return Err(Error::Invariant(format!("{} intervals violate supply-demand balance", m.balance_violations)));
    }
    if m.money_violations > 0 {
        return Err(Error::Invariant(format!("{} intervals leave the operator out of balance (worst {:.3e} $)", m.money_violations, m.max_operator_imbalance)));
    }
    if !m.total_cost.is_finite() {
        return Err(Error::Invariant("non-finite total cost".into()));
    }
    Ok(())
}

/// Scenario days recorded from a market run: each agent's realized net load with the cleared price.
pub fn realized_days(fleet: &[MicrogridSpec], trace: &[IntervalRecord], periods: usize) -> Result<Vec<Vec<ScenarioDay>>> {
    let days = trace.len() / periods;
    fleet
        .iter()
        .map(|mg| {
            (0..days)
                .map(|d| ScenarioDay::new(mg.day_net_load(d, periods), trace[d * periods..(d + 1) * periods].iter().map(|r| r.p2p_price).collect()))
                .collect()
        })
        .collect()
}

/// Run the market over past days and return what it recorded, ready to serve as scenario history.
pub fn market_history(past: &SimInputs, cfg: &SimConfig) -> Result<Vec<Vec<ScenarioDay>>> {
    let cfg = SimConfig { compute_gap: false, verify_equilibria: false, verbose_trace: false, fixed_step_probe: Vec::new(), ..cfg.clone() };
    let report = run_horizon(past, &cfg)?;
    realized_days(&past.fleet, &report.trace, cfg.grid.periods_per_day)
}

/// DG plus true storage cost of a decision, without the exchange payment.
pub fn operating_cost(mg: &MicrogridSpec, bounds: &DeterministicBounds, t_abs: usize, periods: usize, dt: f64, d: &DispatchDecision) -> f64 {
    let st = Stage::for_microgrid(mg, bounds, t_abs % periods, mg.net_load(t_abs), Exchange::Uniform(0.0));
    st.objective(dt, d.p_dg, d.p_charge, d.p_discharge, d.soc_next)
}

/// Full-horizon hindsight optimum with free terminal SoC. Every unclamped trajectory a strategy can
/// produce is feasible here, so its cost bounds all of them from below.
fn hindsight(mg: &MicrogridSpec, bounds: &DeterministicBounds, net: &[f64], prices: &[f64], cfg: &SimConfig) -> Result<DayDispatchSolution> {
    let opts = DayDispatchOptions {
        enforce_network: cfg.enforce_network,
        enforce_cycle: false,
        tariff: matches!(cfg.market, MarketMode::NoP2p).then(|| cfg.tariff.clone()),
        day_index: Some(0),
        soc_start: None,
    };
    solve_hindsight(mg, net, prices, bounds, &opts)
}

/// Per-agent cost of the hindsight optimum on the realized net load and prices.
fn hindsight_costs(fleet: &[MicrogridSpec], bounds: &[DeterministicBounds], trace: &[IntervalRecord], cfg: &SimConfig) -> Result<Vec<f64>> {
    let prices: Vec<f64> = trace.iter().map(|r| r.p2p_price).collect();
    fleet
        .par_iter()
        .zip(bounds)
        .map(|(mg, b)| {
            let net: Vec<f64> = (0..trace.len()).map(|i| mg.net_load(i)).collect();
            Ok(hindsight(mg, b, &net, &prices, cfg)?.cost)
        })
        .collect()
}

/// Recompute every interval cost from a trace; returns the largest absolute difference.
pub fn replay_costs(fleet: &[MicrogridSpec], trace: &[IntervalRecord], cfg: &SimConfig) -> Result<f64> {
    let periods = cfg.grid.periods_per_day;
    let dt = cfg.grid.dt_hours;
    let bounds: Vec<DeterministicBounds> = fleet
        .iter()
        .enumerate()
        .map(|(k, mg)| reformulate_bounds(&mg.ges, cfg.mc_samples, cfg.seed.wrapping_add(1000 * k as u64)))
        .collect::<Result<_>>()?;
    let rule = cfg.market.settlement_rule();
    let mut worst: f64 = 0.0;
    for r in trace {
        let (fit, tou) = cfg.tariff.corridor(r.interval);
        let p_ex: Vec<f64> = r.agents.iter().map(|a| a.p_ex_kw).collect();
        let s = settle(rule, r.p2p_price, fit, tou, &p_ex, r.p_grid_kw, dt);
        let t_abs = r.day * periods + r.interval;
        for (k, a) in r.agents.iter().enumerate() {
            let d = DispatchDecision { p_dg: a.p_dg_kw, p_charge: a.p_charge_kw, p_discharge: a.p_discharge_kw, p_ex: a.p_ex_kw, soc_next: a.soc, clamped: false };
            let cost = operating_cost(&fleet[k], &bounds[k], t_abs, periods, dt, &d) + s.payments[k];
            worst = worst.max((cost - a.cost).abs());
        }
    }
    Ok(worst)
}

/// Largest gap between each recorded SoC and the storage recursion applied to the previous one.
pub fn replay_soc(fleet: &[MicrogridSpec], trace: &[IntervalRecord], grid: &IntervalGrid) -> f64 {
    let periods = grid.periods_per_day;
    let mut worst: f64 = 0.0;
    let mut soc: Vec<f64> = fleet.iter().map(|m| m.soc_init).collect();
    for r in trace {
        for (k, a) in r.agents.iter().enumerate() {
            let g = &fleet[k].ges;
            let next = g.retention() * soc[k] + g.eta_c * grid.dt_hours / g.capacity_kwh * a.p_charge_kw
                - grid.dt_hours / (g.eta_d * g.capacity_kwh) * a.p_discharge_kw
                + g.baseline_soc_gain[r.interval % periods];
            worst = worst.max((next - a.soc).abs());
            soc[k] = a.soc;
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize, days: usize, market: MarketMode, strategy: StrategyKind) -> (SimInputs, SimConfig) {
        let grid = IntervalGrid::new(24, days).unwrap();
        let tariff = crate::io::default_tariff(24);
        let fleet = crate::synth::generate_fleet(21, n, &grid).unwrap();
        let history = crate::synth::synth_history(21, &fleet, &tariff, 24, 3).unwrap();
        let mut cfg = SimConfig::new(grid, tariff);
        cfg.market = market;
        cfg.strategies = vec![strategy];
        cfg.mc_samples = 2000;
        // a handful of hourly agents: imbalances are tens of kW, so the default step crawls
        cfg.assa.sigma0 = 2e-4;
        cfg.verify_equilibria = true;
        (SimInputs { fleet, history }, cfg)
    }

    #[test]
    fn idle_agent_without_market_costs_nothing() {
        let (mut inputs, mut cfg) = small(1, 1, MarketMode::NoP2p, StrategyKind::Greedy);
        let mg = &mut inputs.fleet[0];
        mg.res_kw = mg.load_kw.clone();
        mg.dg.p_max = 0.0;
        mg.ges.p_charge_max = crate::model::BoundDistribution::constant(0.0, 24);
        mg.ges.p_discharge_max = crate::model::BoundDistribution::constant(0.0, 24);
        mg.ges.self_discharge = 0.0;
        mg.ges.baseline_soc_gain = vec![0.0; 24];
        cfg.compute_gap = false;
        let r = run_horizon(&inputs, &cfg).unwrap();
        assert_eq!(r.trace.len(), 24);
        assert!(r.trace.iter().all(|x| x.agents[0].cost.abs() < 1e-12), "{:?}", r.trace[0]);
    }

    #[test]
    fn community_run_is_balanced_and_reproducible() {
        let (inputs, mut cfg) = small(4, 2, MarketMode::Assa, StrategyKind::ddoo());
        cfg.verbose_trace = true;
        let a = run_horizon(&inputs, &cfg).unwrap();
        let b = run_horizon(&inputs, &cfg).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.metrics, b.metrics);
        let m = &a.metrics;
        assert_eq!((m.balance_violations, m.money_violations, m.iteration_cap_hits), (0, 0, 0));
        assert_eq!(m.equilibrium_failures.unwrap().total(), 0);
        assert!(replay_costs(&inputs.fleet, &a.trace, &cfg).unwrap() == 0.0);
        assert!(replay_soc(&inputs.fleet, &a.trace, &cfg.grid) < 1e-9);
        for r in a.trace.iter().filter(|r| r.boundary == Boundary::Interior) {
            let paid: f64 = r.agents.iter().map(|x| x.p_ex_kw * r.p2p_price).sum::<f64>() + r.p_grid_kw * r.p2p_price;
            assert!(paid.abs() < 1e-9);
        }
    }

    #[test]
    fn fit_boundary_settles_export_at_fit() {
        let (inputs, cfg) = small(3, 1, MarketMode::Assa, StrategyKind::Greedy);
        let r = run_horizon(&inputs, &cfg).unwrap();
        let dt = cfg.grid.dt_hours;
        for rec in r.trace.iter().filter(|x| x.boundary == Boundary::Fit) {
            let (fit, _) = cfg.tariff.corridor(rec.interval);
            assert_eq!(rec.p2p_price, fit);
            let sellers: f64 = rec.agents.iter().filter(|a| a.p_ex_kw < 0.0).map(|a| -a.p_ex_kw * fit * dt).sum();
            let buyers: f64 = rec.agents.iter().filter(|a| a.p_ex_kw > 0.0).map(|a| a.p_ex_kw * fit * dt).sum();
            assert!((sellers - buyers - rec.p_grid_kw * fit * dt).abs() < 1e-9);
        }
    }

    #[test]
    fn every_market_mode_runs() {
        for market in [MarketMode::Conventional { dimension: 5 }, MarketMode::NoP2p, MarketMode::PriceTaker { prices: vec![0.1; 48] }] {
            let (inputs, mut cfg) = small(2, 2, market, StrategyKind::ddoo());
            cfg.rolling_update = true;
            cfg.window = Some(3);
            let r = run_horizon(&inputs, &cfg).unwrap();
            assert_eq!(r.trace.len(), 48);
            assert_eq!(r.metrics.money_violations, 0, "{}", cfg.market.label());
            assert_eq!(replay_costs(&inputs.fleet, &r.trace, &cfg).unwrap(), 0.0);
        }
    }

    #[test]
    fn bad_configs_are_rejected() {
        let (inputs, mut cfg) = small(2, 1, MarketMode::PriceTaker { prices: vec![0.1; 3] }, StrategyKind::Greedy);
        assert!(matches!(run_horizon(&inputs, &cfg), Err(Error::Config(_))));
        cfg.market = MarketMode::Assa;
        cfg.strategies = vec![StrategyKind::Greedy; 3];
        assert!(matches!(run_horizon(&inputs, &cfg), Err(Error::Config(_))));
    }
}
