//! Agent decision strategies behind one best-response interface.
//!
//! Every interval an agent is *prepared* once from what it can observe (SoC, realized prefix,
//! reference signals, forecasts); the prepared agent then answers any announced price with a
//! dispatch decision. The auction only looks at the resulting exchange.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dispatch::{network_window, solve_horizon, DayDispatchSolution, Exchange, Horizon, OnInfeasible, Stage};
use crate::error::{Error, Result};
use crate::model::{DeterministicBounds, DispatchDecision, MicrogridSpec, PriceSchedule, ScenarioDay};
use crate::online::{compute_signals_from_prefix, OnlineContext, OnlineOptions, ReferenceSignals};

fn default_phi() -> f64 {
    5000.0
}
fn default_tau() -> f64 {
    1.0
}
fn default_horizon() -> usize {
    48
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StrategyKind {
    /// Dual-reference online optimization: price benchmark in the storage costs plus SoC tracking.
    Ddoo {
        #[serde(default = "default_phi")]
        phi: f64,
        #[serde(default = "default_tau")]
        tau: f64,
    },
    /// Immediate operating cost only.
    Greedy,
    /// SoC tracking with the original storage costs.
    IrtOnly {
        #[serde(default = "default_phi")]
        phi: f64,
        #[serde(default = "default_tau")]
        tau: f64,
    },
    /// Drift-plus-penalty on the virtual queue `E (SoC - theta)`; `v` is tuned when absent,
    /// `theta` defaults to the middle of the SoC window.
    Lyapunov {
        #[serde(default)]
        v: Option<f64>,
        #[serde(default)]
        theta: Option<f64>,
    },
    /// Receding-horizon control on perturbed oracle forecasts.
    MpcOracle {
        #[serde(default = "default_horizon")]
        horizon: usize,
        #[serde(default)]
        forecast_error: f64,
        /// Stop the window at the day end and require the day-start SoC there.
        #[serde(default = "yes")]
        cyclic: bool,
        #[serde(default)]
        seed: u64,
    },
    /// Replays the day's hindsight-optimal powers.
    HindsightReplay,
}

impl StrategyKind {
    pub fn ddoo() -> Self {
        StrategyKind::Ddoo { phi: default_phi(), tau: default_tau() }
    }

    pub fn label(&self) -> &'static str {
        match self {
            StrategyKind::Ddoo { .. } => "ddoo",
            StrategyKind::Greedy => "greedy",
            StrategyKind::IrtOnly { .. } => "irt_only",
            StrategyKind::Lyapunov { .. } => "lyapunov",
            StrategyKind::MpcOracle { .. } => "mpc_oracle",
            StrategyKind::HindsightReplay => "hindsight_replay",
        }
    }

    /// Kernel bandwidth when the strategy needs reference signals.
    pub fn bandwidth(&self) -> Option<f64> {
        match self {
            StrategyKind::Ddoo { tau, .. } | StrategyKind::IrtOnly { tau, .. } => Some(*tau),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(format!("{}: {m}", self.label())));
        match self {
            StrategyKind::Ddoo { phi, tau } | StrategyKind::IrtOnly { phi, tau } => {
                if !(*phi >= 0.0 && phi.is_finite()) {
                    return bad("phi must be a non-negative number");
                }
                if !(*tau > 0.0 && tau.is_finite()) {
                    return bad("tau must be positive");
                }
            }
            StrategyKind::Lyapunov { v, theta } => {
                if v.is_some_and(|v| !(v > 0.0 && v.is_finite())) {
                    return bad("v must be positive");
                }
                if theta.is_some_and(|t| !(0.0..=1.0).contains(&t)) {
                    return bad("theta must lie in [0, 1]");
                }
            }
            StrategyKind::MpcOracle { horizon, forecast_error, .. } => {
                if *horizon == 0 {
                    return bad("horizon must be at least 1");
                }
                if !(*forecast_error >= 0.0 && forecast_error.is_finite()) {
                    return bad("forecast_error must be non-negative");
                }
            }
            StrategyKind::Greedy | StrategyKind::HindsightReplay => {}
        }
        Ok(())
    }
}

/// Multiplicative noise whose mean absolute relative deviation equals `error_level` exactly.
pub fn forecast_perturb(truth: &[f64], error_level: f64, seed: u64) -> Vec<f64> {
    if error_level == 0.0 || truth.is_empty() {
        return truth.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e: Vec<f64> = (0..truth.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mad = e.iter().map(|x: &f64| x.abs()).sum::<f64>() / e.len() as f64;
    let scale = if mad > 0.0 { error_level / mad } else { 0.0 };
    truth.iter().zip(&e).map(|(x, z)| x * (1.0 + scale * z)).collect()
}

/// Interval whose data an agent sees at `t` under a `delay`, never reaching back before the
/// start of the day.
pub fn observed_interval(t: usize, periods: usize, delay: usize) -> usize {
    let day_start = t - t % periods;
    t.saturating_sub(delay).max(day_start)
}

/// Static per-agent inputs.
#[derive(Debug, Clone, Copy)]
pub struct AgentEnv<'a> {
    pub mg: &'a MicrogridSpec,
    pub bounds: &'a DeterministicBounds,
    pub tariff: &'a PriceSchedule,
    pub periods: usize,
    pub enforce_network: bool,
    pub delay: usize,
}

impl AgentEnv<'_> {
    pub fn dt(&self) -> f64 {
        24.0 / self.periods as f64
    }

    fn horizon_len(&self) -> usize {
        self.mg.load_kw.len().min(self.mg.res_kw.len())
    }

    fn injection(&self, t_abs: usize, net_load: f64) -> Result<Option<(f64, f64)>> {
        if !self.enforce_network {
            return Ok(None);
        }
        network_window(self.mg, Some(t_abs / self.periods), t_abs % self.periods, self.periods, net_load).or_else(|e| match e {
            Error::Infeasible { .. } => Ok(None),
            other => Err(other),
        })
    }
}

/// What the agent knows when interval `t` opens.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    /// Absolute interval index.
    pub t: usize,
    pub soc: f64,
    pub day_start_soc: f64,
    /// Today's realized net load and prices so far (strategies with reference signals).
    pub online: Option<&'a OnlineContext<'a>>,
    /// Price series the oracle strategies treat as known, indexed by absolute interval.
    pub oracle_prices: Option<&'a [f64]>,
    /// Hindsight plan of the whole run, indexed by absolute interval.
    pub plan: Option<&'a DayDispatchSolution>,
    /// Trade only with the utility at the tariff (no community price).
    pub split_market: bool,
}

#[derive(Debug, Clone)]
enum Mode {
    /// Single-stage or receding-horizon problem whose first stage trades at the announced price.
    Solve(Horizon),
    /// Fixed powers (DG, charge, discharge).
    Fixed(f64, f64, f64),
}

/// An agent ready to answer announced prices for one interval.
#[derive(Debug, Clone)]
pub struct Prepared {
    mode: Mode,
    true_net_load: f64,
    soc: f64,
    signals: Option<ReferenceSignals>,
    kc: f64,
    kd: f64,
    retention: f64,
    gain: f64,
}

impl Prepared {
    pub fn signals(&self) -> Option<&ReferenceSignals> {
        self.signals.as_ref()
    }

    /// Best response at a uniform community price.
    pub fn decide(&self, price: f64) -> Result<DispatchDecision> {
        self.decide_with(Exchange::Uniform(price))
    }

    pub fn decide_with(&self, exchange: Exchange) -> Result<DispatchDecision> {
        let (g, c, d, soc_next, clamped) = match &self.mode {
            Mode::Solve(h) => {
                let mut h = h.clone();
                h.stages[0].exchange = exchange;
                let sol = solve_horizon(&h, OnInfeasible::Clamp)?;
                debug_assert!(sol.objective.is_finite());
                let s = sol.steps[0];
                (s.p_dg, s.p_charge, s.p_discharge, s.soc_next, sol.clamped)
            }
            Mode::Fixed(g, c, d) => (*g, *c, *d, self.retention * self.soc + self.kc * c - self.kd * d + self.gain, false),
        };
        Ok(DispatchDecision { p_dg: g, p_charge: c, p_discharge: d, p_ex: self.true_net_load + c - d - g, soc_next, clamped })
    }
}

fn prepared(env: &AgentEnv<'_>, obs: &Observation<'_>, mode: Mode, signals: Option<ReferenceSignals>) -> Prepared {
    let h = Horizon::for_microgrid(env.mg, env.dt(), obs.soc, Vec::new());
    Prepared {
        mode,
        true_net_load: env.mg.net_load(obs.t),
        soc: obs.soc,
        signals,
        kc: h.k_charge(),
        kd: h.k_discharge(),
        retention: h.retention,
        gain: env.mg.ges.baseline_soc_gain[obs.t % env.periods],
    }
}

fn corridor_exchange(tariff: &PriceSchedule, t: usize) -> Exchange {
    let (fit, tou) = tariff.corridor(t);
    Exchange::Split { buy: tou, sell: fit }
}

pub fn prepare(kind: &StrategyKind, env: &AgentEnv<'_>, obs: &Observation<'_>) -> Result<Prepared> {
    let periods = env.periods;
    let t = obs.t;
    let seen = observed_interval(t, periods, env.delay);
    let planned_load = env.mg.net_load(seen);
    let placeholder = Exchange::Uniform(0.0);
    let single = |stage: Stage| Mode::Solve(Horizon::for_microgrid(env.mg, env.dt(), obs.soc, vec![stage]));
    let base = || -> Result<Stage> {
        let mut st = Stage::for_microgrid(env.mg, env.bounds, t % periods, planned_load, placeholder);
        st.injection = env.injection(t, planned_load)?;
        Ok(st)
    };
    match kind {
        StrategyKind::Greedy => Ok(prepared(env, obs, single(base()?), None)),
        StrategyKind::Ddoo { phi, .. } | StrategyKind::IrtOnly { phi, .. } => {
            let ctx = obs.online.ok_or_else(|| Error::config(format!("{} needs a historical dataset", kind.label())))?;
            let tod = t % periods;
            let sig = compute_signals_from_prefix(ctx, tod, seen % periods)?;
            let mut st = base()?;
            if matches!(kind, StrategyKind::Ddoo { .. }) {
                st.charge_cost = env.mg.ges.cost_charge - sig.rpb;
                st.discharge_cost = env.mg.ges.cost_discharge + sig.rpb;
            }
            if *phi > 0.0 {
                st.tracking = Some((*phi, sig.irt_soc));
            }
            Ok(prepared(env, obs, single(st), Some(sig)))
        }
        StrategyKind::Lyapunov { v, theta } => {
            let v = v.ok_or_else(|| Error::config("lyapunov: V must be tuned before the run"))?;
            let st = lyapunov_stage(env, base()?, t % periods, obs.soc, v, *theta);
            Ok(prepared(env, obs, single(st), None))
        }
        StrategyKind::MpcOracle { horizon, forecast_error, cyclic, seed } => {
            let h = mpc_window(env, obs, planned_load, *horizon, *forecast_error, *cyclic, *seed)?;
            Ok(prepared(env, obs, Mode::Solve(h), None))
        }
        StrategyKind::HindsightReplay => {
            let plan = obs.plan.ok_or_else(|| Error::config("hindsight_replay needs a hindsight plan"))?;
            if t >= plan.p_dg.len() {
                return Err(Error::config(format!("hindsight plan covers {} intervals, asked for {t}", plan.p_dg.len())));
            }
            Ok(prepared(env, obs, Mode::Fixed(plan.p_dg[t], plan.p_charge[t], plan.p_discharge[t]), None))
        }
    }
}

fn lyapunov_stage(env: &AgentEnv<'_>, mut st: Stage, tod: usize, soc: f64, v: f64, theta: Option<f64>) -> Stage {
    let theta = theta.unwrap_or(0.5 * (env.bounds.soc_min[tod] + env.bounds.soc_max[tod]));
    let e = env.mg.ges.capacity_kwh;
    // V * cost + Q * (stored energy change), divided by V; Q = E (SoC - theta).
    let kappa = e * (soc - theta) / v;
    st.charge_cost += kappa * env.mg.ges.eta_c;
    st.discharge_cost -= kappa / env.mg.ges.eta_d;
    st
}

fn mpc_window(env: &AgentEnv<'_>, obs: &Observation<'_>, planned_load: f64, horizon: usize, error: f64, cyclic: bool, seed: u64) -> Result<Horizon> {
    let periods = env.periods;
    let t = obs.t;
    let day_end = t - t % periods + periods;
    let mut end = if cyclic { day_end.min(t + horizon) } else { t + horizon };
    end = end.min(env.horizon_len());
    if !obs.split_market {
        let prices = obs.oracle_prices.ok_or_else(|| Error::config("mpc_oracle needs an oracle price series"))?;
        end = end.min(prices.len().max(t + 1));
    }
    let n = end - t;
    let loads: Vec<f64> = (t + 1..end).map(|i| env.mg.net_load(i)).collect();
    let wseed = seed ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let loads = forecast_perturb(&loads, error, wseed);
    let prices: Vec<f64> = match obs.oracle_prices {
        Some(p) if !obs.split_market => forecast_perturb(&p[(t + 1).min(end)..end], error, wseed ^ 0xFACE),
        _ => Vec::new(),
    };
    let mut stages = Vec::with_capacity(n);
    let mut st0 = Stage::for_microgrid(env.mg, env.bounds, t % periods, planned_load, Exchange::Uniform(0.0));
    st0.injection = env.injection(t, planned_load)?;
    stages.push(st0);
    for k in 1..n {
        let i = t + k;
        let ex = if obs.split_market {
            corridor_exchange(env.tariff, i % periods)
        } else {
            let (fit, tou) = env.tariff.corridor(i % periods);
            Exchange::Uniform(prices[k - 1].clamp(fit, tou))
        };
        let mut st = Stage::for_microgrid(env.mg, env.bounds, i % periods, loads[k - 1], ex);
        st.injection = env.injection(i, loads[k - 1])?;
        stages.push(st);
    }
    let mut h = Horizon::for_microgrid(env.mg, env.dt(), obs.soc, stages);
    if cyclic && end == day_end {
        h.terminal_soc = Some(obs.day_start_soc);
    }
    Ok(h)
}

/// Grid-search `V` for the Lyapunov strategy by price-taker replay of `days`; the score is the
/// operating cost plus the final SoC shortfall valued at the mean price, so draining the store
/// is not mistaken for savings.
pub fn tune_lyapunov(env: &AgentEnv<'_>, days: &[ScenarioDay], theta: Option<f64>) -> Result<f64> {
    if days.is_empty() {
        return Err(Error::config("lyapunov tuning needs at least one day"));
    }
    let e = env.mg.ges.capacity_kwh;
    let candidates: Vec<f64> = [0.03, 0.1, 0.3, 1.0, 3.0, 10.0, 30.0, 100.0].iter().map(|m| m * e).collect();
    let dt = env.dt();
    let mean_price = days.iter().map(|d| d.day_average_price).sum::<f64>() / days.len() as f64;
    let mut best = (f64::INFINITY, candidates[0]);
    for &v in &candidates {
        let mut soc = env.mg.soc_init;
        let mut cost = 0.0;
        for day in days {
            for t in 0..env.periods {
                let st = Stage::for_microgrid(env.mg, env.bounds, t, day.net_load_kw[t], Exchange::Uniform(day.price[t]));
                let true_stage = st.clone();
                let st = lyapunov_stage(env, st, t, soc, v, theta);
                let sol = solve_horizon(&Horizon::for_microgrid(env.mg, dt, soc, vec![st]), OnInfeasible::Clamp)?;
                let s = sol.steps[0];
                cost += true_stage.objective(dt, s.p_dg, s.p_charge, s.p_discharge, s.soc_next);
                soc = s.soc_next;
            }
        }
        let score = cost + (env.mg.soc_init - soc) * e * mean_price;
        if score < best.0 {
            best = (score, v);
        }
    }
    log::debug!("microgrid {}: lyapunov V tuned to {:.1}", env.mg.id, best.1);
    Ok(best.1)
}

/// Online options matching a strategy, for callers that drive the online engine directly.
pub fn online_options(kind: &StrategyKind, enforce_network: bool) -> OnlineOptions {
    OnlineOptions { enforce_network, use_rpb: matches!(kind, StrategyKind::Ddoo { .. }), use_tracking: true }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispatch::{solve_day_dispatch, DayDispatchOptions};
    use crate::model::IntervalGrid;

    struct Fixture {
        mg: MicrogridSpec,
        bounds: DeterministicBounds,
        tariff: PriceSchedule,
        prices: Vec<f64>,
    }

    fn fixture(periods: usize, days: usize) -> Fixture {
        let grid = IntervalGrid::new(periods, days).unwrap();
        let mg = crate::synth::generate_fleet(11, 1, &grid).unwrap().remove(0);
        let bounds = crate::chance::reformulate_bounds(&mg.ges, 2000, 2).unwrap();
        let tariff = crate::io::default_tariff(periods);
        let prices = (0..periods * days)
            .map(|i| {
                let (fit, tou) = tariff.corridor(i % periods);
                crate::synth::proxy_price(fit, tou, mg.net_load(i), mg.ratings.load_kw, 0.0)
            })
            .collect();
        Fixture { mg, bounds, tariff, prices }
    }

    fn env<'a>(f: &'a Fixture, periods: usize) -> AgentEnv<'a> {
        AgentEnv { mg: &f.mg, bounds: &f.bounds, tariff: &f.tariff, periods, enforce_network: false, delay: 0 }
    }

    fn obs<'a>(f: &'a Fixture, t: usize, soc: f64) -> Observation<'a> {
        Observation { t, soc, day_start_soc: soc, online: None, oracle_prices: Some(&f.prices), plan: None, split_market: false }
    }

    #[test]
    fn zero_error_forecast_is_identity_and_mape_is_exact() {
        let truth: Vec<f64> = (0..288).map(|i| 50.0 + (i as f64 * 0.1).sin() * 20.0).collect();
        assert_eq!(forecast_perturb(&truth, 0.0, 3), truth);
        let f = forecast_perturb(&truth, 0.1, 3);
        let mape = f.iter().zip(&truth).map(|(a, b)| ((a - b) / b).abs()).sum::<f64>() / 288.0;
        assert!((mape - 0.1).abs() <= 0.01, "{mape}");
        assert_eq!(f, forecast_perturb(&truth, 0.1, 3));
        assert_ne!(f, forecast_perturb(&truth, 0.1, 4));
    }

    #[test]
    fn delay_floors_at_day_start() {
        assert_eq!(observed_interval(5, 288, 0), 5);
        assert_eq!(observed_interval(0, 288, 1), 0);
        assert_eq!(observed_interval(288, 288, 2), 288);
        assert_eq!(observed_interval(290, 288, 1), 289);
    }

    #[test]
    fn one_step_mpc_is_greedy() {
        let f = fixture(24, 2);
        let e = env(&f, 24);
        let mpc = StrategyKind::MpcOracle { horizon: 1, forecast_error: 0.0, cyclic: false, seed: 0 };
        for t in [0, 7, 23, 30, 47] {
            let o = obs(&f, t, 0.45);
            let a = prepare(&mpc, &e, &o).unwrap();
            let b = prepare(&StrategyKind::Greedy, &e, &o).unwrap();
            for price in [0.04, 0.1, 0.2] {
                assert_eq!(a.decide(price).unwrap(), b.decide(price).unwrap());
            }
        }
    }

    #[test]
    fn full_day_mpc_reproduces_hindsight_cost() {
        let periods = 24;
        let f = fixture(periods, 1);
        let e = env(&f, periods);
        let day = ScenarioDay::new(f.mg.day_net_load(0, periods), f.prices.clone()).unwrap();
        let m0 = solve_day_dispatch(&f.mg, &day, &f.bounds, &DayDispatchOptions::hindsight()).unwrap();
        let mpc = StrategyKind::MpcOracle { horizon: periods, forecast_error: 0.0, cyclic: true, seed: 0 };
        let mut soc = f.mg.soc_init;
        let mut cost = 0.0;
        for t in 0..periods {
            let o = Observation { day_start_soc: f.mg.soc_init, ..obs(&f, t, soc) };
            let d = prepare(&mpc, &e, &o).unwrap().decide(f.prices[t]).unwrap();
            let st = Stage::for_microgrid(&f.mg, &f.bounds, t, day.net_load_kw[t], Exchange::Uniform(f.prices[t]));
            cost += st.objective(e.dt(), d.p_dg, d.p_charge, d.p_discharge, d.soc_next);
            soc = d.soc_next;
        }
        assert!((cost - m0.cost).abs() <= 1e-4 * m0.cost.abs(), "{cost} vs {}", m0.cost);
        assert!((soc - f.mg.soc_init).abs() < 1e-6);
    }

    #[test]
    fn replay_follows_the_plan() {
        let periods = 24;
        let f = fixture(periods, 1);
        let e = env(&f, periods);
        let day = ScenarioDay::new(f.mg.day_net_load(0, periods), f.prices.clone()).unwrap();
        let m0 = solve_day_dispatch(&f.mg, &day, &f.bounds, &DayDispatchOptions::hindsight()).unwrap();
        let mut soc = f.mg.soc_init;
        for t in 0..periods {
            let o = Observation { plan: Some(&m0), ..obs(&f, t, soc) };
            let d = prepare(&StrategyKind::HindsightReplay, &e, &o).unwrap().decide(0.3).unwrap();
            assert!((d.p_ex - m0.p_ex[t]).abs() < 1e-9);
            soc = d.soc_next;
            assert!((soc - m0.soc[t + 1]).abs() < 1e-6);
        }
    }

    #[test]
    fn greedy_does_not_charge_on_zero_net_load() {
        let mut f = fixture(24, 1);
        f.mg.res_kw = f.mg.load_kw.clone();
        let e = env(&f, 24);
        for t in 0..24 {
            let d = prepare(&StrategyKind::Greedy, &e, &obs(&f, t, 0.5)).unwrap().decide(f.prices[t]).unwrap();
            assert_eq!(d.p_charge, 0.0);
        }
    }

    #[test]
    fn lyapunov_pulls_towards_theta() {
        let f = fixture(24, 1);
        let e = env(&f, 24);
        let k = StrategyKind::Lyapunov { v: Some(0.01 * f.mg.ges.capacity_kwh), theta: Some(0.5) };
        let high = prepare(&k, &e, &obs(&f, 3, 0.8)).unwrap().decide(0.1).unwrap();
        let low = prepare(&k, &e, &obs(&f, 3, 0.2)).unwrap().decide(0.1).unwrap();
        assert!(high.soc_next < 0.8 && low.soc_next > 0.2, "{} {}", high.soc_next, low.soc_next);
        assert!(prepare(&StrategyKind::Lyapunov { v: None, theta: None }, &e, &obs(&f, 3, 0.5)).is_err());

        let days = vec![ScenarioDay::new(f.mg.day_net_load(0, 24), f.prices.clone()).unwrap()];
        let v = tune_lyapunov(&e, &days, None).unwrap();
        assert!(v > 0.0 && v.is_finite());
    }

    #[test]
    fn every_strategy_answers_monotonically() {
        let periods = 24;
        let f = fixture(periods, 2);
        let e = env(&f, periods);
        let day = ScenarioDay::new(f.mg.day_net_load(0, periods), f.prices[..periods].to_vec()).unwrap();
        let m0 = solve_day_dispatch(&f.mg, &day, &f.bounds, &DayDispatchOptions::hindsight()).unwrap();
        let mut ds = crate::model::HistoricalDataset::new(None);
        ds.push(day.clone(), m0.soc.clone(), &f.bounds).unwrap();
        let mut ctx = OnlineContext::new(&ds, 1.0, 5000.0).unwrap();
        for i in 0..6 {
            ctx.observe(day.net_load_kw[i], day.price[i]);
        }
        let kinds = [
            StrategyKind::ddoo(),
            StrategyKind::Greedy,
            StrategyKind::IrtOnly { phi: 5000.0, tau: 1.0 },
            StrategyKind::Lyapunov { v: Some(1000.0), theta: None },
            StrategyKind::MpcOracle { horizon: 8, forecast_error: 0.05, cyclic: true, seed: 1 },
            StrategyKind::HindsightReplay,
        ];
        for k in &kinds {
            let o = Observation { online: Some(&ctx), plan: Some(&m0), ..obs(&f, 6, 0.5) };
            let p = prepare(k, &e, &o).unwrap();
            let mut prev = f64::INFINITY;
            for i in 0..100 {
                let q = p.decide(0.03 + 0.2 * i as f64 / 99.0).unwrap().p_ex;
                assert!(q <= prev + 1e-6, "{}: {q} after {prev}", k.label());
                prev = q;
            }
        }
    }

    #[test]
    fn strategy_config_round_trips_and_validates() {
        let k: StrategyKind = toml::from_str("kind = \"ddoo\"\nphi = 500.0").unwrap();
        assert_eq!(k, StrategyKind::Ddoo { phi: 500.0, tau: 1.0 });
        let m: StrategyKind = toml::from_str("kind = \"mpc_oracle\"").unwrap();
        assert_eq!(m, StrategyKind::MpcOracle { horizon: 48, forecast_error: 0.0, cyclic: true, seed: 0 });
        assert!(StrategyKind::Ddoo { phi: -1.0, tau: 1.0 }.validate().is_err());
        assert!(toml::from_str::<StrategyKind>("kind = \"ddoo\"\nv = 1.0").is_err());
    }
}
