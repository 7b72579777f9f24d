//! Prediction-free online dispatch guided by two kernel-weighted reference signals:
//! a SoC trajectory (weighted offline optima) and a benchmark of the day's average price.
//!
//! Scenario similarity compares the realized prefix of today's net load and price with the
//! same prefix of each stored scenario, after z-scoring each interval by the dataset spread.

use serde::{Deserialize, Serialize};

use crate::dispatch::{solve_horizon, Exchange, Horizon, OnInfeasible, Stage};
use crate::error::{Error, Result};
use crate::model::{DeterministicBounds, DispatchDecision, HistoricalDataset, MicrogridSpec};

/// Gaussian similarity `exp(-|x - y|^2 / (t tau))`.
pub fn kernel(x: &[f64], y: &[f64], t: usize, tau: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::data(format!("kernel: lengths {} and {} differ", x.len(), y.len())));
    }
    if t == 0 || !(tau > 0.0) {
        return Err(Error::config("kernel: need t >= 1 and tau > 0"));
    }
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((-d2 / (t as f64 * tau)).exp())
}

/// Per-interval spreads used to z-score kernel inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelScales {
    pub net_load: Vec<f64>,
    pub price: Vec<f64>,
}

fn spreads(cols: impl Fn(usize) -> Vec<f64>, periods: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..periods)
        .map(|t| {
            let v = cols(t);
            let n = v.len() as f64;
            let m = v.iter().sum::<f64>() / n;
            (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt()
        })
        .collect();
    let positive: Vec<f64> = raw.iter().copied().filter(|s| *s > 1e-9).collect();
    let fallback = if positive.is_empty() { 1.0 } else { positive.iter().sum::<f64>() / positive.len() as f64 };
    raw.into_iter().map(|s| if s > 1e-9 { s } else { fallback }).collect()
}

impl KernelScales {
    pub fn from_dataset(ds: &HistoricalDataset) -> Self {
        let periods = ds.scenarios.front().map_or(0, |s| s.periods());
        KernelScales {
            net_load: spreads(|t| ds.scenarios.iter().map(|s| s.net_load_kw[t]).collect(), periods),
            price: spreads(|t| ds.scenarios.iter().map(|s| s.price[t]).collect(), periods),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OnlineContext<'a> {
    pub realized_net_load: Vec<f64>,
    pub realized_price: Vec<f64>,
    pub bandwidth: f64,
    pub tracking_weight: f64,
    pub dataset: &'a HistoricalDataset,
    scales: KernelScales,
}

impl<'a> OnlineContext<'a> {
    pub fn new(dataset: &'a HistoricalDataset, bandwidth: f64, tracking_weight: f64) -> Result<Self> {
        dataset.validate()?;
        if !(bandwidth > 0.0) {
            return Err(Error::config("bandwidth must be positive"));
        }
        if !(tracking_weight >= 0.0) {
            return Err(Error::config("tracking weight must be non-negative"));
        }
        Ok(OnlineContext {
            realized_net_load: Vec::new(),
            realized_price: Vec::new(),
            bandwidth,
            tracking_weight,
            dataset,
            scales: KernelScales::from_dataset(dataset),
        })
    }

    /// Record the realized net load and cleared price of the interval just finished.
    pub fn observe(&mut self, net_load: f64, price: f64) {
        self.realized_net_load.push(net_load);
        self.realized_price.push(price);
    }

    pub fn len(&self) -> usize {
        self.realized_price.len()
    }

    pub fn is_empty(&self) -> bool {
        self.realized_price.is_empty()
    }

    fn check(&self, t: usize, prefix: usize) -> Result<()> {
        if prefix > t || prefix > self.len() {
            return Err(Error::Invariant(format!("signals for interval {t} from a {prefix}-long prefix with only {} observed", self.len())));
        }
        let periods = self.dataset.scenarios[0].periods();
        if t >= periods {
            return Err(Error::Invariant(format!("interval {t} beyond the {periods}-interval day")));
        }
        Ok(())
    }

    /// Squared z-scored distance of the first `t` realized values to each scenario.
    fn distances(&self, t: usize, price: bool) -> Vec<f64> {
        let (real, sc) = if price { (&self.realized_price, &self.scales.price) } else { (&self.realized_net_load, &self.scales.net_load) };
        self.dataset
            .scenarios
            .iter()
            .map(|s| {
                let seq = if price { &s.price } else { &s.net_load_kw };
                (0..t).map(|i| ((real[i] - seq[i]) / sc[i]).powi(2)).sum()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub rho: Vec<f64>,
    /// Every raw kernel product underflowed; weights came from the log-domain normalization
    /// (or are uniform if even that was not finite).
    pub underflow: bool,
}

fn normalize_log(logw: &[f64]) -> Weights {
    let s = logw.len();
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Weights { rho: vec![1.0 / s as f64; s], underflow: true };
    }
    let w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = w.iter().sum();
    Weights { rho: w.iter().map(|v| v / z).collect(), underflow: max < f64::MIN_POSITIVE.ln() }
}

fn weights_from(ctx: &OnlineContext<'_>, t: usize, prefix: usize, use_net_load: bool) -> Result<Weights> {
    ctx.check(t, prefix)?;
    let t = prefix;
    let s = ctx.dataset.len();
    if t == 0 {
        return Ok(Weights { rho: vec![1.0 / s as f64; s], underflow: false });
    }
    let denom = t as f64 * ctx.bandwidth;
    let dp = ctx.distances(t, true);
    let logw: Vec<f64> = if use_net_load {
        let dl = ctx.distances(t, false);
        dl.iter().zip(&dp).map(|(a, b)| -(a + b) / denom).collect()
    } else {
        dp.iter().map(|b| -b / denom).collect()
    };
    let w = normalize_log(&logw);
    if w.underflow {
        log::debug!("kernel weights underflowed at interval {t}; using log-domain normalization");
    }
    Ok(w)
}

/// Nadaraya-Watson weights from the joint net-load and price kernels.
pub fn scenario_weights(ctx: &OnlineContext<'_>, t: usize) -> Result<Weights> {
    weights_from(ctx, t, t, true)
}

/// Weights from the price kernel alone (used for the price benchmark).
pub fn price_weights(ctx: &OnlineContext<'_>, t: usize) -> Result<Weights> {
    weights_from(ctx, t, t, false)
}

/// Reference for the SoC at the end of interval `t`.
pub fn compute_irt(ctx: &OnlineContext<'_>, t: usize) -> Result<f64> {
    let w = scenario_weights(ctx, t)?;
    Ok(irt_from(ctx, &w.rho, t))
}

fn irt_from(ctx: &OnlineContext<'_>, rho: &[f64], t: usize) -> f64 {
    ctx.dataset.optimal_soc.iter().zip(rho).map(|(soc, r)| r * soc[t + 1]).sum()
}

/// Benchmark of today's average price.
pub fn compute_rpb(ctx: &OnlineContext<'_>, t: usize) -> Result<f64> {
    let w = price_weights(ctx, t)?;
    Ok(ctx.dataset.scenarios.iter().zip(&w.rho).map(|(s, r)| r * s.day_average_price).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSignals {
    pub irt_soc: f64,
    pub rpb: f64,
    pub weights: Vec<f64>,
    #[serde(default)]
    pub underflow: bool,
}

pub fn compute_signals(ctx: &OnlineContext<'_>, t: usize) -> Result<ReferenceSignals> {
    compute_signals_from_prefix(ctx, t, t)
}

/// Signals for interval `t` when only the first `prefix` realized intervals have arrived.
pub fn compute_signals_from_prefix(ctx: &OnlineContext<'_>, t: usize, prefix: usize) -> Result<ReferenceSignals> {
    let w = weights_from(ctx, t, prefix, true)?;
    let irt_soc = irt_from(ctx, &w.rho, t);
    let pw = weights_from(ctx, t, prefix, false)?;
    let rpb = ctx.dataset.scenarios.iter().zip(&pw.rho).map(|(s, r)| r * s.day_average_price).sum();
    Ok(ReferenceSignals { irt_soc, rpb, weights: w.rho, underflow: w.underflow || pw.underflow })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnlineOptions {
    pub enforce_network: bool,
    /// Embed the price benchmark in the storage cost coefficients.
    pub use_rpb: bool,
    /// Add the SoC tracking term.
    pub use_tracking: bool,
}

impl Default for OnlineOptions {
    fn default() -> Self {
        OnlineOptions { enforce_network: false, use_rpb: true, use_tracking: true }
    }
}

/// Single-interval problem at absolute interval `t_abs` for net load `net_load`.
#[allow(clippy::too_many_arguments)]
pub fn online_stage(
    mg: &MicrogridSpec,
    bounds: &DeterministicBounds,
    t_abs: usize,
    net_load: f64,
    price: f64,
    signals: Option<&ReferenceSignals>,
    phi: f64,
    options: &OnlineOptions,
) -> Result<Stage> {
    let periods = bounds.periods();
    let t = t_abs % periods;
    let mut st = Stage::for_microgrid(mg, bounds, t, net_load, Exchange::Uniform(price));
    if let Some(sig) = signals {
        if options.use_rpb {
            st.charge_cost = mg.ges.cost_charge - sig.rpb;
            st.discharge_cost = mg.ges.cost_discharge + sig.rpb;
        }
        if options.use_tracking && phi > 0.0 {
            st.tracking = Some((phi, sig.irt_soc));
        }
    }
    if options.enforce_network {
        let day = if t_abs + periods - t <= mg.load_kw.len() { Some(t_abs / periods) } else { None };
        st.injection = crate::dispatch::network_window(mg, day, t, periods, net_load).or_else(|e| match e {
            Error::Infeasible { .. } => Ok(None),
            other => Err(other),
        })?;
    }
    Ok(st)
}

pub fn solve_stage(mg: &MicrogridSpec, dt: f64, soc_now: f64, stage: Stage) -> Result<DispatchDecision> {
    let h = Horizon::for_microgrid(mg, dt, soc_now, vec![stage]);
    let sol = solve_horizon(&h, OnInfeasible::Clamp)?;
    debug_assert!(sol.objective.is_finite());
    if sol.clamped {
        log::debug!("microgrid {}: SoC window unreachable from {soc_now:.4}; decision clamped", mg.id);
    }
    let s = sol.steps[0];
    Ok(DispatchDecision {
        p_dg: s.p_dg,
        p_charge: s.p_charge,
        p_discharge: s.p_discharge,
        p_ex: s.p_ex,
        soc_next: s.soc_next,
        clamped: sol.clamped,
    })
}

/// Best response of a microgrid at the announced `price` given its reference signals.
#[allow(clippy::too_many_arguments)]
pub fn online_step(
    mg: &MicrogridSpec,
    soc_now: f64,
    t_abs: usize,
    price: f64,
    signals: &ReferenceSignals,
    bounds: &DeterministicBounds,
    phi: f64,
    options: &OnlineOptions,
) -> Result<DispatchDecision> {
    let periods = bounds.periods();
    let st = online_stage(mg, bounds, t_abs, mg.net_load(t_abs), price, Some(signals), phi, options)?;
    solve_stage(mg, 24.0 / periods as f64, soc_now, st)
}
