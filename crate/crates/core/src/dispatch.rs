//! GES/DG dispatch over a horizon of stages.
//!
//! One formulation covers the day-long hindsight problem, receding-horizon lookahead and the
//! single-interval online problem. Single stages with a uniform exchange price are solved in
//! closed form; everything else goes through the interior-point solver.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ConstraintClass, Error, Result};
use crate::model::{DeterministicBounds, HistoricalDataset, MicrogridSpec, PriceSchedule, ScenarioDay};
use crate::network;
use crate::qp::{self, QpOptions, QpProblem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Exchange {
    /// Buy and sell at the same price.
    Uniform(f64),
    /// Buy at `buy`, sell at `sell` (utility tariff).
    Split { buy: f64, sell: f64 },
}

impl Exchange {
    /// Payment in $ for exchanging `p_ex` kW over `dt` hours.
    pub fn payment(&self, p_ex: f64, dt: f64) -> f64 {
        match *self {
            Exchange::Uniform(p) => p * p_ex * dt,
            Exchange::Split { buy, sell } => {
                if p_ex >= 0.0 {
                    buy * p_ex * dt
                } else {
                    sell * p_ex * dt
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub net_load: f64,
    pub exchange: Exchange,
    pub dg_min: f64,
    pub dg_max: f64,
    pub dg_cost: f64,
    /// `b` in the `0.5 b (g - g_min)^2` DG term.
    pub dg_quad: f64,
    pub charge_max: f64,
    pub discharge_max: f64,
    /// Objective coefficients on charge/discharge energy, $/kWh (may be negative).
    pub charge_cost: f64,
    pub discharge_cost: f64,
    /// SoC window at the end of the stage.
    pub soc_min: f64,
    pub soc_max: f64,
    pub soc_gain: f64,
    /// `(phi, reference)`: adds `phi (soc_next - reference)^2`.
    pub tracking: Option<(f64, f64)>,
    /// Window on the controllable injection `g + d - c`, kW.
    pub injection: Option<(f64, f64)>,
}

impl Stage {
    /// Stage for microgrid `mg` at interval of day `t` with its true GES costs.
    pub fn for_microgrid(mg: &MicrogridSpec, bounds: &DeterministicBounds, t: usize, net_load: f64, exchange: Exchange) -> Self {
        let t = t % bounds.periods();
        Stage {
            net_load,
            exchange,
            dg_min: mg.dg.p_min,
            dg_max: mg.dg.p_max,
            dg_cost: mg.dg.cost_per_kwh,
            dg_quad: mg.dg.quad_coeff(),
            charge_max: bounds.p_charge_max[t],
            discharge_max: bounds.p_discharge_max[t],
            charge_cost: mg.ges.cost_charge,
            discharge_cost: mg.ges.cost_discharge,
            soc_min: bounds.soc_min[t],
            soc_max: bounds.soc_max[t],
            soc_gain: mg.ges.baseline_soc_gain[t],
            tracking: None,
            injection: None,
        }
    }

    /// Stage objective in $ for a candidate decision.
    pub fn objective(&self, dt: f64, g: f64, c: f64, d: f64, soc_next: f64) -> f64 {
        let x = g - self.dg_min;
        let dg = (self.dg_cost * g + 0.5 * self.dg_quad * x * x) * dt;
        let ges = (self.charge_cost * c + self.discharge_cost * d) * dt;
        let ex = self.exchange.payment(self.net_load + c - d - g, dt);
        let tr = self.tracking.map_or(0.0, |(phi, r)| phi * (soc_next - r) * (soc_next - r));
        dg + ges + ex + tr
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Horizon {
    pub dt: f64,
    pub capacity: f64,
    pub eta_c: f64,
    pub eta_d: f64,
    pub retention: f64,
    pub soc_start: f64,
    pub stages: Vec<Stage>,
    /// Required SoC after the last stage.
    pub terminal_soc: Option<f64>,
}

impl Horizon {
    pub fn for_microgrid(mg: &MicrogridSpec, dt: f64, soc_start: f64, stages: Vec<Stage>) -> Self {
        Horizon {
            dt,
            capacity: mg.ges.capacity_kwh,
            eta_c: mg.ges.eta_c,
            eta_d: mg.ges.eta_d,
            retention: mg.ges.retention(),
            soc_start,
            stages,
            terminal_soc: None,
        }
    }

    /// SoC gain per kW of charging over one stage.
    pub fn k_charge(&self) -> f64 {
        self.eta_c * self.dt / self.capacity
    }

    /// SoC loss per kW of discharging over one stage.
    pub fn k_discharge(&self) -> f64 {
        self.dt / (self.eta_d * self.capacity)
    }

    pub fn next_soc(&self, soc: f64, stage: &Stage, c: f64, d: f64) -> f64 {
        self.retention * soc + self.k_charge() * c - self.k_discharge() * d + stage.soc_gain
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct StepPlan {
    pub p_dg: f64,
    pub p_charge: f64,
    pub p_discharge: f64,
    pub p_ex: f64,
    pub soc_next: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonSolution {
    pub steps: Vec<StepPlan>,
    pub objective: f64,
    pub kkt_residual: f64,
    /// Some window was unreachable and was relaxed to the nearest reachable value.
    pub clamped: bool,
    /// Simultaneous charging and discharging survived purification somewhere.
    pub complementarity_flag: bool,
}

/// What to do when the SoC/energy-cycle/network windows cannot be met.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OnInfeasible {
    Fail,
    /// Move the offending window to the nearest reachable value and flag the result.
    Clamp,
}

const WIN_TOL: f64 = 1e-9;

/// Forward reachability over the SoC windows; returns the (possibly relaxed) copy and whether
/// anything was relaxed.
fn reconcile(h: &Horizon, policy: OnInfeasible) -> Result<(Horizon, bool)> {
    let mut h = h.clone();
    let mut clamped = false;
    let (kc, kd, keep) = (h.k_charge(), h.k_discharge(), h.retention);
    let (mut lo, mut hi) = (h.soc_start, h.soc_start);
    for (t, st) in h.stages.iter_mut().enumerate() {
        if let Some((umin, umax)) = st.injection {
            let (amin, amax) = (st.dg_min - st.charge_max, st.dg_max + st.discharge_max);
            if umin > amax + WIN_TOL || umax < amin - WIN_TOL || umin > umax {
                if policy == OnInfeasible::Fail {
                    return Err(Error::Infeasible {
                        class: ConstraintClass::Network,
                        detail: format!("stage {t}: voltage window [{umin:.1}, {umax:.1}] kW unreachable"),
                    });
                }
                st.injection = None;
                clamped = true;
            }
        }
        let r_lo = keep * lo + st.soc_gain - kd * st.discharge_max;
        let r_hi = keep * hi + st.soc_gain + kc * st.charge_max;
        let w_lo = st.soc_min.max(r_lo);
        let w_hi = st.soc_max.min(r_hi);
        if w_lo > w_hi + WIN_TOL {
            if policy == OnInfeasible::Fail {
                return Err(Error::Infeasible {
                    class: ConstraintClass::SocWindow,
                    detail: format!(
                        "stage {t}: reachable SoC [{r_lo:.4}, {r_hi:.4}] misses window [{:.4}, {:.4}]",
                        st.soc_min, st.soc_max
                    ),
                });
            }
            let p = if st.soc_min > r_hi { r_hi } else { r_lo };
            st.soc_min = p;
            st.soc_max = p;
            lo = p;
            hi = p;
            clamped = true;
        } else {
            // keep the stage window consistent so fixed stages stay exactly representable
            lo = w_lo.min(w_hi);
            hi = w_hi.max(w_lo);
        }
    }
    if let Some(target) = h.terminal_soc {
        if target < lo - WIN_TOL || target > hi + WIN_TOL {
            if policy == OnInfeasible::Fail {
                return Err(Error::Infeasible {
                    class: ConstraintClass::EnergyCycle,
                    detail: format!("terminal SoC {target:.4} outside reachable [{lo:.4}, {hi:.4}]"),
                });
            }
            h.terminal_soc = Some(target.clamp(lo, hi));
            clamped = true;
        }
    }
    Ok((h, clamped))
}

pub fn solve_horizon(h: &Horizon, policy: OnInfeasible) -> Result<HorizonSolution> {
    if h.stages.is_empty() {
        return Err(Error::config("horizon has no stages"));
    }
    if !(h.capacity > 0.0 && h.dt > 0.0) {
        return Err(Error::config("horizon needs positive capacity and dt"));
    }
    let (h, clamped) = reconcile(h, policy)?;
    let st = &h.stages[0];
    let single = h.stages.len() == 1 && st.injection.is_none() && h.terminal_soc.is_none();
    let mut sol = if single && matches!(st.exchange, Exchange::Uniform(_)) {
        solve_stage_exact(&h)
    } else if single {
        solve_stage_split(&h)
    } else {
        solve_ipm(&h)?
    };
    sol.clamped |= clamped;
    Ok(sol)
}

/// Closed-form optimum of a single stage with a uniform exchange price.
///
/// The DG part separates. Storage reduces to the net SoC change `z = kc c - kd d`, whose cheapest
/// realization has a piecewise-linear cost with a single kink; adding the tracking quadratic
/// gives a one-dimensional convex problem solved by comparing slopes at the kink.
fn solve_stage_exact(h: &Horizon) -> HorizonSolution {
    let st = &h.stages[0];
    let Exchange::Uniform(lambda) = st.exchange else { unreachable!("exact path needs a uniform price") };
    let dt = h.dt;

    let range = st.dg_max - st.dg_min;
    let g = if st.dg_quad > 0.0 && range > 0.0 {
        st.dg_min + ((lambda - st.dg_cost) / st.dg_quad).clamp(0.0, range)
    } else if lambda > st.dg_cost {
        st.dg_max
    } else {
        st.dg_min
    };

    let (kc, kd) = (h.k_charge(), h.k_discharge());
    let (cmax, dmax) = (st.charge_max, st.discharge_max);
    let ac = (st.charge_cost + lambda) * dt;
    let ad = (st.discharge_cost - lambda) * dt;
    let s0 = h.retention * h.soc_start + st.soc_gain;

    // cost of net SoC change z: slope m1 left of the kink zb, m2 right of it
    let gamma = ac + ad * kc / kd;
    let (zb, m1, m2) = if gamma >= 0.0 { (0.0, -ad / kd, ac / kc) } else { (kc * cmax - kd * dmax, ac / kc, -ad / kd) };

    let (zp_lo, zp_hi) = (-kd * dmax, kc * cmax);
    let (mut z_lo, mut z_hi) = (zp_lo.max(st.soc_min - s0), zp_hi.min(st.soc_max - s0));
    let mut clamped = false;
    if z_lo > z_hi {
        // reconcile() normally prevents this; guard against rounding
        let p = if st.soc_min - s0 > zp_hi { zp_hi } else { zp_lo };
        z_lo = p;
        z_hi = p;
        clamped = true;
    }
    let z = match st.tracking {
        Some((phi, r)) if phi > 0.0 => {
            let w = r - s0;
            let zr = w - m2 / (2.0 * phi);
            let zl = w - m1 / (2.0 * phi);
            let z = if zr >= zb {
                zr
            } else if zl <= zb {
                zl
            } else {
                zb
            };
            z.clamp(z_lo, z_hi)
        }
        _ => {
            if m2 < 0.0 {
                z_hi
            } else if m1 > 0.0 {
                z_lo
            } else {
                zb.clamp(z_lo, z_hi)
            }
        }
    };
    let (c, d) = if gamma >= 0.0 {
        (z.max(0.0) / kc, (-z).max(0.0) / kd)
    } else if z <= zb {
        ((z + kd * dmax) / kc, dmax)
    } else {
        (cmax, (kc * cmax - z) / kd)
    };
    let (c, d) = (c.clamp(0.0, cmax), d.clamp(0.0, dmax));
    let soc_next = s0 + kc * c - kd * d;
    let step = StepPlan { p_dg: g, p_charge: c, p_discharge: d, p_ex: st.net_load + c - d - g, soc_next };
    HorizonSolution {
        objective: st.objective(dt, g, c, d, soc_next),
        steps: vec![step],
        kkt_residual: 0.0,
        clamped,
        complementarity_flag: c * d > 1e-6,
    }
}

/// Single stage under a buy/sell tariff. The exchange cost has one kink at zero, so either the
/// buy-price or the sell-price optimum is already on the right side of it, or the optimum sits at
/// zero exchange: bisect the balance multiplier in [sell, buy] and interpolate the two sides.
fn solve_stage_split(h: &Horizon) -> HorizonSolution {
    let st = &h.stages[0];
    let Exchange::Split { buy, sell } = st.exchange else { unreachable!("split path needs a tariff") };
    let at = |lambda: f64| {
        let mut u = h.clone();
        u.stages[0].exchange = Exchange::Uniform(lambda);
        solve_stage_exact(&u)
    };
    let finish = |mut sol: HorizonSolution| {
        let s = &sol.steps[0];
        sol.objective = st.objective(h.dt, s.p_dg, s.p_charge, s.p_discharge, s.soc_next);
        sol
    };
    let high = at(buy);
    if high.steps[0].p_ex >= 0.0 {
        return finish(high);
    }
    let low = at(sell);
    if low.steps[0].p_ex <= 0.0 {
        return finish(low);
    }
    let (mut lo, mut hi) = ((sell, low), (buy, high));
    for _ in 0..200 {
        let mid = 0.5 * (lo.0 + hi.0);
        if mid <= lo.0 || mid >= hi.0 {
            break;
        }
        let s = at(mid);
        if s.steps[0].p_ex > 0.0 {
            lo = (mid, s);
        } else {
            hi = (mid, s);
        }
    }
    let (a, b) = (&lo.1.steps[0], &hi.1.steps[0]);
    let w = a.p_ex / (a.p_ex - b.p_ex);
    let mix = |x: f64, y: f64| (1.0 - w) * x + w * y;
    let (g, c, d) = (mix(a.p_dg, b.p_dg), mix(a.p_charge, b.p_charge), mix(a.p_discharge, b.p_discharge));
    let soc_next = mix(a.soc_next, b.soc_next);
    finish(HorizonSolution {
        objective: 0.0,
        steps: vec![StepPlan { p_dg: g, p_charge: c, p_discharge: d, p_ex: st.net_load + c - d - g, soc_next }],
        kkt_residual: 0.0,
        clamped: lo.1.clamped || hi.1.clamped,
        complementarity_flag: c * d > 1e-6,
    })
}

fn solve_ipm(h: &Horizon) -> Result<HorizonSolution> {
    let split = h.stages.iter().any(|s| matches!(s.exchange, Exchange::Split { .. }));
    let windowed = h.stages.iter().any(|s| s.injection.is_some());
    // per stage: g, c, d, [u], [pb, ps], e
    let w = 4 + usize::from(windowed) + 2 * usize::from(split);
    let (iu, ipb, ie) = (3, 3 + usize::from(windowed), w - 1);
    let nh = h.stages.len();
    let mut p = QpProblem::with_vars(w * nh);
    let (dt, cap) = (h.dt, h.capacity);
    for (t, st) in h.stages.iter().enumerate() {
        let b = t * w;
        let (g, c, d, e) = (b, b + 1, b + 2, b + ie);
        p.lower[g] = st.dg_min;
        p.upper[g] = st.dg_max;
        p.hess[g] = st.dg_quad * dt;
        p.lin[g] = (st.dg_cost - st.dg_quad * st.dg_min) * dt;
        p.lower[c] = 0.0;
        p.upper[c] = st.charge_max;
        p.lin[c] = st.charge_cost * dt;
        p.lower[d] = 0.0;
        p.upper[d] = st.discharge_max;
        p.lin[d] = st.discharge_cost * dt;
        match st.exchange {
            Exchange::Uniform(lambda) => {
                p.lin[c] += lambda * dt;
                p.lin[d] -= lambda * dt;
                p.lin[g] -= lambda * dt;
            }
            Exchange::Split { buy, sell } => {
                let (pb, ps) = (b + ipb, b + ipb + 1);
                p.lower[pb] = 0.0;
                p.lower[ps] = 0.0;
                p.lin[pb] = buy * dt;
                p.lin[ps] = -sell * dt;
                p.add_row(vec![(g, 1.0), (c, -1.0), (d, 1.0), (pb, 1.0), (ps, -1.0)], st.net_load);
            }
        }
        if split && matches!(st.exchange, Exchange::Uniform(_)) {
            let (pb, ps) = (b + ipb, b + ipb + 1);
            p.lower[pb] = 0.0;
            p.upper[pb] = 0.0;
            p.lower[ps] = 0.0;
            p.upper[ps] = 0.0;
        }
        if windowed {
            let u = b + iu;
            match st.injection {
                Some((lo, hi)) => {
                    p.lower[u] = lo;
                    p.upper[u] = hi;
                }
                None => {
                    p.lower[u] = st.dg_min - st.charge_max;
                    p.upper[u] = st.dg_max + st.discharge_max;
                }
            }
            p.add_row(vec![(g, 1.0), (c, -1.0), (d, 1.0), (u, -1.0)], 0.0);
        }
        p.lower[e] = st.soc_min * cap;
        p.upper[e] = st.soc_max * cap;
        if t + 1 == nh {
            if let Some(target) = h.terminal_soc {
                p.lower[e] = target * cap;
                p.upper[e] = target * cap;
            }
        }
        if let Some((phi, r)) = st.tracking {
            p.hess[e] = 2.0 * phi / (cap * cap);
            p.lin[e] = -2.0 * phi * r / cap;
        }
        let mut row = vec![(e, 1.0), (c, -h.eta_c * dt), (d, dt / h.eta_d)];
        let mut rhs = st.soc_gain * cap;
        if t == 0 {
            rhs += h.retention * h.soc_start * cap;
        } else {
            row.push((e - w, -h.retention));
        }
        p.add_row(row, rhs);
    }
    let sol = qp::solve(&p, &QpOptions::default())?;
    let x = &sol.x;

    // Assemble, removing simultaneous charge/discharge where that does not raise the objective.
    let mut steps = Vec::with_capacity(nh);
    let mut flag = false;
    let mut objective = 0.0;
    let (kc, kd) = (h.k_charge(), h.k_discharge());
    let mut soc = h.soc_start;
    for (t, st) in h.stages.iter().enumerate() {
        let b = t * w;
        let g = x[b];
        let (mut c, mut d) = (x[b + 1], x[b + 2]);
        if c < 1e-9 {
            c = 0.0;
        }
        if d < 1e-9 {
            d = 0.0;
        }
        if c > 0.0 && d > 0.0 {
            let z = kc * c - kd * d;
            let (c2, d2) = if z >= 0.0 { ((z / kc).min(st.charge_max), 0.0) } else { (0.0, (-z / kd).min(st.discharge_max)) };
            let s_old = h.next_soc(soc, st, c, d);
            let s_new = h.next_soc(soc, st, c2, d2);
            let window_ok = st.injection.is_none_or(|(lo, hi)| {
                let u = g + d2 - c2;
                u >= lo - 1e-9 && u <= hi + 1e-9
            });
            if window_ok && st.objective(dt, g, c2, d2, s_new) <= st.objective(dt, g, c, d, s_old) + 1e-9 {
                c = c2;
                d = d2;
            }
        }
        flag |= c * d > 1e-6;
        let soc_next = h.next_soc(soc, st, c, d);
        objective += st.objective(dt, g, c, d, soc_next);
        steps.push(StepPlan { p_dg: g, p_charge: c, p_discharge: d, p_ex: st.net_load + c - d - g, soc_next });
        soc = soc_next;
    }
    Ok(HorizonSolution { steps, objective, kkt_residual: sol.kkt_residual, clamped: false, complementarity_flag: flag })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DispatchStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayDispatchSolution {
    pub p_dg: Vec<f64>,
    pub p_charge: Vec<f64>,
    pub p_discharge: Vec<f64>,
    pub p_ex: Vec<f64>,
    /// `T + 1` points starting at the initial SoC.
    pub soc: Vec<f64>,
    /// True operating cost in $ (GES + exchange + DG).
    pub cost: f64,
    pub status: DispatchStatus,
    pub kkt_residual: f64,
    pub complementarity_flag: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DayDispatchOptions {
    pub enforce_network: bool,
    pub enforce_cycle: bool,
    /// Trade with the utility tariff instead of the day's uniform price.
    pub tariff: Option<PriceSchedule>,
    /// Day of the microgrid horizon whose load/RES split feeds the network model.
    pub day_index: Option<usize>,
    /// Initial SoC; defaults to the microgrid's `soc_init`.
    pub soc_start: Option<f64>,
}

impl DayDispatchOptions {
    pub fn hindsight() -> Self {
        DayDispatchOptions { enforce_cycle: true, ..Default::default() }
    }
}

/// Voltage-safe window for the controllable injection at interval `t` of a day.
pub(crate) fn network_window(mg: &MicrogridSpec, day: Option<usize>, t: usize, periods: usize, net_load: f64) -> Result<Option<(f64, f64)>> {
    let Some(net) = &mg.network else { return Ok(None) };
    let (p, q) = match day {
        Some(d) if (d + 1) * periods <= mg.load_kw.len() => network::bus_injections(mg, net, d * periods + t, 0.0),
        _ => {
            let load = net_load.max(0.0);
            network::bus_injections_from(net, mg.bus_index, load, (-net_load).max(0.0), load * crate::synth::reactive_ratio(), 0.0)
        }
    };
    match network::injection_window(net, mg.bus_index, &p, &q)? {
        Some(w) => Ok(Some(w)),
        None => Err(Error::Infeasible {
            class: ConstraintClass::Network,
            detail: format!("interval {t}: voltage limits violated by uncontrollable injections"),
        }),
    }
}

pub fn solve_day_dispatch(
    mg: &MicrogridSpec,
    day: &ScenarioDay,
    bounds: &DeterministicBounds,
    options: &DayDispatchOptions,
) -> Result<DayDispatchSolution> {
    if bounds.periods() != day.periods() {
        return Err(Error::config(format!("bounds cover {} intervals, day has {}", bounds.periods(), day.periods())));
    }
    solve_hindsight(mg, &day.net_load_kw, &day.price, bounds, options)
}

/// Hindsight dispatch over consecutive whole days of known net load and price.
/// `options.day_index` is the first day; `enforce_cycle` ties the final SoC to the start.
pub fn solve_hindsight(
    mg: &MicrogridSpec,
    net_load: &[f64],
    price: &[f64],
    bounds: &DeterministicBounds,
    options: &DayDispatchOptions,
) -> Result<DayDispatchSolution> {
    let periods = bounds.periods();
    let n = net_load.len();
    if n == 0 || !n.is_multiple_of(periods) || price.len() != n {
        return Err(Error::config(format!("hindsight needs whole days: {n} loads, {} prices, {periods} intervals per day", price.len())));
    }
    let dt = 24.0 / periods as f64;
    let soc_start = options.soc_start.unwrap_or(mg.soc_init);
    let mut stages = Vec::with_capacity(n);
    for i in 0..n {
        let t = i % periods;
        let exchange = match &options.tariff {
            Some(tariff) => {
                let (fit, tou) = tariff.corridor(t);
                Exchange::Split { buy: tou, sell: fit }
            }
            None => Exchange::Uniform(price[i]),
        };
        let mut st = Stage::for_microgrid(mg, bounds, t, net_load[i], exchange);
        if options.enforce_network {
            st.injection = network_window(mg, options.day_index.map(|d| d + i / periods), t, periods, net_load[i])?;
        }
        stages.push(st);
    }
    let mut h = Horizon::for_microgrid(mg, dt, soc_start, stages);
    if options.enforce_cycle {
        // a start outside the closing window (e.g. carried over from a run) cycles to its edge
        let last = &h.stages[n - 1];
        let target = soc_start.clamp(last.soc_min, last.soc_max);
        if target != soc_start {
            log::debug!("microgrid {}: cycle target {soc_start:.4} moved into the closing window ({target:.4})", mg.id);
        }
        h.terminal_soc = Some(target);
    }
    let sol = solve_horizon(&h, OnInfeasible::Fail)?;
    if sol.complementarity_flag {
        log::warn!("microgrid {}: simultaneous charge/discharge at the dispatch optimum", mg.id);
    }
    let mut out = DayDispatchSolution {
        p_dg: Vec::with_capacity(n),
        p_charge: Vec::with_capacity(n),
        p_discharge: Vec::with_capacity(n),
        p_ex: Vec::with_capacity(n),
        soc: Vec::with_capacity(n + 1),
        cost: 0.0,
        status: DispatchStatus::Optimal,
        kkt_residual: sol.kkt_residual,
        complementarity_flag: sol.complementarity_flag,
    };
    out.soc.push(soc_start);
    for (t, s) in sol.steps.iter().enumerate() {
        out.p_dg.push(s.p_dg);
        out.p_charge.push(s.p_charge);
        out.p_discharge.push(s.p_discharge);
        out.p_ex.push(s.p_ex);
        out.soc.push(s.soc_next);
        out.cost += h.stages[t].objective(dt, s.p_dg, s.p_charge, s.p_discharge, s.soc_next);
    }
    Ok(out)
}

pub fn build_offline_dataset(
    mg: &MicrogridSpec,
    scenarios: &[ScenarioDay],
    bounds: &DeterministicBounds,
    options: &DayDispatchOptions,
    window_capacity: Option<usize>,
) -> Result<HistoricalDataset> {
    if scenarios.is_empty() {
        return Err(Error::config("offline dataset needs at least one scenario"));
    }
    let solved: Vec<Result<Vec<f64>>> = scenarios
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            solve_day_dispatch(mg, s, bounds, options)
                .map(|sol| sol.soc)
                .map_err(|e| Error::Scenario { index: i, source: Box::new(e) })
        })
        .collect();
    let mut ds = HistoricalDataset::new(window_capacity);
    for (s, soc) in scenarios.iter().zip(solved) {
        ds.push(s.clone(), soc?, bounds)?;
    }
    Ok(ds)
}

/// Append the hindsight solution of a realized day, evicting the oldest pair past capacity.
pub fn rolling_update(
    dataset: &mut HistoricalDataset,
    realized_day: &ScenarioDay,
    mg: &MicrogridSpec,
    bounds: &DeterministicBounds,
    options: &DayDispatchOptions,
) -> Result<()> {
    let sol = solve_day_dispatch(mg, realized_day, bounds, options)?;
    dataset.push(realized_day.clone(), sol.soc, bounds)
}
