//! Seeded synthetic fleets, profiles and price histories.
//!
//! Parameter ranges follow the 20-microgrid case study: wind 400-900 kW, PV 200-400 kW, load
//! 200-800 kW, DG 100-250 kW, ES 500-1300 kWh at 2-4 h, VES 300-600 kWh at 2-3 h, GES cost
//! 0.012-0.025 $/kWh and DG cost 0.12-0.19 $/kWh. ES and VES are merged into one GES by
//! capacity weighting.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::model::{
    BoundDistribution, DgParams, DistributionFamily, GesParams, IntervalGrid, MicrogridSpec, PriceSchedule, Ratings, ScenarioDay,
};
use crate::network;

/// kvar per kW at a 0.95 lagging power factor.
pub fn reactive_ratio() -> f64 {
    (1.0f64 - 0.95 * 0.95).sqrt() / 0.95
}

const TOPOLOGIES: [usize; 3] = [12, 15, 33];
const ES_ETA: f64 = 0.95;
const VES_ETA: f64 = 0.98;
const ES_LEAK: f64 = 1e-5;
const VES_LEAK: f64 = 2e-4;
/// Peak per-interval SoC drift of the VES share from baseline consumption.
const VES_GAIN_AMPLITUDE: f64 = 0.001;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn diurnal(hour: f64) -> f64 {
    (2.0 * PI * (hour - 6.0) / 24.0).sin()
}

pub fn generate_fleet(seed: u64, n_mg: usize, grid: &IntervalGrid) -> Result<Vec<MicrogridSpec>> {
    (0..n_mg).map(|k| generate_microgrid(seed, k, grid)).collect()
}

fn generate_microgrid(seed: u64, k: usize, grid: &IntervalGrid) -> Result<MicrogridSpec> {
    let mut rng = rng_for(seed, 2 * k as u64 + 1);
    let wind = rng.gen_range(400.0..=900.0);
    let pv = rng.gen_range(200.0..=400.0);
    let load = rng.gen_range(200.0..=800.0);
    let dg_max = rng.gen_range(100.0..=250.0);
    let es_kwh = rng.gen_range(500.0..=1300.0);
    let es_h = rng.gen_range(2.0..=4.0);
    let ves_kwh = rng.gen_range(300.0..=600.0);
    let ves_h = rng.gen_range(2.0..=3.0);
    let es_cost = rng.gen_range(0.012..=0.025);
    let ves_cost = rng.gen_range(0.012..=0.025);
    let dg_cost = rng.gen_range(0.12..=0.19);

    let cap = es_kwh + ves_kwh;
    let (we, wv) = (es_kwh / cap, ves_kwh / cap);
    let p_max = es_kwh / es_h + ves_kwh / ves_h;
    let periods = grid.periods_per_day;
    let pdist = BoundDistribution { mean: vec![p_max; periods], std: vec![0.02 * p_max; periods], family: DistributionFamily::Normal };
    let mut lower = Vec::with_capacity(periods);
    let mut upper = Vec::with_capacity(periods);
    let mut gain = Vec::with_capacity(periods);
    for t in 0..periods {
        let s = diurnal(grid.hour_of(t));
        lower.push(we * 0.10 + wv * (0.15 + 0.05 * s));
        upper.push(we * 0.90 + wv * (0.85 + 0.05 * s));
        gain.push(wv * VES_GAIN_AMPLITUDE * s);
    }
    let ges = GesParams {
        capacity_kwh: cap,
        eta_c: we * ES_ETA + wv * VES_ETA,
        eta_d: we * ES_ETA + wv * VES_ETA,
        self_discharge: we * ES_LEAK + wv * VES_LEAK,
        baseline_soc_gain: gain,
        cost_charge: we * es_cost + wv * ves_cost,
        cost_discharge: we * es_cost + wv * ves_cost,
        p_charge_max: pdist.clone(),
        p_discharge_max: pdist,
        soc_upper: BoundDistribution { mean: upper, std: vec![0.01; periods], family: DistributionFamily::Normal },
        soc_lower: BoundDistribution { mean: lower, std: vec![0.01; periods], family: DistributionFamily::Normal },
        confidence: 0.05,
    };
    let ratings = Ratings { load_kw: load, pv_kw: pv, wind_kw: wind, es_kwh, es_duration_h: es_h, ves_kwh, ves_duration_h: ves_h };
    let spec = MicrogridSpec {
        id: format!("MG{}", k + 1),
        load_kw: Vec::new(),
        res_kw: Vec::new(),
        reactive_load_kvar: Vec::new(),
        ges,
        dg: DgParams { cost_per_kwh: dg_cost, p_min: 0.0, p_max: dg_max, marginal_band: 0.005 },
        bus_index: 1,
        network: Some(network::template(TOPOLOGIES[k % TOPOLOGIES.len()], load)?),
        soc_init: 0.5,
        ratings,
    };
    let spec = synth_profiles(profile_seed(seed, k), &spec, grid);
    spec.validate(grid)?;
    Ok(spec)
}

fn profile_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k as u64)
}

/// Load and RES sequences for `days` days drawn from the ratings.
pub fn profile_days(seed: u64, ratings: &Ratings, periods: usize, days: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rng = rng_for(seed, 0);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let dt = 24.0 / periods as f64;
    let n = periods * days;
    let mut load = Vec::with_capacity(n);
    let mut res = Vec::with_capacity(n);
    let (mut ar, mut cf) = (0.0, rng.gen_range(0.2..0.5));
    let bump = |h: f64, c: f64, w: f64| (-0.5 * ((h - c) / w).powi(2)).exp();
    for _ in 0..days {
        let level = rng.gen_range(0.85..1.05);
        let clear = rng.gen_range(0.4..1.0);
        let wind_mean = rng.gen_range(0.2..0.5);
        for t in 0..periods {
            let h = t as f64 * dt;
            ar = 0.9 * ar + 0.02 * noise.sample(&mut rng);
            let base = 0.35 + 0.30 * bump(h, 8.0, 1.8) + 0.40 * bump(h, 19.5, 2.2);
            load.push((ratings.load_kw * (level * base + ar)).clamp(0.0, ratings.load_kw));

            let sun = if h > 6.0 && h < 18.0 { (PI * (h - 6.0) / 12.0).sin().powf(1.3) } else { 0.0 };
            let pv = (ratings.pv_kw * clear * sun * (1.0 + 0.05 * noise.sample(&mut rng))).clamp(0.0, ratings.pv_kw);
            cf = (cf + 0.02 * (wind_mean - cf) + 0.02 * noise.sample(&mut rng)).clamp(0.0, 1.0);
            let wind = ratings.wind_kw * cf;
            res.push((pv + wind).clamp(0.0, ratings.pv_kw + ratings.wind_kw));
        }
    }
    (load, res)
}

/// Fill the load, RES and reactive sequences of `spec` for the whole horizon.
pub fn synth_profiles(seed: u64, spec: &MicrogridSpec, grid: &IntervalGrid) -> MicrogridSpec {
    let (load, res) = profile_days(seed, &spec.ratings, grid.periods_per_day, grid.horizon_days);
    let q = reactive_ratio();
    MicrogridSpec { reactive_load_kvar: load.iter().map(|l| l * q).collect(), load_kw: load, res_kw: res, ..spec.clone() }
}

/// Community price as a function of aggregate net load: the proxy market used to label
/// synthetic history days. Tight supply pushes the price towards ToU, surplus towards FiT.
pub fn proxy_price(fit: f64, tou: f64, community_net_load: f64, community_capacity: f64, noise: f64) -> f64 {
    let x = 3.0 * community_net_load / community_capacity.max(1e-9);
    (fit + (tou - fit) * (0.5 + 0.5 * x.tanh()) + noise).clamp(fit, tou)
}

/// The fleet re-profiled over `days` separate history days (same devices, different weather).
pub fn history_fleet(seed: u64, fleet: &[MicrogridSpec], periods: usize, days: usize) -> Result<Vec<MicrogridSpec>> {
    let grid = IntervalGrid::new(periods, days)?;
    let q = reactive_ratio();
    fleet
        .iter()
        .enumerate()
        .map(|(k, mg)| {
            let (load, res) = profile_days(profile_seed(seed ^ 0x5E_ED0F_4157, k), &mg.ratings, periods, days);
            let spec = MicrogridSpec { reactive_load_kvar: load.iter().map(|l| l * q).collect(), load_kw: load, res_kw: res, ..mg.clone() };
            spec.validate(&grid)?;
            Ok(spec)
        })
        .collect()
}

/// `days` synthetic history days per microgrid, each labelled with the proxy community price.
pub fn synth_history(seed: u64, fleet: &[MicrogridSpec], tariff: &PriceSchedule, periods: usize, days: usize) -> Result<Vec<Vec<ScenarioDay>>> {
    let past = history_fleet(seed, fleet, periods, days)?;
    let capacity: f64 = fleet.iter().map(|m| m.ratings.load_kw).sum();
    let mut rng = rng_for(seed, 0xA11CE);
    let noise = Normal::new(0.0, 0.003).expect("valid normal");
    let mut prices = Vec::with_capacity(periods * days);
    for i in 0..periods * days {
        let net: f64 = past.iter().map(|m| m.net_load(i)).sum();
        let (fit, tou) = tariff.corridor(i % periods);
        prices.push(proxy_price(fit, tou, net, capacity, noise.sample(&mut rng)));
    }
    past.iter()
        .map(|mg| (0..days).map(|d| ScenarioDay::new(mg.day_net_load(d, periods), prices[d * periods..(d + 1) * periods].to_vec())).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fleet_is_deterministic_and_in_range() {
        let grid = IntervalGrid::five_minute(1);
        let a = generate_fleet(1, 20, &grid).unwrap();
        let b = generate_fleet(1, 20, &grid).unwrap();
        assert_eq!(a, b);
        for mg in &a {
            assert!((0.12..=0.19).contains(&mg.dg.cost_per_kwh));
            assert!((2.0..=4.0).contains(&mg.ratings.es_duration_h));
            assert!((2.0..=3.0).contains(&mg.ratings.ves_duration_h));
            assert!((0.012..=0.025).contains(&mg.ges.cost_charge));
            assert!((100.0..=250.0).contains(&mg.dg.p_max));
        }
        let buses: Vec<usize> = a.iter().take(3).map(|m| m.network.as_ref().unwrap().bus_count).collect();
        assert_eq!(buses, vec![12, 15, 33]);
    }

    #[test]
    fn pv_is_dark_at_night_and_within_ratings() {
        let r = Ratings { load_kw: 500.0, pv_kw: 300.0, wind_kw: 0.0, ..Default::default() };
        let (load, res) = profile_days(3, &r, 288, 2);
        for (i, v) in res.iter().enumerate() {
            let h = (i % 288) as f64 / 12.0;
            if h <= 6.0 || h >= 18.0 {
                assert_eq!(*v, 0.0);
            }
            assert!((0.0..=300.0).contains(v));
        }
        assert!(load.iter().all(|l| (0.0..=500.0).contains(l)));
        assert_eq!(profile_days(3, &r, 288, 2), (load, res));
    }

    #[test]
    fn ves_gain_is_zero_mean_over_a_day() {
        let grid = IntervalGrid::five_minute(1);
        let mg = &generate_fleet(4, 1, &grid).unwrap()[0];
        let s: f64 = mg.ges.baseline_soc_gain.iter().sum();
        assert!(s.abs() < 1e-12);
    }

    #[test]
    fn proxy_price_stays_in_corridor() {
        assert_eq!(proxy_price(0.04, 0.2, 1e9, 1.0, 0.0), 0.2);
        assert_eq!(proxy_price(0.04, 0.2, -1e9, 1.0, 0.0), 0.04);
        assert!((proxy_price(0.04, 0.2, 0.0, 1.0, 0.0) - 0.12).abs() < 1e-12);
    }
}
