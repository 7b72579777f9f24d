//! Deterministic equivalents of the chance-constrained GES limits.
//!
//! A limit `X = mu + sd * Z` must hold with probability `1 - eps`. Upper limits tighten to
//! `mu - q * sd` and the lower SoC limit to `mu + q * sd`, where `q` is the `(1 - eps)`
//! quantile of the standardized family `Z`, estimated from seeded Monte Carlo samples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{BoundDistribution, DeterministicBounds, DistributionFamily, GesParams};

pub const DEFAULT_SAMPLES: usize = 100_000;
const MIN_SAMPLES: usize = 1000;

/// Linear-interpolated order statistic (type 7) of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Sorted standardized draws of `family`. Symmetric families use antithetic pairs so the
/// median is exactly zero.
pub fn standardized_samples(family: &DistributionFamily, samples: usize, seed: u64) -> Result<Vec<f64>> {
    if samples < MIN_SAMPLES {
        return Err(Error::config(format!("chance bounds need at least {MIN_SAMPLES} samples, got {samples}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(samples);
    let antithetic = |out: &mut Vec<f64>, draw: &mut dyn FnMut() -> f64| {
        while out.len() + 1 < samples {
            let z = draw();
            out.push(z);
            out.push(-z);
        }
        if out.len() < samples {
            out.push(0.0);
        }
    };
    match family {
        DistributionFamily::Normal => {
            antithetic(&mut out, &mut || rng.sample::<f64, _>(StandardNormal));
        }
        DistributionFamily::Beta { alpha, beta } => {
            let d = Beta::new(*alpha, *beta).map_err(|e| Error::config(format!("beta family: {e}")))?;
            let (a, b) = (*alpha, *beta);
            let mean = a / (a + b);
            let sd = (a * b / ((a + b) * (a + b) * (a + b + 1.0))).sqrt();
            if (a - b).abs() < 1e-15 {
                antithetic(&mut out, &mut || (d.sample(&mut rng) - mean) / sd);
            } else {
                out.extend((0..samples).map(|_| (d.sample(&mut rng) - mean) / sd));
            }
        }
        DistributionFamily::Empirical { samples: data } => {
            if data.len() < 2 {
                return Err(Error::config("empirical family needs at least two samples"));
            }
            let n = data.len() as f64;
            let mean = data.iter().sum::<f64>() / n;
            let sd = (data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            if !(sd > 0.0) {
                return Err(Error::config("empirical family has zero spread"));
            }
            out.extend((0..samples).map(|_| (data[rng.gen_range(0..data.len())] - mean) / sd));
        }
    }
    out.sort_by(f64::total_cmp);
    Ok(out)
}

/// Monte Carlo estimate of the `p` quantile of the standardized family.
pub fn standardized_quantile(family: &DistributionFamily, p: f64, samples: usize, seed: u64) -> Result<f64> {
    Ok(quantile_sorted(&standardized_samples(family, samples, seed)?, p))
}

fn tighten(dist: &BoundDistribution, q: f64, upper: bool) -> Vec<f64> {
    dist.mean
        .iter()
        .zip(&dist.std)
        .map(|(m, s)| if upper { m - q * s } else { m + q * s })
        .collect()
}

pub fn reformulate_bounds(ges: &GesParams, samples: usize, seed: u64) -> Result<DeterministicBounds> {
    let eps = ges.confidence;
    if !(eps > 0.0 && eps <= 0.5) {
        return Err(Error::config(format!("confidence {eps} outside (0, 0.5]")));
    }
    let q = |d: &BoundDistribution, k: u64| standardized_quantile(&d.family, 1.0 - eps, samples, seed.wrapping_add(k));
    let clamp0 = |v: Vec<f64>| v.into_iter().map(|x| x.max(0.0)).collect::<Vec<_>>();
    let b = DeterministicBounds {
        p_charge_max: clamp0(tighten(&ges.p_charge_max, q(&ges.p_charge_max, 0)?, true)),
        p_discharge_max: clamp0(tighten(&ges.p_discharge_max, q(&ges.p_discharge_max, 1)?, true)),
        soc_max: tighten(&ges.soc_upper, q(&ges.soc_upper, 2)?, true),
        soc_min: tighten(&ges.soc_lower, q(&ges.soc_lower, 3)?, false),
    };
    b.validate()?;
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn ges_with(mean: f64, sd: f64, eps: f64) -> GesParams {
        let d = BoundDistribution { mean: vec![mean; 3], std: vec![sd; 3], family: DistributionFamily::Normal };
        GesParams {
            capacity_kwh: 100.0,
            eta_c: 0.95,
            eta_d: 0.95,
            self_discharge: 0.0,
            baseline_soc_gain: vec![0.0; 3],
            cost_charge: 0.01,
            cost_discharge: 0.01,
            p_charge_max: d.clone(),
            p_discharge_max: d,
            soc_upper: BoundDistribution { mean: vec![0.9; 3], std: vec![0.01; 3], family: DistributionFamily::Normal },
            soc_lower: BoundDistribution { mean: vec![0.1; 3], std: vec![0.01; 3], family: DistributionFamily::Normal },
            confidence: eps,
        }
    }

    #[test]
    fn normal_bound_matches_closed_form_quantile() {
        let ges = ges_with(100.0, 10.0, 0.05);
        let b = reformulate_bounds(&ges, DEFAULT_SAMPLES, 7).unwrap();
        let z = Normal::new(0.0, 1.0).unwrap().inverse_cdf(0.95);
        let exact = 100.0 - z * 10.0;
        assert!((exact - 83.55).abs() < 0.01);
        assert!((b.p_charge_max[0] - exact).abs() <= 0.3, "{} vs {exact}", b.p_charge_max[0]);
        assert!((b.soc_min[0] - (0.1 + z * 0.01)).abs() < 0.003);
    }

    #[test]
    fn zero_spread_collapses_to_means() {
        let ges = ges_with(50.0, 0.0, 0.05);
        let b = reformulate_bounds(&ges, 2000, 1).unwrap();
        assert_eq!(b.p_discharge_max, vec![50.0; 3]);
    }

    #[test]
    fn half_risk_on_symmetric_family_is_the_mean() {
        let ges = ges_with(40.0, 5.0, 0.5);
        let b = reformulate_bounds(&ges, 2001, 3).unwrap();
        assert_eq!(b.p_charge_max, vec![40.0; 3]);
        let q = standardized_quantile(&DistributionFamily::Beta { alpha: 2.0, beta: 2.0 }, 0.5, 4000, 5).unwrap();
        assert_eq!(q, 0.0);
    }

    #[test]
    fn negative_power_bound_is_clamped() {
        let ges = ges_with(1.0, 10.0, 0.05);
        let b = reformulate_bounds(&ges, 2000, 1).unwrap();
        assert_eq!(b.p_charge_max, vec![0.0; 3]);
    }

    #[test]
    fn too_few_samples_rejected() {
        assert!(reformulate_bounds(&ges_with(1.0, 1.0, 0.05), 999, 0).is_err());
    }

    #[test]
    fn crossing_soc_bounds_are_a_config_error() {
        let mut ges = ges_with(1.0, 1.0, 0.01);
        ges.soc_upper.std = vec![0.3; 3];
        ges.soc_lower.std = vec![0.3; 3];
        assert!(matches!(reformulate_bounds(&ges, 2000, 0), Err(Error::Config(_))));
    }

    #[test]
    fn beta_quantile_matches_statrs() {
        use statrs::distribution::Beta as SBeta;
        let (a, b) = (2.0, 5.0);
        let q = standardized_quantile(&DistributionFamily::Beta { alpha: a, beta: b }, 0.95, DEFAULT_SAMPLES, 11).unwrap();
        let mean = a / (a + b);
        let sd = (a * b / ((a + b) * (a + b) * (a + b + 1.0))).sqrt();
        let exact = (SBeta::new(a, b).unwrap().inverse_cdf(0.95) - mean) / sd;
        assert!((q - exact).abs() < 0.02, "{q} vs {exact}");
    }

    #[test]
    fn empirical_quantile_tracks_data() {
        let data: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let q = standardized_quantile(&DistributionFamily::Empirical { samples: data }, 0.5, 50_000, 2).unwrap();
        assert!(q.abs() < 0.03);
    }
}
