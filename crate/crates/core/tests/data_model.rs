use mgtrade::io::{fleet_to_toml, parse_fleet, parse_scenarios, scenarios_to_csv};
use mgtrade::model::{IntervalGrid, ScenarioDay};
use mgtrade::synth::generate_fleet;
use proptest::prelude::*;

#[test]
fn generated_fleets_satisfy_every_invariant_over_1000_seeds() {
    let grid = IntervalGrid::new(24, 2).unwrap();
    for seed in 0..1000u64 {
        let n = 1 + (seed % 5) as usize;
        let fleet = generate_fleet(seed, n, &grid).unwrap();
        assert_eq!(fleet.len(), n);
        for mg in &fleet {
            mg.validate(&grid).unwrap_or_else(|e| panic!("seed {seed}, {}: {e}", mg.id));
            for seq in [&mg.load_kw, &mg.res_kw, &mg.reactive_load_kvar] {
                assert_eq!(seq.len(), grid.len(), "seed {seed}");
            }
            assert!(mg.load_kw.iter().chain(&mg.res_kw).all(|v| v.is_finite() && *v >= 0.0));
        }
    }
}

#[test]
fn fleets_are_reproducible_from_the_seed() {
    let grid = IntervalGrid::five_minute(1);
    assert_eq!(generate_fleet(42, 6, &grid).unwrap(), generate_fleet(42, 6, &grid).unwrap());
    assert_ne!(generate_fleet(42, 6, &grid).unwrap(), generate_fleet(43, 6, &grid).unwrap());
}

fn days_strategy(periods: usize) -> impl Strategy<Value = Vec<ScenarioDay>> {
    let day = (prop::collection::vec(-800.0..800.0f64, periods), prop::collection::vec(0.0..1.0f64, periods))
        .prop_map(|(l, p)| ScenarioDay::new(l, p).unwrap());
    prop::collection::vec(day, 1..5)
}

proptest! {
    #[test]
    fn scenario_csv_round_trips(days in days_strategy(12)) {
        let grid = IntervalGrid::new(12, 1).unwrap();
        let text = scenarios_to_csv(&days).unwrap();
        let back = parse_scenarios(&text, &grid).unwrap();
        prop_assert_eq!(&back, &days);
        prop_assert_eq!(scenarios_to_csv(&back).unwrap(), text);
    }

    #[test]
    fn fleet_toml_round_trips(seed in 0u64..10_000, n in 1usize..4) {
        let grid = IntervalGrid::new(24, 1).unwrap();
        let fleet = generate_fleet(seed, n, &grid).unwrap();
        prop_assert_eq!(parse_fleet(&fleet_to_toml(&fleet).unwrap()).unwrap(), fleet);
    }
}
