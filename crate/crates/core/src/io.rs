//! File formats: scenario CSV, tariff blocks, fleet TOML.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{IntervalGrid, MicrogridSpec, PriceSchedule, ScenarioDay};

#[derive(Debug, Serialize, Deserialize)]
struct ScenarioRow {
    day: usize,
    interval: usize,
    net_load_kw: f64,
    price_per_kwh: f64,
}

/// Parse scenario CSV text (`day,interval,net_load_kw,price_per_kwh`).
pub fn parse_scenarios(text: &str, grid: &IntervalGrid) -> Result<Vec<ScenarioDay>> {
    let t_len = grid.periods_per_day;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| Error::Row { row: 1, reason: e.to_string() })?.clone();
    let expected = ["day", "interval", "net_load_kw", "price_per_kwh"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Row { row: 1, reason: format!("header must be {}", expected.join(",")) });
    }
    let mut days: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for (i, rec) in rdr.deserialize::<ScenarioRow>().enumerate() {
        let row = i + 2;
        let r = rec.map_err(|e| Error::Row { row, reason: e.to_string() })?;
        if !(r.price_per_kwh >= 0.0) || !r.price_per_kwh.is_finite() {
            return Err(Error::Row { row, reason: format!("negative or non-finite price {}", r.price_per_kwh) });
        }
        if !r.net_load_kw.is_finite() {
            return Err(Error::Row { row, reason: "non-finite net load".into() });
        }
        if r.interval >= t_len {
            return Err(Error::Row { row, reason: format!("interval {} outside [0, {})", r.interval, t_len) });
        }
        if r.day == days.len() && r.interval == 0 {
            if let Some(prev) = days.last() {
                if prev.0.len() != t_len {
                    return Err(Error::Row { row, reason: format!("day {} has {} intervals, expected {t_len}", r.day - 1, prev.0.len()) });
                }
            }
            days.push((Vec::with_capacity(t_len), Vec::with_capacity(t_len)));
        }
        let n_days = days.len();
        match days.last_mut() {
            Some(d) if r.day + 1 == n_days && d.0.len() == r.interval => {
                d.0.push(r.net_load_kw);
                d.1.push(r.price_per_kwh);
            }
            _ => {
                return Err(Error::Row { row, reason: format!("rows must be sorted by (day, interval); got day {} interval {}", r.day, r.interval) })
            }
        }
    }
    if let Some(last) = days.last() {
        if last.0.len() != t_len {
            return Err(Error::Data(format!("length mismatch: final day has {} intervals, expected {t_len}", last.0.len())));
        }
    }
    days.into_iter().map(|(n, p)| ScenarioDay::new(n, p)).collect()
}

pub fn load_scenarios(path: &Path, grid: &IntervalGrid) -> Result<Vec<ScenarioDay>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scenarios(&text, grid)
}

pub fn scenarios_to_csv(days: &[ScenarioDay]) -> Result<String> {
    // the header comes from ScenarioRow's field names on the first serialize
    let mut w = csv::Writer::from_writer(Vec::new());
    for (d, day) in days.iter().enumerate() {
        for t in 0..day.periods() {
            w.serialize(ScenarioRow { day: d, interval: t, net_load_kw: day.net_load_kw[t], price_per_kwh: day.price[t] })
                .map_err(|e| Error::data(e.to_string()))?;
        }
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::data(e.to_string()))?).map_err(|e| Error::data(e.to_string()))
}

pub fn write_scenarios(path: &Path, days: &[ScenarioDay]) -> Result<()> {
    fs::write(path, scenarios_to_csv(days)?).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Deserialize)]
struct TariffBlock {
    start: f64,
    end: f64,
    tou: f64,
    fit: f64,
}

#[derive(Debug, Deserialize)]
struct TariffFile {
    block: Vec<TariffBlock>,
}

/// Tariff from hour blocks; every interval must be covered by exactly one block.
pub fn parse_tariff(text: &str, periods: usize) -> Result<PriceSchedule> {
    let f: TariffFile = toml::from_str(text).map_err(|e| Error::config(format!("tariff: {e}")))?;
    let dt = 24.0 / periods as f64;
    let mut tou = Vec::with_capacity(periods);
    let mut fit = Vec::with_capacity(periods);
    for t in 0..periods {
        let h = t as f64 * dt;
        let hits: Vec<&TariffBlock> = f.block.iter().filter(|b| h >= b.start - 1e-9 && h < b.end - 1e-9).collect();
        match hits.as_slice() {
            [b] => {
                tou.push(b.tou);
                fit.push(b.fit);
            }
            [] => return Err(Error::config(format!("tariff: hour {h} not covered by any block"))),
            _ => return Err(Error::config(format!("tariff: hour {h} covered by overlapping blocks"))),
        }
    }
    PriceSchedule::new(tou, fit)
}

pub fn default_tariff(periods: usize) -> PriceSchedule {
    parse_tariff(include_str!("../data/tariff.toml"), periods).expect("bundled tariff is valid")
}

pub fn load_tariff(path: &Path, periods: usize) -> Result<PriceSchedule> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tariff(&text, periods)
}

/// Fleet file: `[[microgrid]]` tables holding every `MicrogridSpec` field. Profile sequences
/// (`load_kw`, `res_kw`, `reactive_load_kvar`) may be left empty and synthesized from ratings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetFile {
    pub microgrid: Vec<MicrogridSpec>,
}

pub fn fleet_to_toml(fleet: &[MicrogridSpec]) -> Result<String> {
    toml::to_string(&FleetFile { microgrid: fleet.to_vec() }).map_err(|e| Error::data(format!("fleet: {e}")))
}

pub fn parse_fleet(text: &str) -> Result<Vec<MicrogridSpec>> {
    let f: FleetFile = toml::from_str(text).map_err(|e| Error::config(format!("fleet: {e}")))?;
    Ok(f.microgrid)
}

pub fn load_fleet(path: &Path) -> Result<Vec<MicrogridSpec>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_fleet(&text)
}

pub fn write_fleet(path: &Path, fleet: &[MicrogridSpec]) -> Result<()> {
    fs::write(path, fleet_to_toml(fleet)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_of(days: usize, per_day: usize, t: usize) -> String {
        let mut s = String::from("day,interval,net_load_kw,price_per_kwh\n");
        for d in 0..days {
            for i in 0..per_day {
                s.push_str(&format!("{d},{i},{},{}\n", (d * t + i) as f64 * 0.5 - 10.0, 0.1));
            }
        }
        s
    }

    #[test]
    fn two_days_parse() {
        let g = IntervalGrid::five_minute(2);
        let days = parse_scenarios(&csv_of(2, 288, 288), &g).unwrap();
        assert_eq!(days.len(), 2);
        assert!((days[1].day_average_price - 0.1).abs() < 1e-12);
    }

    #[test]
    fn short_day_is_rejected() {
        let g = IntervalGrid::five_minute(1);
        let e = parse_scenarios(&csv_of(1, 287, 288), &g).unwrap_err();
        assert!(e.to_string().contains("length mismatch"), "{e}");
    }

    #[test]
    fn negative_price_names_row() {
        let g = IntervalGrid::new(2, 1).unwrap();
        let text = "day,interval,net_load_kw,price_per_kwh\n0,0,1.0,0.1\n0,1,1.0,-0.2\n";
        match parse_scenarios(text, &g) {
            Err(Error::Row { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unsorted_rows_rejected() {
        let g = IntervalGrid::new(2, 1).unwrap();
        let text = "day,interval,net_load_kw,price_per_kwh\n0,1,1.0,0.1\n0,0,1.0,0.2\n";
        assert!(parse_scenarios(text, &g).is_err());
    }

    #[test]
    fn tariff_blocks_cover_the_day() {
        let t = default_tariff(288);
        assert_eq!(t.periods(), 288);
        assert_eq!(t.corridor(0), (0.04, 0.09));
        assert_eq!(t.corridor(18 * 12), (0.04, 0.22));
        let gap = "[[block]]\nstart = 0.0\nend = 12.0\ntou = 0.1\nfit = 0.05\n";
        assert!(parse_tariff(gap, 24).is_err());
    }

    #[test]
    fn fleet_round_trips_through_toml() {
        let grid = IntervalGrid::new(24, 1).unwrap();
        let fleet = crate::synth::generate_fleet(3, 3, &grid).unwrap();
        let back = parse_fleet(&fleet_to_toml(&fleet).unwrap()).unwrap();
        assert_eq!(fleet, back);
    }
}
