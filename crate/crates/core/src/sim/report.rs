//! Report files: `trace.csv`, `metrics.json`, `equilibria.csv`, `timing.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::Metrics;
use crate::auction::Boundary;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct AgentRecord {
    pub p_ex_kw: f64,
    /// SoC at the end of the interval.
    pub soc: f64,
    pub cost: f64,
    pub p_dg_kw: f64,
    pub p_charge_kw: f64,
    pub p_discharge_kw: f64,
    /// Reference signals, kept with verbose traces.
    pub irt: Option<f64>,
    pub rpb: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRecord {
    pub day: usize,
    pub interval: usize,
    pub p2p_price: f64,
    pub p_grid_kw: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub boundary: Boundary,
    pub agents: Vec<AgentRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumRow {
    pub day: usize,
    pub interval: usize,
    pub iter: usize,
    pub price: f64,
    pub imbalance_kw: f64,
    pub sigma: f64,
}

/// Wall-clock figures; kept apart from the metrics so those stay reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Timing {
    pub total_wall_s: f64,
    pub mean_clearing_wall_s: f64,
    pub max_clearing_wall_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub trace: Vec<IntervalRecord>,
    pub metrics: Metrics,
    pub equilibria: Vec<EquilibriumRow>,
    pub timing: Timing,
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::data(format!("{}: {e}", path.display()))
}

fn f(x: f64) -> String {
    x.to_string()
}

pub fn trace_header(n_agents: usize, signals: bool) -> Vec<String> {
    let mut h: Vec<String> = ["day", "interval", "p2p_price", "p_grid_kw", "iterations"].iter().map(|s| s.to_string()).collect();
    for k in 1..=n_agents {
        h.extend([format!("mg{k}_pex_kw"), format!("mg{k}_soc"), format!("mg{k}_cost")]);
    }
    h.extend(["boundary".to_string(), "evaluations".to_string()]);
    for k in 1..=n_agents {
        h.extend([format!("mg{k}_pdg_kw"), format!("mg{k}_pch_kw"), format!("mg{k}_pdis_kw")]);
    }
    if signals {
        for k in 1..=n_agents {
            h.extend([format!("mg{k}_irt"), format!("mg{k}_rpb")]);
        }
    }
    h
}

pub fn write_trace(path: &Path, trace: &[IntervalRecord], n_agents: usize) -> Result<()> {
    let signals = trace.iter().any(|r| r.agents.iter().any(|a| a.irt.is_some() || a.rpb.is_some()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(trace_header(n_agents, signals)).map_err(csv_err(path))?;
    let opt = |v: Option<f64>| v.map(f).unwrap_or_default();
    for r in trace {
        let mut row = vec![r.day.to_string(), r.interval.to_string(), f(r.p2p_price), f(r.p_grid_kw), r.iterations.to_string()];
        for a in &r.agents {
            row.extend([f(a.p_ex_kw), f(a.soc), f(a.cost)]);
        }
        row.extend([r.boundary.to_string(), r.evaluations.to_string()]);
        for a in &r.agents {
            row.extend([f(a.p_dg_kw), f(a.p_charge_kw), f(a.p_discharge_kw)]);
        }
        if signals {
            for a in &r.agents {
                row.extend([opt(a.irt), opt(a.rpb)]);
            }
        }
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trace(path: &Path) -> Result<Vec<IntervalRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = rdr.headers().map_err(csv_err(path))?.clone();
    let per_agent = header.iter().filter(|h| h.ends_with("_pex_kw")).count();
    let signals = header.iter().any(|h| h.ends_with("_irt"));
    if header.iter().collect::<Vec<_>>() != trace_header(per_agent, signals) {
        return Err(Error::data(format!("{}: unexpected trace header", path.display())));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let bad = |what: &str| Error::Row { row: i + 2, reason: format!("bad {what}") };
        let num = |j: usize| rec.get(j).and_then(|s| s.parse::<f64>().ok()).ok_or_else(|| bad(&header[j]));
        let int = |j: usize| rec.get(j).and_then(|s| s.parse::<usize>().ok()).ok_or_else(|| bad(&header[j]));
        let opt = |j: usize| -> Result<Option<f64>> {
            match rec.get(j) {
                Some("") => Ok(None),
                Some(s) => s.parse().map(Some).map_err(|_| bad(&header[j])),
                None => Err(bad("column count")),
            }
        };
        let b = 5 + 3 * per_agent;
        let x = b + 2;
        let s = x + 3 * per_agent;
        let mut agents = Vec::with_capacity(per_agent);
        for k in 0..per_agent {
            let (irt, rpb) = if signals { (opt(s + 2 * k)?, opt(s + 2 * k + 1)?) } else { (None, None) };
            agents.push(AgentRecord {
                p_ex_kw: num(5 + 3 * k)?,
                soc: num(6 + 3 * k)?,
                cost: num(7 + 3 * k)?,
                p_dg_kw: num(x + 3 * k)?,
                p_charge_kw: num(x + 3 * k + 1)?,
                p_discharge_kw: num(x + 3 * k + 2)?,
                irt,
                rpb,
            });
        }
        out.push(IntervalRecord {
            day: int(0)?,
            interval: int(1)?,
            p2p_price: num(2)?,
            p_grid_kw: num(3)?,
            iterations: int(4)?,
            boundary: rec.get(b).and_then(|s| s.parse().ok()).ok_or_else(|| bad("boundary"))?,
            evaluations: int(b + 1)?,
            agents,
        });
    }
    Ok(out)
}

fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    s.push('\n');
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

pub fn write_report(report: &SimulationReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_trace(&dir.join("trace.csv"), &report.trace, report.metrics.agents.len())?;
    write_json(&dir.join("metrics.json"), &report.metrics)?;
    write_rows(&dir.join("equilibria.csv"), &["day", "interval", "iter", "price", "imbalance_kw", "sigma"], &report.equilibria)?;
    write_json(&dir.join("timing.json"), &report.timing)
}

pub fn read_report(dir: &Path) -> Result<SimulationReport> {
    let eq_path = dir.join("equilibria.csv");
    let mut rdr = csv::Reader::from_path(&eq_path).map_err(csv_err(&eq_path))?;
    let equilibria = rdr.deserialize().collect::<std::result::Result<Vec<EquilibriumRow>, _>>().map_err(csv_err(&eq_path))?;
    Ok(SimulationReport {
        trace: read_trace(&dir.join("trace.csv"))?,
        metrics: read_json(&dir.join("metrics.json"))?,
        equilibria,
        timing: read_json(&dir.join("timing.json"))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(days: usize, agents: usize, periods: usize) -> SimulationReport {
        let mut trace = Vec::new();
        for d in 0..days {
            for t in 0..periods {
                let x = (d * periods + t) as f64;
                trace.push(IntervalRecord {
                    day: d,
                    interval: t,
                    p2p_price: 0.1 + x * 1e-7,
                    p_grid_kw: -x / 3.0,
                    iterations: t % 4,
                    evaluations: t % 4 + 1,
                    boundary: [Boundary::Interior, Boundary::Fit, Boundary::Tou][t % 3],
                    agents: (0..agents)
                        .map(|k| AgentRecord {
                            p_ex_kw: x / 7.0 + k as f64,
                            soc: 0.5 + 1e-3 * (x / 11.0).sin(),
                            cost: x * 0.013,
                            p_dg_kw: 1.0 / 3.0,
                            p_charge_kw: 0.0,
                            p_discharge_kw: 2.0e-17,
                            irt: None,
                            rpb: None,
                        })
                        .collect(),
                });
            }
        }
        let ids: Vec<String> = (1..=agents).map(|k| format!("MG{k}")).collect();
        let metrics = Metrics { agents: ids, intervals: trace.len(), total_cost: 0.1 + 0.2, optimality_gap_pct: Some(1.0 / 3.0), ..Default::default() };
        SimulationReport {
            trace,
            metrics,
            equilibria: vec![EquilibriumRow { day: 0, interval: 1, iter: 2, price: 0.12345678901234, imbalance_kw: -3.3, sigma: 5e-6 }],
            timing: Timing { total_wall_s: 1.5, ..Default::default() },
        }
    }

    #[test]
    fn report_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let r = report(1, 2, 288);
        write_report(&r, dir.path()).unwrap();
        assert_eq!(read_report(dir.path()).unwrap(), r);
        let text = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
        assert_eq!(text.lines().count(), 289);
        assert!(text.starts_with("day,interval,p2p_price,p_grid_kw,iterations,mg1_pex_kw,mg1_soc,mg1_cost,mg2_pex_kw"));
    }

    #[test]
    fn signals_round_trip_when_present() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = report(1, 1, 4);
        r.trace[2].agents[0].irt = Some(0.61);
        r.trace[2].agents[0].rpb = Some(0.11);
        write_report(&r, dir.path()).unwrap();
        assert_eq!(read_report(dir.path()).unwrap(), r);
    }

    #[test]
    fn empty_trace_gives_header_only_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = report(0, 2, 0);
        r.equilibria.clear();
        write_report(&r, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert_eq!(fs::read_to_string(dir.path().join("equilibria.csv")).unwrap().lines().count(), 1);
        assert_eq!(read_report(dir.path()).unwrap(), r);
    }

    #[test]
    fn unwritable_dir_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain");
        fs::write(&file, "x").unwrap();
        let e = write_report(&report(1, 1, 2), &file.join("sub")).unwrap_err();
        assert!(e.to_string().contains("plain"), "{e}");
    }
}
