//! Linearized branch-flow (LinDistFlow) model for radial feeders.
//!
//! Injections are per bus, positive into the network. Branch flows run from the parent
//! (substation side) to the child and equal the net withdrawal of the child's subtree.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Branch, MicrogridSpec, NetworkSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    /// Active flow per branch, kW, in the order of `NetworkSpec::branches`.
    pub p_branch: Vec<f64>,
    /// Reactive flow per branch, kvar.
    pub q_branch: Vec<f64>,
    /// Bus voltage magnitudes, per unit.
    pub v_bus: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoltageViolation {
    pub bus: usize,
    /// Signed deviation `v - 1` in per unit.
    pub deviation: f64,
}

/// Rooted view of a radial feeder.
#[derive(Debug, Clone)]
pub struct Tree {
    /// Parent bus of each bus (`usize::MAX` at the root).
    pub parent: Vec<usize>,
    /// Branch feeding each bus from its parent.
    pub feeder: Vec<usize>,
    /// Whether each branch is listed child-to-parent.
    pub reversed: Vec<bool>,
    /// Buses in breadth-first order from the root.
    pub order: Vec<usize>,
}

pub fn validate(net: &NetworkSpec) -> Result<()> {
    tree(net).map(|_| ())
}

pub fn tree(net: &NetworkSpec) -> Result<Tree> {
    let n = net.bus_count;
    if n == 0 {
        return Err(Error::config("network: no buses"));
    }
    if net.branches.len() != n - 1 {
        return Err(Error::config(format!(
            "network: {} branches cannot form a spanning tree over {n} buses",
            net.branches.len()
        )));
    }
    if !(net.s_base_kw > 0.0 && net.v_substation > 0.0 && net.v_deviation_max >= 0.0) {
        return Err(Error::config("network: s_base_kw and v_substation must be positive"));
    }
    let mut adj = vec![Vec::new(); n];
    for (k, b) in net.branches.iter().enumerate() {
        if b.from >= n || b.to >= n || b.from == b.to {
            return Err(Error::config(format!("network: branch {k} has invalid endpoints")));
        }
        if !(b.r_pu >= 0.0 && b.x_pu >= 0.0) {
            return Err(Error::config(format!("network: branch {k} has negative impedance")));
        }
        adj[b.from].push((b.to, k));
        adj[b.to].push((b.from, k));
    }
    let mut parent = vec![usize::MAX; n];
    let mut feeder = vec![usize::MAX; n];
    let mut reversed = vec![false; net.branches.len()];
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    seen[0] = true;
    order.push(0);
    let mut head = 0;
    while head < order.len() {
        let u = order[head];
        head += 1;
        for &(v, k) in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                parent[v] = u;
                feeder[v] = k;
                reversed[k] = net.branches[k].from != u;
                order.push(v);
            }
        }
    }
    if order.len() != n {
        return Err(Error::config("network: topology is not connected (or contains a loop)"));
    }
    Ok(Tree { parent, feeder, reversed, order })
}

pub fn solve_lindistflow(net: &NetworkSpec, p_inject: &[f64], q_inject: &[f64]) -> Result<FlowState> {
    let tr = tree(net)?;
    let n = net.bus_count;
    if p_inject.len() != n || q_inject.len() != n {
        return Err(Error::data(format!("lindistflow: expected {n} injections per quantity")));
    }
    // Subtree withdrawals, accumulated leaf to root.
    let mut wp: Vec<f64> = p_inject.iter().map(|p| -p).collect();
    let mut wq: Vec<f64> = q_inject.iter().map(|q| -q).collect();
    for &bus in tr.order.iter().rev().take(n - 1) {
        let par = tr.parent[bus];
        wp[par] += wp[bus];
        wq[par] += wq[bus];
    }
    let mut p_branch = vec![0.0; n - 1];
    let mut q_branch = vec![0.0; n - 1];
    let mut v_bus = vec![net.v_substation; n];
    for &bus in tr.order.iter().skip(1) {
        let k = tr.feeder[bus];
        p_branch[k] = wp[bus];
        q_branch[k] = wq[bus];
        let b = &net.branches[k];
        let drop = (b.r_pu * wp[bus] + b.x_pu * wq[bus]) / net.s_base_kw / net.v_substation;
        v_bus[bus] = v_bus[tr.parent[bus]] - drop;
    }
    Ok(FlowState { p_branch, q_branch, v_bus })
}

/// Residuals of the flow-conservation and voltage-drop rows, one per branch and quantity.
pub fn residuals(net: &NetworkSpec, p_inject: &[f64], q_inject: &[f64], s: &FlowState) -> Result<Vec<f64>> {
    let tr = tree(net)?;
    let n = net.bus_count;
    // outflow from each bus to its children
    let mut out_p = vec![0.0; n];
    let mut out_q = vec![0.0; n];
    for &bus in tr.order.iter().skip(1) {
        let k = tr.feeder[bus];
        out_p[tr.parent[bus]] += s.p_branch[k];
        out_q[tr.parent[bus]] += s.q_branch[k];
    }
    let mut r = Vec::with_capacity(3 * (n - 1) + 1);
    r.push(s.v_bus[0] - net.v_substation);
    for &bus in tr.order.iter().skip(1) {
        let k = tr.feeder[bus];
        let b = &net.branches[k];
        // inflow = own withdrawal + flow onward
        r.push((s.p_branch[k] - (-p_inject[bus]) - out_p[bus]) / net.s_base_kw);
        r.push((s.q_branch[k] - (-q_inject[bus]) - out_q[bus]) / net.s_base_kw);
        let drop = (b.r_pu * s.p_branch[k] + b.x_pu * s.q_branch[k]) / net.s_base_kw / net.v_substation;
        r.push(s.v_bus[bus] - s.v_bus[tr.parent[bus]] + drop);
    }
    Ok(r)
}

pub fn check_voltage(net: &NetworkSpec, state: &FlowState) -> Vec<VoltageViolation> {
    state
        .v_bus
        .iter()
        .enumerate()
        .filter(|(_, v)| (**v - 1.0).abs() > net.v_deviation_max + 1e-12)
        .map(|(bus, v)| VoltageViolation { bus, deviation: v - 1.0 })
        .collect()
}

/// Sum of branch resistances and reactances on the shared part of the root paths of `a` and `b`.
fn shared_path(net: &NetworkSpec, tr: &Tree, a: usize, b: usize) -> (f64, f64) {
    let path = |mut u: usize| {
        let mut v = Vec::new();
        while u != 0 {
            v.push(tr.feeder[u]);
            u = tr.parent[u];
        }
        v
    };
    let pa = path(a);
    let pb: std::collections::HashSet<usize> = path(b).into_iter().collect();
    pa.iter()
        .filter(|k| pb.contains(k))
        .fold((0.0, 0.0), |(r, x), &k| (r + net.branches[k].r_pu, x + net.branches[k].x_pu))
}

/// Bus injections of a microgrid at absolute interval `t` with `device_kw` of controllable
/// injection (DG + discharge - charge) at the device bus. Load is shared equally among the
/// non-root buses other than the device bus.
pub fn bus_injections(mg: &MicrogridSpec, net: &NetworkSpec, t: usize, device_kw: f64) -> (Vec<f64>, Vec<f64>) {
    bus_injections_from(net, mg.bus_index, mg.load_kw[t], mg.res_kw[t], mg.reactive_load_kvar[t], device_kw)
}

pub fn bus_injections_from(
    net: &NetworkSpec,
    device_bus: usize,
    load: f64,
    res: f64,
    q_load: f64,
    device_kw: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = net.bus_count;
    let load_buses: Vec<usize> = (1..n).filter(|&b| b != device_bus).collect();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    if load_buses.is_empty() {
        p[device_bus] -= load;
        q[device_bus] -= q_load;
    } else {
        let share = 1.0 / load_buses.len() as f64;
        for &b in &load_buses {
            p[b] -= load * share;
            q[b] -= q_load * share;
        }
    }
    p[device_bus] += res + device_kw;
    (p, q)
}

/// Range of extra device-bus injection (kW) that keeps every bus voltage within limits, given
/// the fixed injections. `None` when no injection satisfies the limits.
pub fn injection_window(net: &NetworkSpec, device_bus: usize, p_fixed: &[f64], q_fixed: &[f64]) -> Result<Option<(f64, f64)>> {
    let tr = tree(net)?;
    let base = solve_lindistflow(net, p_fixed, q_fixed)?;
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    let dev = net.v_deviation_max;
    for bus in 0..net.bus_count {
        let (r, _) = shared_path(net, &tr, bus, device_bus);
        let v0 = base.v_bus[bus];
        // v(u) = v0 + r u / (s_base v_sub)
        let gain = r / net.s_base_kw / net.v_substation;
        if gain > 0.0 {
            lo = lo.max((1.0 - dev - v0) / gain);
            hi = hi.min((1.0 + dev - v0) / gain);
        } else if (v0 - 1.0).abs() > dev + 1e-12 {
            return Ok(None);
        }
    }
    Ok(if lo <= hi { Some((lo, hi)) } else { None })
}

pub fn parse_branch_csv(text: &str) -> Result<Vec<Branch>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<Branch>().enumerate() {
        out.push(rec.map_err(|e| Error::Row { row: i + 2, reason: e.to_string() })?);
    }
    Ok(out)
}

/// Built-in radial feeder template with 12, 15 or 33 buses.
pub fn template(buses: usize, s_base_kw: f64) -> Result<NetworkSpec> {
    let text = match buses {
        12 => include_str!("../data/networks/bus12.csv"),
        15 => include_str!("../data/networks/bus15.csv"),
        33 => include_str!("../data/networks/bus33.csv"),
        _ => return Err(Error::config(format!("no {buses}-bus template (have 12, 15, 33)"))),
    };
    let net = NetworkSpec {
        bus_count: buses,
        branches: parse_branch_csv(text)?,
        v_substation: 1.0,
        v_deviation_max: 0.05,
        s_base_kw,
    };
    validate(&net)?;
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(r: f64, x: f64) -> NetworkSpec {
        NetworkSpec {
            bus_count: 2,
            branches: vec![Branch { from: 0, to: 1, r_pu: r, x_pu: x }],
            v_substation: 1.0,
            v_deviation_max: 0.05,
            s_base_kw: 1.0,
        }
    }

    #[test]
    fn hand_evaluated_single_branch_drop() {
        let net = single(0.01, 0.02);
        let s = solve_lindistflow(&net, &[1.0, -1.0], &[0.5, -0.5]).unwrap();
        assert!((s.v_bus[1] - 0.98).abs() < 1e-12);
        assert!((s.p_branch[0] - 1.0).abs() < 1e-12);
        assert!((s.q_branch[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_injection_is_flat() {
        for n in [12, 15, 33] {
            let net = template(n, 500.0).unwrap();
            let s = solve_lindistflow(&net, &vec![0.0; n], &vec![0.0; n]).unwrap();
            assert!(s.p_branch.iter().all(|p| *p == 0.0));
            assert!(s.v_bus.iter().all(|v| *v == 1.0));
            assert!(check_voltage(&net, &s).is_empty());
        }
    }

    #[test]
    fn rejects_loops_and_forests() {
        let mut net = template(12, 100.0).unwrap();
        net.branches[10] = Branch { from: 1, to: 2, r_pu: 0.01, x_pu: 0.01 };
        assert!(validate(&net).is_err());
        net.branches.pop();
        assert!(validate(&net).is_err());
    }

    #[test]
    fn overload_reports_far_bus() {
        let net = single(0.1, 0.0);
        let s = solve_lindistflow(&net, &[0.0, -1.0], &[0.0, 0.0]).unwrap();
        let v = check_voltage(&net, &s);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].bus, 1);
        assert!((v[0].deviation + 0.1).abs() < 1e-12);
    }

    #[test]
    fn reversed_branch_orientation_is_handled() {
        let mut net = single(0.01, 0.02);
        net.branches[0] = Branch { from: 1, to: 0, r_pu: 0.01, x_pu: 0.02 };
        let s = solve_lindistflow(&net, &[0.0, -1.0], &[0.0, -0.5]).unwrap();
        assert!((s.v_bus[1] - 0.98).abs() < 1e-12);
    }

    #[test]
    fn window_edges_hit_voltage_limits() {
        let net = template(33, 400.0).unwrap();
        let (p, q) = bus_injections_from(&net, 1, 300.0, 50.0, 90.0, 0.0);
        let (lo, hi) = injection_window(&net, 1, &p, &q).unwrap().unwrap();
        for (u, limit) in [(lo, true), (hi, false)] {
            let mut pu = p.clone();
            pu[1] += u;
            let s = solve_lindistflow(&net, &pu, &q).unwrap();
            let worst = s.v_bus.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
            assert!((worst - 0.05).abs() < 1e-9, "edge {limit}: {worst}");
        }
    }
}
