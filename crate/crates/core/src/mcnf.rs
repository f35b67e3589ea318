//! Approximate minimum-MLU multicommodity flow.
//!
//! The optimum MLU `θ*` of a demand matrix is the inverse of its maximum
//! concurrent flow. [`min_mlu`] runs a multiplicative-weights scheme in the
//! style of Garg–Könemann with Karakostas' per-source grouping: every phase
//! routes each source's full demand along shortest-path trees under
//! exponential edge lengths, in steps that never exceed an edge's capacity.
//!
//! After phase `k` two certificates are available:
//!
//! * upper: the accumulated flow divided by `k` routes `D` exactly, so its
//!   maximum utilization bounds `θ*` from above;
//! * lower: for any lengths `l`, `θ* ≥ Σ_j d_j dist_l(s_j, t_j) / Σ_e l_e c_e`.
//!
//! The solver stops as soon as `upper ≤ (1 + ε) · lower` and reports the
//! upper certificate, so `θ* ≤ θ ≤ (1 + ε) θ*` holds for every returned value.

use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::routing::DemandMatrix;
use crate::topology::{HeapItem, Topology};

pub const DEFAULT_EPSILON: f64 = 0.05;

/// Phases without gap improvement before the step size is halved.
const STALL_PHASES: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMluResult {
    /// Approximate minimum MLU, never below the true optimum.
    pub theta: f64,
    /// Best dual lower bound found.
    pub lower_bound: f64,
    pub epsilon: f64,
    /// Completed phases.
    pub iterations: usize,
}

/// Phase budget `ceil(ε⁻² · m · ln m)`, at least one phase.
pub fn phase_cap(epsilon: f64, n_edges: usize) -> usize {
    let m = n_edges as f64;
    ((m * m.ln()) / (epsilon * epsilon)).ceil().max(1.0) as usize
}

struct Graph {
    n: usize,
    // Compact edge arrays (present edges only).
    src: Vec<usize>,
    dst: Vec<usize>,
    cap: Vec<f64>,
    out: Vec<Vec<usize>>,
}

impl Graph {
    fn new(t: &Topology) -> Self {
        let n = t.node_space();
        let mut g = Graph { n, src: Vec::new(), dst: Vec::new(), cap: Vec::new(), out: vec![Vec::new(); n] };
        for e in t.edges() {
            g.out[e.src].push(g.src.len());
            g.src.push(e.src);
            g.dst.push(e.dst);
            g.cap.push(e.capacity);
        }
        g
    }

    /// Dijkstra from `s` under `len`; returns distances, predecessor edges and
    /// the settle order.
    fn tree(&self, s: usize, len: &[f64], dist: &mut [f64], pred: &mut [usize], order: &mut Vec<usize>) {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        pred.iter_mut().for_each(|p| *p = usize::MAX);
        order.clear();
        dist[s] = 0.0;
        let mut heap = BinaryHeap::from([HeapItem { dist: 0.0, node: s }]);
        while let Some(HeapItem { dist: d, node: v }) = heap.pop() {
            if d > dist[v] {
                continue;
            }
            order.push(v);
            for &e in &self.out[v] {
                let u = self.dst[e];
                let alt = d + len[e];
                if alt < dist[u] {
                    dist[u] = alt;
                    pred[u] = e;
                    heap.push(HeapItem { dist: alt, node: u });
                }
            }
        }
    }
}

/// Per-source commodity list: `(source, [(destination, demand)])`.
type Commodities = Vec<(usize, Vec<(usize, f64)>)>;

fn commodities(d: &DemandMatrix, scale: f64) -> Commodities {
    let mut out: Commodities = Vec::new();
    for (s, t, v) in d.pairs() {
        match out.last_mut() {
            Some((src, list)) if *src == s => list.push((t, v * scale)),
            _ => out.push((s, vec![(t, v * scale)])),
        }
    }
    out
}

struct Workspace {
    dist: Vec<f64>,
    pred: Vec<usize>,
    order: Vec<usize>,
    tree_flow: Vec<f64>,
    node_flow: Vec<f64>,
}

impl Workspace {
    fn new(n: usize, m: usize) -> Self {
        Workspace {
            dist: vec![0.0; n],
            pred: vec![usize::MAX; n],
            order: Vec::with_capacity(n),
            tree_flow: vec![0.0; m],
            node_flow: vec![0.0; n],
        }
    }

    /// Loads on tree edges when every destination `t` receives `amounts[t]`
    /// from the tree root. Returns the edge ids that carry flow.
    fn push_tree(&mut self, g: &Graph, amounts: &[(usize, f64)], touched: &mut Vec<usize>) {
        touched.clear();
        for &(t, a) in amounts {
            self.node_flow[t] += a;
        }
        for &v in self.order.iter().rev() {
            let f = self.node_flow[v];
            if f > 0.0 {
                let e = self.pred[v];
                if e != usize::MAX {
                    self.tree_flow[e] = f;
                    touched.push(e);
                    self.node_flow[g.src[e]] += f;
                }
            }
            self.node_flow[v] = 0.0;
        }
    }
}

/// Routes every commodity along shortest paths under `len` and
/// returns the resulting maximum utilization.
fn shortest_path_utilization(g: &Graph, coms: &Commodities, len: &[f64], ws: &mut Workspace) -> f64 {
    let mut load = vec![0.0; g.cap.len()];
    let mut touched = Vec::new();
    for (s, list) in coms {
        g.tree(*s, len, &mut ws.dist, &mut ws.pred, &mut ws.order);
        ws.push_tree(g, list, &mut touched);
        for &e in &touched {
            load[e] += ws.tree_flow[e];
            ws.tree_flow[e] = 0.0;
        }
    }
    load.iter().zip(&g.cap).map(|(l, c)| l / c).fold(0.0, f64::max)
}

fn dual_bound(g: &Graph, coms: &Commodities, len: &[f64], ws: &mut Workspace) -> f64 {
    let volume: f64 = len.iter().zip(&g.cap).map(|(l, c)| l * c).sum();
    let mut cost = 0.0;
    for (s, list) in coms {
        g.tree(*s, len, &mut ws.dist, &mut ws.pred, &mut ws.order);
        cost += list.iter().map(|&(t, v)| v * ws.dist[t]).sum::<f64>();
    }
    cost / volume
}

/// Approximate minimum achievable MLU for routing `d` over `t`, within a
/// factor `1 + epsilon` of the optimum.
pub fn min_mlu(t: &Topology, d: &DemandMatrix, epsilon: f64) -> Result<MinMluResult> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Config(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    if d.n() != t.node_space() {
        return Err(Error::validation(format!(
            "demand matrix is {n}x{n} but the topology has {} nodes",
            t.node_space(),
            n = d.n()
        )));
    }
    if d.is_zero() {
        return Err(Error::validation("min-MLU of an all-zero demand matrix is undefined"));
    }
    for (s, dst, _) in d.pairs() {
        if !t.has_node(s) || !t.has_node(dst) {
            return Err(Error::Routing(format!("demand {s} -> {dst} touches a node outside the graph")));
        }
    }

    let g = Graph::new(t);
    let m = g.cap.len();
    let mut ws = Workspace::new(g.n, m);
    let mut len: Vec<f64> = g.cap.iter().map(|c| 1.0 / c).collect();

    // Scale so that shortest-path routing under 1/c lengths has MLU 1; the
    // optimum of the scaled instance is then at most 1.
    let raw = commodities(d, 1.0);
    for (s, list) in &raw {
        g.tree(*s, &len, &mut ws.dist, &mut ws.pred, &mut ws.order);
        if list.iter().any(|&(t, _)| !ws.dist[t].is_finite()) {
            return Err(Error::Routing(format!("source {s} cannot reach all its destinations")));
        }
    }
    let scale0 = shortest_path_utilization(&g, &raw, &len, &mut ws);
    let coms = commodities(d, 1.0 / scale0);

    // The stopping rule alone certifies the gap, so the step size only
    // affects speed: start aggressive and halve it whenever the gap stalls.
    let mut step = 2.0 * epsilon;
    let mut best_gap = f64::INFINITY;
    let mut stalled = 0;
    let cap_phases = phase_cap(epsilon, m);
    let mut total = vec![0.0; m];
    let mut remaining: Vec<f64> = Vec::new();
    let mut amounts: Vec<(usize, f64)> = Vec::new();
    let mut touched = Vec::new();
    let mut lower = dual_bound(&g, &coms, &len, &mut ws);
    let mut upper = f64::INFINITY;

    for phase in 1..=cap_phases {
        for (s, list) in &coms {
            remaining.clear();
            remaining.extend(list.iter().map(|&(_, v)| v));
            loop {
                amounts.clear();
                amounts.extend(list.iter().zip(&remaining).filter(|(_, &r)| r > 0.0).map(|(&(t, _), &r)| (t, r)));
                if amounts.is_empty() {
                    break;
                }
                g.tree(*s, &len, &mut ws.dist, &mut ws.pred, &mut ws.order);
                ws.push_tree(&g, &amounts, &mut touched);
                let sigma = touched
                    .iter()
                    .map(|&e| g.cap[e] / ws.tree_flow[e])
                    .fold(1.0, f64::min);
                for &e in &touched {
                    let f = sigma * ws.tree_flow[e];
                    total[e] += f;
                    len[e] *= 1.0 + step * f / g.cap[e];
                    ws.tree_flow[e] = 0.0;
                }
                if sigma >= 1.0 {
                    remaining.iter_mut().for_each(|r| *r = 0.0);
                } else {
                    remaining.iter_mut().for_each(|r| *r *= 1.0 - sigma);
                }
            }
        }

        let norm = len.iter().copied().fold(0.0, f64::max);
        len.iter_mut().for_each(|l| *l /= norm);

        let k = phase as f64;
        upper = upper.min(total.iter().zip(&g.cap).map(|(f, c)| f / (k * c)).fold(0.0, f64::max));
        lower = lower.max(dual_bound(&g, &coms, &len, &mut ws));
        let gap = upper / lower;
        if gap < best_gap * (1.0 - 1e-6) {
            best_gap = gap;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= STALL_PHASES && step > epsilon / 8.0 {
                step /= 2.0;
                stalled = 0;
            }
        }
        if upper <= (1.0 + epsilon) * lower {
            return Ok(MinMluResult {
                theta: upper * scale0,
                lower_bound: lower * scale0,
                epsilon,
                iterations: phase,
            });
        }
    }
    Err(Error::Convergence { phases: cap_phases, upper: upper * scale0, lower: lower * scale0 })
}

/// Divides every demand by `theta`, giving an (approximately) optimal MLU of 1.
pub fn rescale_demands(d: &DemandMatrix, theta: f64) -> Result<DemandMatrix> {
    rescale_to_target(d, theta, 1.0)
}

/// Scales `d` so that its optimal MLU becomes `target`.
pub fn rescale_to_target(d: &DemandMatrix, theta: f64, target: f64) -> Result<DemandMatrix> {
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::validation(format!("rescaling needs a positive MLU, got {theta}")));
    }
    if !(target > 0.0 && target.is_finite()) {
        return Err(Error::validation(format!("rescaling target must be positive, got {target}")));
    }
    Ok(d.scaled(target / theta))
}
