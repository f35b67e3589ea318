//! SSP and ECMP routing of demand matrices over a [`Topology`].
//!
//! Both schemes are destination-based: for every destination the
//! shortest-path DAG towards it is swept from the farthest node inwards and
//! each node forwards all traffic it holds for that destination, either to a
//! single next hop (SSP) or split equally over every shortest-path next hop
//! (ECMP).

use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::{approx_eq, HeapItem, Topology};

/// Largest graph the per-pair flow oracle accepts.
pub const PAIR_FLOW_NODE_LIMIT: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Ssp,
    Ecmp,
}

impl Scheme {
    pub const ALL: [Scheme; 2] = [Scheme::Ssp, Scheme::Ecmp];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Ssp => "ssp",
            Scheme::Ecmp => "ecmp",
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ssp" => Ok(Scheme::Ssp),
            "ecmp" => Ok(Scheme::Ecmp),
            other => Err(Error::Config(format!("unknown routing scheme `{other}`"))),
        }
    }
}

/// Path length used when computing shortest paths.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathMetric {
    /// IGP routing weights from the topology file.
    #[default]
    Weight,
    /// Every edge counts as one hop.
    Hops,
}

/// `N x N` traffic demands, row = source, column = destination.
#[derive(Clone, Debug, PartialEq)]
pub struct DemandMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DemandMatrix {
    pub fn zeros(n: usize) -> Self {
        DemandMatrix { n, data: vec![0.0; n * n] }
    }

    pub fn from_vec(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::validation(format!(
                "demand matrix of size {n} needs {} entries, got {}",
                n * n,
                data.len()
            )));
        }
        for i in 0..n {
            for j in 0..n {
                let v = data[i * n + j];
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::validation(format!("demand D[{i}][{j}] = {v} is not a nonnegative number")));
                }
                if i == j && v != 0.0 {
                    return Err(Error::validation(format!("diagonal demand D[{i}][{i}] = {v} must be 0")));
                }
            }
        }
        Ok(DemandMatrix { n, data })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if let Some(bad) = rows.iter().position(|r| r.len() != n) {
            return Err(Error::validation(format!("demand row {bad} does not have {n} entries")));
        }
        Self::from_vec(n, rows.into_iter().flatten().collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, src: usize, dst: usize) -> f64 {
        self.data[src * self.n + dst]
    }

    pub fn set(&mut self, src: usize, dst: usize, value: f64) {
        assert!(src != dst || value == 0.0, "diagonal demands must stay zero");
        assert!(value >= 0.0, "demands must be nonnegative");
        self.data[src * self.n + dst] = value;
    }

    /// Row-major entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n.max(1)).map(<[f64]>::to_vec).collect()
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_entry(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn scaled(&self, factor: f64) -> DemandMatrix {
        DemandMatrix { n: self.n, data: self.data.iter().map(|v| v * factor).collect() }
    }

    /// Nonzero `(src, dst, volume)` triples in row-major order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .map(move |(k, &v)| (k / self.n, k % self.n, v))
    }
}

impl Serialize for DemandMatrix {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.rows().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DemandMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(deserializer)?;
        DemandMatrix::from_rows(rows).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingOutcome {
    pub scheme: Scheme,
    pub mlu: f64,
    /// Load per edge id of the original id space; absent edges carry 0.
    pub loads: Vec<f64>,
}

/// Shortest-path DAG towards one destination.
#[derive(Clone, Debug)]
pub struct ShortestPathDag {
    pub dst: usize,
    /// Distance to `dst` per node id; infinite for nodes not in the graph.
    pub dist: Vec<f64>,
    /// Outgoing edge ids lying on a shortest path, ascending.
    pub next_hops: Vec<Vec<usize>>,
    /// Present nodes by decreasing distance (ties by node id).
    sweep: Vec<usize>,
}

fn edge_length(t: &Topology, e: usize, metric: PathMetric) -> f64 {
    match metric {
        PathMetric::Weight => t.edge(e).unwrap().weight,
        PathMetric::Hops => 1.0,
    }
}

pub fn shortest_path_dag(t: &Topology, dst: usize) -> Result<ShortestPathDag> {
    shortest_path_dag_with(t, dst, PathMetric::Weight)
}

pub fn shortest_path_dag_with(t: &Topology, dst: usize, metric: PathMetric) -> Result<ShortestPathDag> {
    let dag = partial_dag(t, dst, metric)?;
    if let Some(v) = t.node_ids().find(|&v| !dag.dist[v].is_finite()) {
        return Err(Error::Routing(format!("node {v} cannot reach destination {dst}")));
    }
    Ok(dag)
}

/// DAG in which nodes that cannot reach `dst` keep an infinite distance.
fn partial_dag(t: &Topology, dst: usize, metric: PathMetric) -> Result<ShortestPathDag> {
    if !t.has_node(dst) {
        return Err(Error::Routing(format!("destination {dst} is not in the graph")));
    }
    let n = t.node_space();
    let mut dist = vec![f64::INFINITY; n];
    let mut done = vec![false; n];
    dist[dst] = 0.0;
    let mut heap = BinaryHeap::from([HeapItem { dist: 0.0, node: dst }]);
    while let Some(HeapItem { dist: d, node: u }) = heap.pop() {
        if done[u] {
            continue;
        }
        done[u] = true;
        for &e in t.in_edges(u) {
            let v = t.edge(e).unwrap().src;
            let alt = d + edge_length(t, e, metric);
            if alt < dist[v] {
                dist[v] = alt;
                heap.push(HeapItem { dist: alt, node: v });
            }
        }
    }
    let mut next_hops = vec![Vec::new(); n];
    for v in t.node_ids() {
        if v == dst || !dist[v].is_finite() {
            continue;
        }
        for &e in t.out_edges(v) {
            let u = t.edge(e).unwrap().dst;
            if approx_eq(dist[v], edge_length(t, e, metric) + dist[u]) {
                next_hops[v].push(e);
            }
        }
    }
    let mut sweep: Vec<usize> = t.node_ids().collect();
    sweep.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
    Ok(ShortestPathDag { dst, dist, next_hops, sweep })
}

/// Routes demand matrices over one topology, caching the per-destination DAGs.
#[derive(Clone, Debug)]
pub struct Router<'a> {
    topology: &'a Topology,
    dags: Vec<Option<ShortestPathDag>>,
}

impl<'a> Router<'a> {
    pub fn new(topology: &'a Topology) -> Result<Self> {
        Self::with_metric(topology, PathMetric::Weight)
    }

    pub fn with_metric(topology: &'a Topology, metric: PathMetric) -> Result<Self> {
        let mut dags = vec![None; topology.node_space()];
        for dst in topology.node_ids() {
            dags[dst] = Some(partial_dag(topology, dst, metric)?);
        }
        Ok(Router { topology, dags })
    }

    pub fn topology(&self) -> &Topology {
        self.topology
    }

    fn dag(&self, dst: usize) -> Result<&ShortestPathDag> {
        self.dags
            .get(dst)
            .and_then(Option::as_ref)
            .ok_or_else(|| Error::Routing(format!("demand towards node {dst}, which is not in the graph")))
    }

    fn check(&self, d: &DemandMatrix) -> Result<()> {
        if d.n() != self.topology.node_space() {
            return Err(Error::validation(format!(
                "demand matrix is {n}x{n} but the topology has {} nodes",
                self.topology.node_space(),
                n = d.n()
            )));
        }
        for (src, dst, _) in d.pairs() {
            if !self.topology.has_node(src) {
                return Err(Error::Routing(format!("demand from node {src}, which is not in the graph")));
            }
            if !self.dag(dst)?.dist[src].is_finite() {
                return Err(Error::Routing(format!("node {src} cannot reach destination {dst}")));
            }
        }
        Ok(())
    }

    /// Pushes every node's held volume down the DAG, adding to `loads`.
    fn sweep(&self, dag: &ShortestPathDag, held: &mut [f64], scheme: Scheme, loads: &mut [f64]) {
        for &v in &dag.sweep {
            let vol = held[v];
            if v == dag.dst || vol == 0.0 {
                continue;
            }
            held[v] = 0.0;
            let hops = &dag.next_hops[v];
            let chosen: &[usize] = match scheme {
                Scheme::Ssp => &hops[..1],
                Scheme::Ecmp => hops,
            };
            let share = vol / chosen.len() as f64;
            for &e in chosen {
                loads[e] += share;
                held[self.topology.edge(e).unwrap().dst] += share;
            }
        }
    }

    pub fn route(&self, d: &DemandMatrix, scheme: Scheme) -> Result<RoutingOutcome> {
        self.check(d)?;
        let n = d.n();
        let mut loads = vec![0.0; self.topology.edge_space()];
        let mut held = vec![0.0; n];
        for dst in self.topology.node_ids() {
            let mut any = false;
            for src in 0..n {
                held[src] = d.get(src, dst);
                any |= held[src] > 0.0;
            }
            if any {
                self.sweep(self.dag(dst)?, &mut held, scheme, &mut loads);
            }
        }
        let mlu = mlu(&loads, self.topology);
        Ok(RoutingOutcome { scheme, mlu, loads })
    }

    pub fn mlu(&self, d: &DemandMatrix, scheme: Scheme) -> Result<f64> {
        Ok(self.route(d, scheme)?.mlu)
    }

    /// Per-(src, dst) edge flows; the test oracle for flow conservation.
    pub fn per_pair_flows(&self, d: &DemandMatrix, scheme: Scheme) -> Result<PairFlows> {
        if self.topology.n_nodes() > PAIR_FLOW_NODE_LIMIT {
            return Err(Error::Routing(format!(
                "per-pair flows are limited to {PAIR_FLOW_NODE_LIMIT} nodes, graph has {}",
                self.topology.n_nodes()
            )));
        }
        self.check(d)?;
        let mut held = vec![0.0; d.n()];
        let mut pairs = Vec::new();
        for (src, dst, demand) in d.pairs() {
            let mut flow = vec![0.0; self.topology.edge_space()];
            held.iter_mut().for_each(|h| *h = 0.0);
            held[src] = demand;
            self.sweep(self.dag(dst)?, &mut held, scheme, &mut flow);
            pairs.push(PairFlow { src, dst, demand, flow });
        }
        Ok(PairFlows { edge_space: self.topology.edge_space(), pairs })
    }
}

pub fn route(t: &Topology, d: &DemandMatrix, scheme: Scheme) -> Result<RoutingOutcome> {
    Router::new(t)?.route(d, scheme)
}

pub fn route_ssp(t: &Topology, d: &DemandMatrix) -> Result<RoutingOutcome> {
    route(t, d, Scheme::Ssp)
}

pub fn route_ecmp(t: &Topology, d: &DemandMatrix) -> Result<RoutingOutcome> {
    route(t, d, Scheme::Ecmp)
}

pub fn per_pair_flows(t: &Topology, d: &DemandMatrix, scheme: Scheme) -> Result<PairFlows> {
    Router::new(t)?.per_pair_flows(d, scheme)
}

/// Maximum over present edges of load / capacity; 0 when nothing is loaded.
pub fn mlu(loads: &[f64], t: &Topology) -> f64 {
    t.edges().iter().map(|e| loads[e.id] / e.capacity).fold(0.0, f64::max)
}

/// MLU from loads and capacities aligned by index.
pub fn mlu_from_capacities(loads: &[f64], capacities: &[f64]) -> f64 {
    loads.iter().zip(capacities).map(|(l, c)| l / c).fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairFlow {
    pub src: usize,
    pub dst: usize,
    pub demand: f64,
    /// Flow of this pair on each edge id.
    pub flow: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairFlows {
    pub edge_space: usize,
    pub pairs: Vec<PairFlow>,
}

impl PairFlows {
    /// Edge loads obtained by summing every pair's flows.
    pub fn loads(&self) -> Vec<f64> {
        let mut loads = vec![0.0; self.edge_space];
        for p in &self.pairs {
            for (l, f) in loads.iter_mut().zip(&p.flow) {
                *l += f;
            }
        }
        loads
    }

    /// Largest absolute violation of per-pair flow conservation over all
    /// pairs and nodes: out-flow minus in-flow must be `+D` at the source,
    /// `-D` at the destination and `0` elsewhere.
    pub fn conservation_residual(&self, t: &Topology) -> f64 {
        let mut worst: f64 = 0.0;
        for p in &self.pairs {
            for v in t.node_ids() {
                let out: f64 = t.out_edges(v).iter().map(|&e| p.flow[e]).sum();
                let inn: f64 = t.in_edges(v).iter().map(|&e| p.flow[e]).sum();
                let expected = if v == p.src {
                    p.demand
                } else if v == p.dst {
                    -p.demand
                } else {
                    0.0
                };
                worst = worst.max((out - inn - expected).abs());
            }
        }
        worst
    }
}
