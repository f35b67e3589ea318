//! Capacitated directed graphs with stable node and edge identities.
//!
//! A [`Topology`] is immutable once built. Original graphs parsed from disk
//! have dense ids `0..N` and `0..m`; variations produced by
//! [`sample_variation`] keep the original ids of every surviving node and edge
//! and remember the size of the original id space, so that per-edge model
//! parameters and `N x N` demand layouts stay aligned across a study.

use std::collections::{BTreeSet, HashSet, VecDeque};

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum number of resampling attempts before [`sample_variation`] gives up.
pub const VARIATION_ATTEMPTS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub id: usize,
    pub src: usize,
    pub dst: usize,
    pub weight: f64,
    pub capacity: f64,
}

/// Input formats understood by [`parse_topology`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TopologyFormat {
    Repetita,
    NativeJson,
}

impl std::str::FromStr for TopologyFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "repetita" | "graph" => Ok(TopologyFormat::Repetita),
            "json" | "native-json" => Ok(TopologyFormat::NativeJson),
            other => Err(Error::Config(format!("unknown topology format `{other}`"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TopologyFile {
    name: String,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    node_space: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    edge_space: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct Topology {
    name: String,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    node_space: usize,
    edge_space: usize,
    node_present: Vec<bool>,
    edge_pos: Vec<Option<usize>>,
    out_edges: Vec<Vec<usize>>,
    in_edges: Vec<Vec<usize>>,
}

impl PartialEq for Topology {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.nodes == other.nodes
            && self.edges == other.edges
            && self.node_space == other.node_space
            && self.edge_space == other.edge_space
    }
}

impl Topology {
    /// Builds an original topology. Node ids must be exactly `0..nodes.len()`
    /// and edge ids exactly `0..edges.len()`.
    pub fn new(name: impl Into<String>, nodes: Vec<Node>, edges: Vec<Edge>) -> Result<Self> {
        let (n, m) = (nodes.len(), edges.len());
        Self::with_id_space(name, nodes, edges, n, m)
    }

    /// Builds a topology whose ids live in a larger id space (a variation of
    /// some original graph with `node_space` nodes and `edge_space` edges).
    pub fn with_id_space(
        name: impl Into<String>,
        mut nodes: Vec<Node>,
        mut edges: Vec<Edge>,
        node_space: usize,
        edge_space: usize,
    ) -> Result<Self> {
        nodes.sort_by_key(|n| n.id);
        edges.sort_by_key(|e| e.id);

        let mut node_present = vec![false; node_space];
        for node in &nodes {
            if node.id >= node_space {
                return Err(Error::validation(format!(
                    "node id {} outside id space of {node_space}",
                    node.id
                )));
            }
            if node_present[node.id] {
                return Err(Error::validation(format!("duplicate node id {}", node.id)));
            }
            node_present[node.id] = true;
        }

        let mut edge_pos = vec![None; edge_space];
        let mut out_edges = vec![Vec::new(); node_space];
        let mut in_edges = vec![Vec::new(); node_space];
        let mut pairs = HashSet::new();
        for (pos, e) in edges.iter().enumerate() {
            if e.id >= edge_space {
                return Err(Error::validation(format!(
                    "edge id {} outside id space of {edge_space}",
                    e.id
                )));
            }
            if edge_pos[e.id].is_some() {
                return Err(Error::validation(format!("duplicate edge id {}", e.id)));
            }
            for endpoint in [e.src, e.dst] {
                if endpoint >= node_space || !node_present[endpoint] {
                    return Err(Error::validation(format!(
                        "edge {} references unknown node {endpoint}",
                        e.id
                    )));
                }
            }
            if e.src == e.dst {
                return Err(Error::validation(format!("edge {} is a self-loop", e.id)));
            }
            if !(e.capacity.is_finite() && e.capacity > 0.0) {
                return Err(Error::validation(format!(
                    "edge {} has nonpositive capacity {}",
                    e.id, e.capacity
                )));
            }
            if !(e.weight.is_finite() && e.weight > 0.0) {
                return Err(Error::validation(format!(
                    "edge {} has nonpositive weight {}",
                    e.id, e.weight
                )));
            }
            if !pairs.insert((e.src, e.dst)) {
                return Err(Error::validation(format!(
                    "parallel edge {} -> {} (multigraphs are not supported)",
                    e.src, e.dst
                )));
            }
            edge_pos[e.id] = Some(pos);
            out_edges[e.src].push(e.id);
            in_edges[e.dst].push(e.id);
        }

        let topo = Topology {
            name: name.into(),
            nodes,
            edges,
            node_space,
            edge_space,
            node_present,
            edge_pos,
            out_edges,
            in_edges,
        };
        if !topo.is_weakly_connected() {
            return Err(Error::validation(format!("topology `{}` is disconnected", topo.name)));
        }
        Ok(topo)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Number of nodes present in this graph.
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Number of edges present in this graph.
    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Size of the node id space (N of the original graph).
    pub fn node_space(&self) -> usize {
        self.node_space
    }

    /// Size of the edge id space (m of the original graph).
    pub fn edge_space(&self) -> usize {
        self.edge_space
    }

    pub fn is_original(&self) -> bool {
        self.nodes.len() == self.node_space && self.edges.len() == self.edge_space
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Edges sorted by id.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().map(|n| n.id)
    }

    pub fn has_node(&self, id: usize) -> bool {
        self.node_present.get(id).copied().unwrap_or(false)
    }

    pub fn edge(&self, id: usize) -> Option<&Edge> {
        self.edge_pos.get(id).copied().flatten().map(|p| &self.edges[p])
    }

    /// Ids of edges leaving `node`, ascending.
    pub fn out_edges(&self, node: usize) -> &[usize] {
        &self.out_edges[node]
    }

    /// Ids of edges entering `node`, ascending.
    pub fn in_edges(&self, node: usize) -> &[usize] {
        &self.in_edges[node]
    }

    /// Capacities indexed by edge id; absent edges map to `None`.
    pub fn capacity_by_id(&self) -> Vec<Option<f64>> {
        let mut caps = vec![None; self.edge_space];
        for e in &self.edges {
            caps[e.id] = Some(e.capacity);
        }
        caps
    }

    pub fn max_capacity(&self) -> f64 {
        self.edges.iter().map(|e| e.capacity).fold(0.0, f64::max)
    }

    /// Number of distinct capacity values (dataset curation predicate).
    pub fn distinct_capacities(&self) -> usize {
        self.edges
            .iter()
            .map(|e| e.capacity.to_bits())
            .collect::<BTreeSet<_>>()
            .len()
    }

    /// True when the node count lies in `[lo, hi]` (dataset curation predicate).
    pub fn size_within(&self, lo: usize, hi: usize) -> bool {
        (lo..=hi).contains(&self.n_nodes())
    }

    /// `N x N` 0/1 adjacency over the id space, row-major, `A[src][dst]`.
    pub fn adjacency(&self) -> Vec<f64> {
        let n = self.node_space;
        let mut a = vec![0.0; n * n];
        for e in &self.edges {
            a[e.src * n + e.dst] = 1.0;
        }
        a
    }

    fn undirected_neighbours(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.out_edges[v]
            .iter()
            .map(move |&e| self.edge(e).map(|e| e.dst).unwrap_or(v))
            .chain(self.in_edges[v].iter().map(move |&e| self.edge(e).map(|e| e.src).unwrap_or(v)))
    }

    fn reach_count(&self, start: usize, directed_reverse: Option<bool>) -> usize {
        let mut seen = vec![false; self.node_space];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        let mut count = 1;
        while let Some(v) = queue.pop_front() {
            let next: Vec<usize> = match directed_reverse {
                None => self.undirected_neighbours(v).collect(),
                Some(false) => self.out_edges[v].iter().map(|&e| self.edge(e).unwrap().dst).collect(),
                Some(true) => self.in_edges[v].iter().map(|&e| self.edge(e).unwrap().src).collect(),
            };
            for u in next {
                if !seen[u] {
                    seen[u] = true;
                    count += 1;
                    queue.push_back(u);
                }
            }
        }
        count
    }

    /// Connectivity treating every edge as bidirectional.
    pub fn is_weakly_connected(&self) -> bool {
        match self.nodes.first() {
            None => true,
            Some(first) => self.reach_count(first.id, None) == self.nodes.len(),
        }
    }

    /// Every node reaches every other node along directed edges.
    pub fn is_strongly_connected(&self) -> bool {
        match self.nodes.first() {
            None => true,
            Some(first) => {
                self.reach_count(first.id, Some(false)) == self.nodes.len()
                    && self.reach_count(first.id, Some(true)) == self.nodes.len()
            }
        }
    }

    /// Node-induced subgraph without `removed`, keeping original ids.
    pub fn without_nodes(&self, removed: &[usize]) -> Result<Topology> {
        let removed: HashSet<usize> = removed.iter().copied().collect();
        let nodes = self.nodes.iter().filter(|n| !removed.contains(&n.id)).cloned().collect();
        let edges = self
            .edges
            .iter()
            .filter(|e| !removed.contains(&e.src) && !removed.contains(&e.dst))
            .cloned()
            .collect();
        Topology::with_id_space(self.name.clone(), nodes, edges, self.node_space, self.edge_space)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = TopologyFile {
            name: self.name.clone(),
            nodes: self.nodes.clone(),
            edges: self.edges.clone(),
            node_space: (!self.is_original()).then_some(self.node_space),
            edge_space: (!self.is_original()).then_some(self.edge_space),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    /// SHA-256 over the canonical JSON form; recorded in manifests.
    pub fn content_hash(&self) -> String {
        crate::io::sha256_hex(self.to_json().unwrap_or_default().as_bytes())
    }
}

/// Parses a topology from text in the given format.
///
/// Repetita files look like
///
/// ```text
/// NODES 2
/// label x y
/// a 0.0 0.0
/// b 1.0 1.0
///
/// EDGES 2
/// label src dest weight bw delay
/// e0 0 1 1 10000 100
/// e1 1 0 1 10000 100
/// ```
///
/// Node ids follow file order; the delay column is read and discarded.
pub fn parse_topology(text: &str, format: TopologyFormat, name: &str) -> Result<Topology> {
    match format {
        TopologyFormat::Repetita => parse_repetita(text, name),
        TopologyFormat::NativeJson => parse_json(text),
    }
}

fn parse_json(text: &str) -> Result<Topology> {
    let file: TopologyFile = serde_json::from_str(text).map_err(|e| Error::parse(e.line(), e.to_string()))?;
    let node_space = file
        .node_space
        .unwrap_or_else(|| file.nodes.iter().map(|n| n.id + 1).max().unwrap_or(0));
    let edge_space = file
        .edge_space
        .unwrap_or_else(|| file.edges.iter().map(|e| e.id + 1).max().unwrap_or(0));
    if file.node_space.is_none() && node_space != file.nodes.len() {
        return Err(Error::validation("node ids are not dense"));
    }
    if file.edge_space.is_none() && edge_space != file.edges.len() {
        return Err(Error::validation("edge ids are not dense"));
    }
    Topology::with_id_space(file.name, file.nodes, file.edges, node_space, edge_space)
}

fn parse_header(line: &str, keyword: &str, lineno: usize) -> Result<usize> {
    let mut parts = line.split_whitespace();
    match (parts.next(), parts.next(), parts.next()) {
        (Some(k), Some(count), None) if k == keyword => count
            .parse()
            .map_err(|_| Error::parse(lineno, format!("invalid {keyword} count `{count}`"))),
        _ => Err(Error::parse(lineno, format!("expected `{keyword} <count>` header"))),
    }
}

fn parse_field<T: std::str::FromStr>(field: &str, what: &str, lineno: usize) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::parse(lineno, format!("invalid {what} `{field}`")))
}

fn parse_repetita(text: &str, name: &str) -> Result<Topology> {
    // Blank lines and column-title lines (`label ...`) carry no data.
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with("label") && !l.starts_with('#'));

    let (lineno, header) = lines.next().ok_or_else(|| Error::parse(1, "empty topology file"))?;
    let n = parse_header(header, "NODES", lineno)?;
    let mut nodes = Vec::with_capacity(n);
    for id in 0..n {
        let (lineno, line) = lines
            .next()
            .ok_or_else(|| Error::parse(lineno, format!("expected {n} node lines, found {id}")))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 3 || fields[0] == "EDGES" {
            return Err(Error::parse(lineno, "node line needs `label x y`"));
        }
        parse_field::<f64>(fields[1], "x coordinate", lineno)?;
        parse_field::<f64>(fields[2], "y coordinate", lineno)?;
        nodes.push(Node { id, label: fields[0].to_string() });
    }

    let (lineno, header) = lines
        .next()
        .ok_or_else(|| Error::parse(text.lines().count(), "missing EDGES header"))?;
    let m = parse_header(header, "EDGES", lineno)?;
    let mut edges = Vec::with_capacity(m);
    for id in 0..m {
        let (lineno, line) = lines
            .next()
            .ok_or_else(|| Error::parse(lineno, format!("expected {m} edge lines, found {id}")))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(Error::parse(
                lineno,
                format!("edge line needs 6 fields (label src dst weight capacity delay), found {}", fields.len()),
            ));
        }
        let src: usize = parse_field(fields[1], "source index", lineno)?;
        let dst: usize = parse_field(fields[2], "destination index", lineno)?;
        let weight: f64 = parse_field(fields[3], "weight", lineno)?;
        let capacity: f64 = parse_field(fields[4], "capacity", lineno)?;
        let _delay: f64 = parse_field(fields[5], "delay", lineno)?;
        edges.push(Edge { id, src, dst, weight, capacity });
    }
    if let Some((lineno, _)) = lines.next() {
        return Err(Error::parse(lineno, "unexpected trailing content"));
    }
    Topology::new(name, nodes, edges)
}

/// Hop-count eccentricities via BFS from every node along directed edges.
fn bfs_hops(t: &Topology, src: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; t.node_space()];
    dist[src] = Some(0);
    let mut queue = VecDeque::from([src]);
    while let Some(v) = queue.pop_front() {
        let d = dist[v].unwrap();
        for &e in t.out_edges(v) {
            let u = t.edge(e).unwrap().dst;
            if dist[u].is_none() {
                dist[u] = Some(d + 1);
                queue.push_back(u);
            }
        }
    }
    dist
}

/// Largest unweighted shortest-path length over ordered reachable pairs.
pub fn diameter(t: &Topology) -> usize {
    t.node_ids()
        .flat_map(|s| bfs_hops(t, s).into_iter().flatten())
        .max()
        .unwrap_or(0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopologyMetrics {
    pub n_nodes: usize,
    pub diameter: usize,
    pub edge_density: f64,
    pub capacity_variance: f64,
    pub degree_variance: f64,
    pub weighted_betweenness_variance: f64,
}

impl TopologyMetrics {
    pub const NAMES: [&'static str; 6] = [
        "n_nodes",
        "diameter",
        "edge_density",
        "capacity_variance",
        "degree_variance",
        "weighted_betweenness_variance",
    ];

    /// Values in the order of [`TopologyMetrics::NAMES`].
    pub fn values(&self) -> [f64; 6] {
        [
            self.n_nodes as f64,
            self.diameter as f64,
            self.edge_density,
            self.capacity_variance,
            self.degree_variance,
            self.weighted_betweenness_variance,
        ]
    }
}

fn population_variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).max(0.0)
}

/// Brandes betweenness over directed edges with routing weights as lengths.
///
/// Values are indexed by node id and normalized by `(N-1)(N-2)` ordered pairs.
pub fn weighted_betweenness(t: &Topology) -> Vec<f64> {
    let n_space = t.node_space();
    let mut centrality = vec![0.0; n_space];
    for s in t.node_ids() {
        let mut stack = Vec::with_capacity(t.n_nodes());
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n_space];
        let mut sigma = vec![0.0f64; n_space];
        let mut dist = vec![f64::INFINITY; n_space];
        let mut done = vec![false; n_space];
        sigma[s] = 1.0;
        dist[s] = 0.0;
        let mut heap = std::collections::BinaryHeap::new();
        heap.push(HeapItem { dist: 0.0, node: s });
        while let Some(HeapItem { dist: d, node: v }) = heap.pop() {
            if done[v] || d > dist[v] {
                continue;
            }
            done[v] = true;
            stack.push(v);
            for &eid in t.out_edges(v) {
                let e = t.edge(eid).unwrap();
                let w = e.dst;
                let alt = d + e.weight;
                if alt < dist[w] && !approx_eq(alt, dist[w]) {
                    dist[w] = alt;
                    sigma[w] = sigma[v];
                    preds[w].clear();
                    preds[w].push(v);
                    heap.push(HeapItem { dist: alt, node: w });
                } else if approx_eq(alt, dist[w]) && !done[w] {
                    sigma[w] += sigma[v];
                    preds[w].push(v);
                }
            }
        }
        let mut delta = vec![0.0; n_space];
        while let Some(w) = stack.pop() {
            for &v in &preds[w] {
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
            }
            if w != s {
                centrality[w] += delta[w];
            }
        }
    }
    let n = t.n_nodes() as f64;
    let pairs = (n - 1.0) * (n - 2.0);
    if pairs > 0.0 {
        for c in &mut centrality {
            *c /= pairs;
        }
    }
    centrality
}

pub(crate) fn approx_eq(a: f64, b: f64) -> bool {
    if !(a.is_finite() && b.is_finite()) {
        return a == b;
    }
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

#[derive(Clone, Copy, PartialEq)]
pub(crate) struct HeapItem {
    pub dist: f64,
    pub node: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    // Min-heap on distance, ties broken by smaller node id.
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

pub fn compute_metrics(t: &Topology) -> TopologyMetrics {
    let n = t.n_nodes();
    let max_cap = t.max_capacity();
    let caps: Vec<f64> = t.edges().iter().map(|e| e.capacity / max_cap).collect();
    let degrees: Vec<f64> = t
        .node_ids()
        .map(|v| (t.out_edges(v).len() + t.in_edges(v).len()) as f64 / n as f64)
        .collect();
    let betweenness = weighted_betweenness(t);
    let present: Vec<f64> = t.node_ids().map(|v| betweenness[v]).collect();
    TopologyMetrics {
        n_nodes: n,
        diameter: diameter(t),
        edge_density: if n == 0 { 0.0 } else { t.n_edges() as f64 / n as f64 },
        capacity_variance: population_variance(&caps),
        degree_variance: population_variance(&degrees),
        weighted_betweenness_variance: population_variance(&present),
    }
}

/// Removes a uniformly drawn number `k ∈ [1, floor(N/5)]` of uniformly chosen
/// nodes, resampling until the induced subgraph stays connected.
///
/// Strongly connected inputs yield strongly connected variations so that
/// every remaining pair stays routable.
pub fn sample_variation<R: Rng + ?Sized>(t: &Topology, rng: &mut R) -> Result<Topology> {
    let n = t.n_nodes();
    if n < 6 {
        return Err(Error::validation(format!(
            "variations need at least 6 nodes, `{}` has {n}",
            t.name()
        )));
    }
    let ids: Vec<usize> = t.node_ids().collect();
    let need_strong = t.is_strongly_connected();
    for _ in 0..VARIATION_ATTEMPTS {
        let k = rng.random_range(1..=n / 5);
        let removed: Vec<usize> = sample(rng, n, k).into_iter().map(|i| ids[i]).collect();
        match t.without_nodes(&removed) {
            Ok(v) if !need_strong || v.is_strongly_connected() => return Ok(v),
            _ => continue,
        }
    }
    Err(Error::Sampling { attempts: VARIATION_ATTEMPTS })
}

/// Number of gravity matrices used by [`is_trivial_topology`].
pub const TRIVIALITY_SAMPLES: usize = 100;

/// Flags topologies whose MLU barely depends on the demand matrix: true iff
/// the minimum MLU over [`TRIVIALITY_SAMPLES`] rescaled gravity matrices
/// equals their nearest-rank 90th percentile (relative tolerance 1e-9).
pub fn is_trivial_topology<R: Rng + ?Sized>(
    t: &Topology,
    scheme: crate::routing::Scheme,
    rng: &mut R,
    cfg: &crate::traffic::TrafficConfig,
) -> Result<bool> {
    let router = crate::routing::Router::with_metric(t, cfg.metric)?;
    let mut mlus = Vec::with_capacity(TRIVIALITY_SAMPLES);
    for _ in 0..TRIVIALITY_SAMPLES {
        let (d, _) = crate::traffic::gravity_dm(t, rng, cfg)?;
        mlus.push(router.mlu(&d, scheme)?);
    }
    Ok(min_equals_p90(&mut mlus))
}

pub(crate) fn min_equals_p90(values: &mut [f64]) -> bool {
    assert_eq!(values.len(), TRIVIALITY_SAMPLES, "triviality screen uses a fixed sample count");
    values.sort_by(f64::total_cmp);
    let rank = (0.9 * values.len() as f64).ceil() as usize;
    let (min, p90) = (values[0], values[rank - 1]);
    (p90 - min).abs() <= 1e-9 * p90.abs().max(min.abs())
}

/// Random connected topology with bidirectional links: a random spanning
/// tree plus `extra_links` further links, each link drawing its capacity
/// uniformly from `capacities`. Routing weights are 1.
pub fn synthetic_topology(
    name: &str,
    n: usize,
    extra_links: usize,
    capacities: &[f64],
    seed: u64,
) -> Result<Topology> {
    if n < 2 || capacities.is_empty() {
        return Err(Error::Config("synthetic topologies need 2+ nodes and a capacity list".into()));
    }
    let max_links = n * (n - 1) / 2;
    if n - 1 + extra_links > max_links {
        return Err(Error::Config(format!("{n} nodes cannot hold {} links", n - 1 + extra_links)));
    }
    let mut rng = crate::rng::rng_from_seed(seed);
    let mut links = BTreeSet::new();
    for v in 1..n {
        let u = rng.random_range(0..v);
        links.insert((u, v));
    }
    let mut linked: Vec<(usize, usize)> = links.iter().copied().collect();
    while links.len() < n - 1 + extra_links {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b && links.insert((a.min(b), a.max(b))) {
            linked.push((a.min(b), a.max(b)));
        }
    }
    let mut edges = Vec::with_capacity(2 * linked.len());
    for (a, b) in linked {
        let capacity = capacities[rng.random_range(0..capacities.len())];
        for (src, dst) in [(a, b), (b, a)] {
            edges.push(Edge { id: edges.len(), src, dst, weight: 1.0, capacity });
        }
    }
    let nodes = (0..n).map(|id| Node { id, label: format!("v{id}") }).collect();
    Topology::new(name, nodes, edges)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn edge(id: usize, src: usize, dst: usize, weight: f64, capacity: f64) -> Edge {
        Edge { id, src, dst, weight, capacity }
    }

    pub fn nodes(n: usize) -> Vec<Node> {
        (0..n).map(|id| Node { id, label: format!("n{id}") }).collect()
    }

    /// Bidirectional graph from undirected pairs; edge ids follow pair order,
    /// forward direction first.
    pub fn bidirectional(n: usize, pairs: &[(usize, usize)], caps: &[f64]) -> Topology {
        let mut edges = Vec::new();
        for (i, &(a, b)) in pairs.iter().enumerate() {
            let c = caps.get(i).copied().unwrap_or(1.0);
            edges.push(edge(edges.len(), a, b, 1.0, c));
            edges.push(edge(edges.len(), b, a, 1.0, c));
        }
        Topology::new("fixture", nodes(n), edges).unwrap()
    }
}
