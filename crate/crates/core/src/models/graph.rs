use std::rc::Rc;

use crate::error::{Error, Result};
use crate::topology::Topology;
use crate::traffic::Normalization;

/// Index arrays describing one round of message passing.
///
/// Every entry is a directed message `nbr -> center`. Incoming edges of a
/// node come first (in edge-id order), followed by one self entry per present
/// node. Parameter rows are keyed by the original graph: edge `e` uses row
/// `e`, the self entry of node `v` uses row `edge_space + v`.
#[derive(Clone, Debug)]
pub struct MessageGraph {
    /// Rows of the node-feature matrix (node id space, times batch size).
    pub n_rows: usize,
    pub center: Rc<Vec<usize>>,
    pub nbr: Rc<Vec<usize>>,
    pub param_row: Rc<Vec<usize>>,
    /// Standardized capacity of the edge, 0 on self entries.
    pub edge_feature: Vec<f64>,
    pub is_self: Vec<bool>,
    /// Mean standardized capacity over edges incident to each row.
    pub mean_capacity: Vec<f64>,
    /// 1 for rows of nodes present in the graph, 0 for removed nodes.
    pub present: Vec<f64>,
}

impl MessageGraph {
    /// Message graph of `t`, whose ids must lie within the given id spaces.
    pub fn new(t: &Topology, node_space: usize, edge_space: usize, norm: &Normalization) -> Result<Self> {
        if t.node_space() > node_space || t.edge_space() > edge_space {
            return Err(Error::validation(format!(
                "graph {} uses ids beyond the parameter key space ({} nodes, {} edges)",
                t.name(),
                node_space,
                edge_space
            )));
        }
        let mut center = Vec::new();
        let mut nbr = Vec::new();
        let mut param_row = Vec::new();
        let mut edge_feature = Vec::new();
        let mut is_self = Vec::new();
        for e in t.edges() {
            center.push(e.dst);
            nbr.push(e.src);
            param_row.push(e.id);
            edge_feature.push(norm.capacity(e.capacity));
            is_self.push(false);
        }
        for v in t.node_ids() {
            center.push(v);
            nbr.push(v);
            param_row.push(edge_space + v);
            edge_feature.push(0.0);
            is_self.push(true);
        }
        let mut cap_sum = vec![0.0; node_space];
        let mut incident = vec![0usize; node_space];
        for e in t.edges() {
            for v in [e.src, e.dst] {
                cap_sum[v] += norm.capacity(e.capacity);
                incident[v] += 1;
            }
        }
        let mean_capacity = cap_sum
            .iter()
            .zip(&incident)
            .map(|(&s, &k)| if k == 0 { 0.0 } else { s / k as f64 })
            .collect();
        let mut present = vec![0.0; node_space];
        for v in t.node_ids() {
            present[v] = 1.0;
        }
        Ok(MessageGraph {
            n_rows: node_space,
            center: Rc::new(center),
            nbr: Rc::new(nbr),
            param_row: Rc::new(param_row),
            edge_feature,
            is_self,
            mean_capacity,
            present,
        })
    }

    pub fn n_entries(&self) -> usize {
        self.center.len()
    }

    /// Disjoint union; graph `b` occupies rows `b * n_rows ..`.
    pub fn batch(parts: &[&MessageGraph]) -> Result<MessageGraph> {
        let Some(first) = parts.first() else {
            return Err(Error::validation("empty batch"));
        };
        let n = first.n_rows;
        if parts.iter().any(|g| g.n_rows != n) {
            return Err(Error::validation("batched graphs must share an id space"));
        }
        let total: usize = parts.iter().map(|g| g.n_entries()).sum();
        let mut out = MessageGraph {
            n_rows: n * parts.len(),
            center: Rc::new(Vec::with_capacity(total)),
            nbr: Rc::new(Vec::with_capacity(total)),
            param_row: Rc::new(Vec::with_capacity(total)),
            edge_feature: Vec::with_capacity(total),
            is_self: Vec::with_capacity(total),
            mean_capacity: Vec::with_capacity(n * parts.len()),
            present: Vec::with_capacity(n * parts.len()),
        };
        {
            let center = Rc::get_mut(&mut out.center).expect("fresh");
            let nbr = Rc::get_mut(&mut out.nbr).expect("fresh");
            let rows = Rc::get_mut(&mut out.param_row).expect("fresh");
            for (b, g) in parts.iter().enumerate() {
                let off = b * n;
                center.extend(g.center.iter().map(|c| c + off));
                nbr.extend(g.nbr.iter().map(|c| c + off));
                rows.extend(g.param_row.iter());
                out.edge_feature.extend(&g.edge_feature);
                out.is_self.extend(&g.is_self);
                out.mean_capacity.extend(&g.mean_capacity);
                out.present.extend(&g.present);
            }
        }
        Ok(out)
    }

    /// Entries that are not self entries, with their centers.
    pub fn open_entries(&self) -> (Rc<Vec<usize>>, Rc<Vec<usize>>) {
        let idx: Vec<usize> = (0..self.n_entries()).filter(|&i| !self.is_self[i]).collect();
        let seg = idx.iter().map(|&i| self.center[i]).collect();
        (Rc::new(idx), Rc::new(seg))
    }

    /// Number of entries per center row.
    pub fn closed_degree(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_rows];
        for &c in self.center.iter() {
            deg[c] += 1;
        }
        deg
    }
}
