use std::rc::Rc;

use super::graph::MessageGraph;
use crate::autodiff::{Tensor, Var};
use crate::error::Result;

/// Per-edge transform and kernels: `w: [P, d_in, d_out]`, `q, k: [P, d_out]`,
/// `w1: [1, 1]`, where `P` = edge space + node space.
#[derive(Clone, Copy, Debug)]
pub struct PewParams<'t> {
    pub w: Var<'t>,
    pub q: Var<'t>,
    pub k: Var<'t>,
    pub w1: Var<'t>,
}

/// Shared transform `w: [d_in, d_out]`, attention vectors `a_l, a_r: [d_out, 1]`.
#[derive(Clone, Copy, Debug)]
pub struct GatParams<'t> {
    pub w: Var<'t>,
    pub a_l: Var<'t>,
    pub a_r: Var<'t>,
    pub w1: Var<'t>,
}

#[derive(Clone, Copy, Debug)]
pub struct GcnParams<'t> {
    pub w: Var<'t>,
    pub b: Var<'t>,
}

#[derive(Clone, Copy, Debug)]
pub struct SageParams<'t> {
    pub w_self: Var<'t>,
    pub w_neigh: Var<'t>,
    pub b: Var<'t>,
}

/// Node embeddings plus the attention coefficients, when the layer has any.
#[derive(Clone, Copy, Debug)]
pub struct LayerOutput<'t> {
    pub h: Var<'t>,
    pub zeta: Option<Var<'t>>,
}

fn column<'t>(like: Var<'t>, values: Vec<f64>) -> Var<'t> {
    like.tape().constant(Tensor::column(values))
}

/// Attention layer with its own transform and kernels on every edge.
///
/// With `strict` set, self entries take part in the softmax normalization
/// but not in the weighted sum.
pub fn pew_layer<'t>(
    h: Var<'t>,
    g: &MessageGraph,
    p: &PewParams<'t>,
    slope: f64,
    strict: bool,
) -> Result<LayerOutput<'t>> {
    let g_center = h.gather_matvec(&g.center, p.w, &g.param_row)?;
    let g_nbr = h.gather_matvec(&g.nbr, p.w, &g.param_row)?;
    let q = g_center.row_dot(p.q.gather_rows(&g.param_row)?)?;
    let k = g_nbr.row_dot(p.k.gather_rows(&g.param_row)?)?;
    let ex = column(h, g.edge_feature.clone()).matmul(p.w1)?;
    let scores = q.add(k)?.add(ex)?.leaky_relu(slope);
    let zeta = scores.segment_softmax(&g.center, g.n_rows)?;
    let messages = g_nbr.mul_rows(zeta)?;
    let summed = if strict {
        let (idx, seg) = g.open_entries();
        messages.gather_rows(&idx)?.segment_sum(&seg, g.n_rows)?
    } else {
        messages.segment_sum(&g.center, g.n_rows)?
    };
    Ok(LayerOutput { h: summed.relu(), zeta: Some(zeta) })
}

/// Single-head graph attention with a shared transform.
pub fn gat_layer<'t>(h: Var<'t>, g: &MessageGraph, p: &GatParams<'t>, slope: f64) -> Result<LayerOutput<'t>> {
    let wh = h.matmul(p.w)?;
    let src = wh.gather_rows(&g.nbr)?;
    let dst = wh.gather_rows(&g.center)?;
    let ex = column(h, g.edge_feature.clone()).matmul(p.w1)?;
    let scores = dst.matmul(p.a_l)?.add(src.matmul(p.a_r)?)?.add(ex)?.leaky_relu(slope);
    let zeta = scores.segment_softmax(&g.center, g.n_rows)?;
    let h = src.mul_rows(zeta)?.segment_sum(&g.center, g.n_rows)?.relu();
    Ok(LayerOutput { h, zeta: Some(zeta) })
}

/// Graph convolution with self-loops and symmetric degree normalization.
pub fn gcn_layer<'t>(h: Var<'t>, g: &MessageGraph, p: &GcnParams<'t>) -> Result<LayerOutput<'t>> {
    let deg = g.closed_degree();
    let norm = g
        .center
        .iter()
        .zip(g.nbr.iter())
        .map(|(&c, &u)| 1.0 / ((deg[c] * deg[u]) as f64).sqrt())
        .collect();
    let wh = h.matmul(p.w)?;
    let agg = wh.gather_rows(&g.nbr)?.mul_rows(column(h, norm))?.segment_sum(&g.center, g.n_rows)?;
    let out = agg.add_row(p.b)?.relu().mul_rows(column(h, g.present.clone()))?;
    Ok(LayerOutput { h: out, zeta: None })
}

/// GraphSAGE with a mean aggregator over in-neighbours.
pub fn sage_layer<'t>(h: Var<'t>, g: &MessageGraph, p: &SageParams<'t>) -> Result<LayerOutput<'t>> {
    let (idx, seg) = g.open_entries();
    let mut indeg = vec![0usize; g.n_rows];
    for &c in seg.iter() {
        indeg[c] += 1;
    }
    let inv = seg.iter().map(|&c| 1.0 / indeg[c] as f64).collect();
    let nbr_rows: Rc<Vec<usize>> = Rc::new(idx.iter().map(|&i| g.nbr[i]).collect());
    let mean = h.gather_rows(&nbr_rows)?.mul_rows(column(h, inv))?.segment_sum(&seg, g.n_rows)?;
    let out = h.matmul(p.w_self)?.add(mean.matmul(p.w_neigh)?)?.add_row(p.b)?.relu();
    Ok(LayerOutput { h: out.mul_rows(column(h, g.present.clone()))?, zeta: None })
}

/// Fully connected stack: ReLU after every layer but the last.
pub fn mlp_forward<'t>(x: Var<'t>, layers: &[(Var<'t>, Var<'t>)]) -> Result<Var<'t>> {
    let mut h = x;
    for (i, (w, b)) in layers.iter().enumerate() {
        h = h.matmul(*w)?.add_row(*b)?;
        if i + 1 < layers.len() {
            h = h.relu();
        }
    }
    Ok(h)
}
