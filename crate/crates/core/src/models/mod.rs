//! MLU predictors: the per-edge-weight attention model and its baselines.
//!
//! Graph models stack one layer per hop of the original topology's diameter,
//! sum-pool node embeddings and finish with a linear head. Parameters are
//! keyed by original edge and node ids so that the same weights apply to any
//! variation of the graph.

mod graph;
mod layers;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use graph::MessageGraph;
pub use layers::{
    gat_layer, gcn_layer, mlp_forward, pew_layer, sage_layer, GatParams, GcnParams, LayerOutput, PewParams, SageParams,
};

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::topology::{diameter, Topology};
use crate::traffic::{Dataset, Normalization, Sample};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Pew,
    Gat,
    Gcn,
    Sage,
    Mlp,
    /// Single trainable output; a control that can only learn the mean.
    Constant,
}

impl Architecture {
    /// Architectures compared in studies.
    pub const COMPARED: [Architecture; 5] =
        [Architecture::Pew, Architecture::Gat, Architecture::Gcn, Architecture::Sage, Architecture::Mlp];

    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::Pew => "pew",
            Architecture::Gat => "gat",
            Architecture::Gcn => "gcn",
            Architecture::Sage => "sage",
            Architecture::Mlp => "mlp",
            Architecture::Constant => "constant",
        }
    }

    pub fn is_graph_model(self) -> bool {
        matches!(self, Architecture::Pew | Architecture::Gat | Architecture::Gcn | Architecture::Sage)
    }

    /// Width choices of the hyperparameter grid. For the MLP this is the
    /// first hidden layer, which depends on the representation.
    pub fn widths(self, rep: Representation) -> [usize; 2] {
        match (self, rep) {
            (Architecture::Pew, _) => [4, 16],
            (Architecture::Mlp, Representation::Sum) => [64, 256],
            (Architecture::Mlp, Representation::Raw) => [64, 128],
            (Architecture::Constant, _) => [1, 1],
            _ => [8, 32],
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pew" => Ok(Architecture::Pew),
            "gat" => Ok(Architecture::Gat),
            "gcn" => Ok(Architecture::Gcn),
            "sage" | "graphsage" => Ok(Architecture::Sage),
            "mlp" => Ok(Architecture::Mlp),
            "constant" => Ok(Architecture::Constant),
            other => Err(Error::Config(format!("unknown architecture `{other}`"))),
        }
    }
}

/// Demand features given to each node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    /// Full incoming and outgoing demand rows, length `2N`.
    Raw,
    /// Total outgoing and incoming demand, length 2.
    Sum,
}

impl Representation {
    pub const ALL: [Representation; 2] = [Representation::Raw, Representation::Sum];

    pub fn as_str(self) -> &'static str {
        match self {
            Representation::Raw => "raw",
            Representation::Sum => "sum",
        }
    }

    pub fn width(self, n: usize) -> usize {
        match self {
            Representation::Raw => 2 * n,
            Representation::Sum => 2,
        }
    }

    /// Writes the features of `node` into `out`.
    pub fn fill(self, demands: &[f64], n: usize, node: usize, out: &mut Vec<f64>) {
        match self {
            Representation::Raw => {
                out.extend((0..n).map(|j| demands[j * n + node]));
                out.extend_from_slice(&demands[node * n..(node + 1) * n]);
            }
            Representation::Sum => {
                out.push(demands[node * n..(node + 1) * n].iter().sum());
                out.push((0..n).map(|j| demands[j * n + node]).sum());
            }
        }
    }
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Representation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "raw" => Ok(Representation::Raw),
            "sum" => Ok(Representation::Sum),
            other => Err(Error::Config(format!("unknown representation `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// Node embedding width, or first hidden width for the MLP.
    pub hidden: usize,
    pub representation: Representation,
    pub layers: usize,
    pub learning_rate: f64,
    pub leaky_slope: f64,
    /// Softmax over the closed neighbourhood but sum over the open one.
    #[serde(default)]
    pub strict_literal: bool,
}

impl ModelConfig {
    /// Config with one layer per hop of `t`'s diameter.
    pub fn new(architecture: Architecture, hidden: usize, representation: Representation, t: &Topology, lr: f64) -> Self {
        ModelConfig {
            architecture,
            hidden,
            representation,
            layers: diameter(t).max(1),
            learning_rate: lr,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            strict_literal: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("layer count must be at least 1".into()));
        }
        if self.hidden == 0 || (self.architecture == Architecture::Mlp && self.hidden < 2) {
            return Err(Error::Config(format!("hidden width {} too small", self.hidden)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        Ok(())
    }
}

/// Model input for one sample, computed once per dataset.
#[derive(Clone, Debug)]
pub struct Prepared {
    /// Row-major features: `[N, f]` node features or the flat MLP input.
    pub features: Vec<f64>,
    /// Index into [`Model::graphs`].
    pub graph: usize,
    pub label: f64,
}

pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    node_space: usize,
    edge_space: usize,
    /// Original graph first, then one entry per variation.
    graphs: Vec<MessageGraph>,
    /// Adjacency and standardized capacities of the original graph.
    static_input: Vec<f64>,
}

impl fmt::Debug for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Model")
            .field("config", &self.config)
            .field("params", &self.params.n_scalars())
            .field("graphs", &self.graphs.len())
            .finish()
    }
}

/// Builds a freshly initialized predictor for `t` and its variations.
pub fn build_model(
    config: &ModelConfig,
    t: &Topology,
    variations: &[Topology],
    norm: &Normalization,
    seed: u64,
) -> Result<Model> {
    config.validate()?;
    let (n, m) = (t.node_space(), t.edge_space());
    let mut graphs = vec![MessageGraph::new(t, n, m, norm)?];
    for v in variations {
        graphs.push(MessageGraph::new(v, n, m, norm)?);
    }
    let mut static_input = t.adjacency();
    let caps = t.capacity_by_id();
    static_input.extend(caps.iter().map(|c| c.map_or(0.0, |c| norm.capacity(c))));

    let mut model = Model { config: config.clone(), params: ParamStore::new(), node_space: n, edge_space: m, graphs, static_input };
    model.init_params(seed)?;
    Ok(model)
}

fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

impl Model {
    pub fn node_space(&self) -> usize {
        self.node_space
    }

    pub fn edge_space(&self) -> usize {
        self.edge_space
    }

    pub fn graphs(&self) -> &[MessageGraph] {
        &self.graphs
    }

    /// Width of the per-node input features.
    pub fn node_feature_width(&self) -> usize {
        let base = self.config.representation.width(self.node_space);
        match self.config.architecture {
            Architecture::Gcn | Architecture::Sage => base + 1,
            _ => base,
        }
    }

    pub fn mlp_input_width(&self) -> usize {
        self.node_space * self.config.representation.width(self.node_space) + self.static_input.len()
    }

    fn mlp_widths(&self) -> Vec<usize> {
        vec![self.mlp_input_width(), self.config.hidden, self.config.hidden / 2, 1]
    }

    fn init_params(&mut self, seed: u64) -> Result<()> {
        let mut rng = rng_from_seed(seed);
        let cfg = self.config.clone();
        let p = &mut self.params;
        let d = cfg.hidden;
        let rows = self.edge_space + self.node_space;
        let mut din = match cfg.architecture {
            Architecture::Gcn | Architecture::Sage => cfg.representation.width(self.node_space) + 1,
            _ => cfg.representation.width(self.node_space),
        };
        match cfg.architecture {
            Architecture::Pew => {
                for l in 0..cfg.layers {
                    p.add_glorot(format!("l{l}.w"), &[rows, din, d], &mut rng)?;
                    p.add_uniform(format!("l{l}.q"), &[rows, d], glorot_limit(d, 1), &mut rng)?;
                    p.add_uniform(format!("l{l}.k"), &[rows, d], glorot_limit(d, 1), &mut rng)?;
                    p.add_glorot(format!("l{l}.w1"), &[1, 1], &mut rng)?;
                    din = d;
                }
            }
            Architecture::Gat => {
                for l in 0..cfg.layers {
                    p.add_glorot(format!("l{l}.w"), &[din, d], &mut rng)?;
                    p.add_glorot(format!("l{l}.a_l"), &[d, 1], &mut rng)?;
                    p.add_glorot(format!("l{l}.a_r"), &[d, 1], &mut rng)?;
                    p.add_glorot(format!("l{l}.w1"), &[1, 1], &mut rng)?;
                    din = d;
                }
            }
            Architecture::Gcn => {
                for l in 0..cfg.layers {
                    p.add_glorot(format!("l{l}.w"), &[din, d], &mut rng)?;
                    p.add_zeros(format!("l{l}.b"), &[1, d])?;
                    din = d;
                }
            }
            Architecture::Sage => {
                for l in 0..cfg.layers {
                    p.add_glorot(format!("l{l}.w_self"), &[din, d], &mut rng)?;
                    p.add_glorot(format!("l{l}.w_neigh"), &[din, d], &mut rng)?;
                    p.add_zeros(format!("l{l}.b"), &[1, d])?;
                    din = d;
                }
            }
            Architecture::Mlp => {
                let widths = self.mlp_widths();
                let p = &mut self.params;
                for (l, pair) in widths.windows(2).enumerate() {
                    p.add_glorot(format!("mlp{l}.w"), &[pair[0], pair[1]], &mut rng)?;
                    p.add_zeros(format!("mlp{l}.b"), &[1, pair[1]])?;
                }
                return Ok(());
            }
            Architecture::Constant => {
                p.add_zeros("head.b", &[1, 1])?;
                return Ok(());
            }
        }
        p.add_glorot("head.w", &[d, 1], &mut rng)?;
        p.add_zeros("head.b", &[1, 1])?;
        Ok(())
    }

    /// Features for one sample.
    pub fn prepare(&self, sample: &Sample) -> Result<Prepared> {
        let n = self.node_space;
        if sample.demands.len() != n * n {
            return Err(Error::shape("prepare", format!("{} demands for {n} nodes", sample.demands.len())));
        }
        let graph = match sample.variation {
            Some(k) if k + 1 < self.graphs.len() => k + 1,
            Some(k) => return Err(Error::validation(format!("sample refers to unknown variation {k}"))),
            None => 0,
        };
        let rep = self.config.representation;
        let mut features = Vec::with_capacity(n * self.node_feature_width());
        for v in 0..n {
            rep.fill(&sample.demands, n, v, &mut features);
            if matches!(self.config.architecture, Architecture::Gcn | Architecture::Sage) {
                features.push(self.graphs[graph].mean_capacity[v]);
            }
        }
        if self.config.architecture == Architecture::Mlp {
            features.extend_from_slice(&self.static_input);
        }
        Ok(Prepared { features, graph, label: sample.label })
    }

    pub fn prepare_dataset(&self, data: &Dataset) -> Result<Vec<Prepared>> {
        data.samples.iter().map(|s| self.prepare(s)).collect()
    }

    fn var<'t>(&self, vars: &[Var<'t>], name: &str) -> Result<Var<'t>> {
        self.params
            .position(name)
            .map(|i| vars[i])
            .ok_or_else(|| Error::Config(format!("model has no parameter {name:?}")))
    }

    /// Predictions `[B, 1]` for a batch, using `vars` bound from [`Model::params`].
    pub fn forward<'t>(&self, tape: &'t Tape, vars: &[Var<'t>], batch: &[&Prepared]) -> Result<Var<'t>> {
        self.forward_with_attention(tape, vars, batch).map(|(out, _)| out)
    }

    /// Like [`Model::forward`], also returning every layer's attention coefficients
    /// and the batched message graph they refer to.
    pub fn forward_with_attention<'t>(
        &self,
        tape: &'t Tape,
        vars: &[Var<'t>],
        batch: &[&Prepared],
    ) -> Result<(Var<'t>, Vec<(Var<'t>, MessageGraph)>)> {
        if batch.is_empty() {
            return Err(Error::validation("empty batch"));
        }
        let b = batch.len();
        let cfg = &self.config;
        let mut flat = Vec::with_capacity(b * batch[0].features.len());
        for s in batch {
            flat.extend_from_slice(&s.features);
        }
        match cfg.architecture {
            Architecture::Constant => {
                let ones = tape.constant(Tensor::column(vec![1.0; b]));
                return Ok((ones.matmul(self.var(vars, "head.b")?)?, Vec::new()));
            }
            Architecture::Mlp => {
                let width = self.mlp_input_width();
                let x = tape.constant(Tensor::matrix(b, width, flat)?);
                let mut layers = Vec::new();
                for l in 0..3 {
                    layers.push((self.var(vars, &format!("mlp{l}.w"))?, self.var(vars, &format!("mlp{l}.b"))?));
                }
                return Ok((mlp_forward(x, &layers)?, Vec::new()));
            }
            _ => {}
        }
        let parts: Vec<&MessageGraph> = batch.iter().map(|s| &self.graphs[s.graph]).collect();
        let g = MessageGraph::batch(&parts)?;
        let mut h = tape.constant(Tensor::matrix(b * self.node_space, self.node_feature_width(), flat)?);
        let mut attention = Vec::new();
        for l in 0..cfg.layers {
            let out = match cfg.architecture {
                Architecture::Pew => {
                    let p = PewParams {
                        w: self.var(vars, &format!("l{l}.w"))?,
                        q: self.var(vars, &format!("l{l}.q"))?,
                        k: self.var(vars, &format!("l{l}.k"))?,
                        w1: self.var(vars, &format!("l{l}.w1"))?,
                    };
                    pew_layer(h, &g, &p, cfg.leaky_slope, cfg.strict_literal)?
                }
                Architecture::Gat => {
                    let p = GatParams {
                        w: self.var(vars, &format!("l{l}.w"))?,
                        a_l: self.var(vars, &format!("l{l}.a_l"))?,
                        a_r: self.var(vars, &format!("l{l}.a_r"))?,
                        w1: self.var(vars, &format!("l{l}.w1"))?,
                    };
                    gat_layer(h, &g, &p, cfg.leaky_slope)?
                }
                Architecture::Gcn => {
                    let p = GcnParams { w: self.var(vars, &format!("l{l}.w"))?, b: self.var(vars, &format!("l{l}.b"))? };
                    gcn_layer(h, &g, &p)?
                }
                Architecture::Sage => {
                    let p = SageParams {
                        w_self: self.var(vars, &format!("l{l}.w_self"))?,
                        w_neigh: self.var(vars, &format!("l{l}.w_neigh"))?,
                        b: self.var(vars, &format!("l{l}.b"))?,
                    };
                    sage_layer(h, &g, &p)?
                }
                Architecture::Mlp | Architecture::Constant => unreachable!(),
            };
            if let Some(z) = out.zeta {
                attention.push((z, g.clone()));
            }
            h = out.h;
        }
        let graph_of_row = std::rc::Rc::new((0..b * self.node_space).map(|r| r / self.node_space).collect());
        let pooled = h.segment_sum(&graph_of_row, b)?;
        let out = pooled.matmul(self.var(vars, "head.w")?)?.add_row(self.var(vars, "head.b")?)?;
        Ok((out, attention))
    }

    /// Inference without gradient bookkeeping.
    pub fn predict(&self, samples: &[Prepared]) -> Result<Vec<f64>> {
        const CHUNK: usize = 64;
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(CHUNK) {
            let tape = Tape::new();
            let vars = self.params.bind_frozen(&tape);
            let refs: Vec<&Prepared> = chunk.iter().collect();
            out.extend(self.forward(&tape, &vars, &refs)?.value().values);
        }
        Ok(out)
    }
}
