//! Gravity-model traffic and labeled MLU datasets.
//!
//! Every demand matrix is drawn from the gravity model, rescaled so that its
//! minimum achievable MLU equals a target (1 by default), routed under the
//! study's scheme and stored together with its MLU label. Stored demands are
//! divided by the largest demand across the train/validate/test union; the
//! divisor is kept in a [`Normalization`] record so that the raw matrices can
//! be recovered.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{write_atomic, write_json_pretty};
use crate::mcnf::{self, MinMluResult};
use crate::rng::{derive_seed, rng_from_seed, sub_rng};
use crate::routing::{DemandMatrix, PathMetric, Router, Scheme};
use crate::topology::{is_trivial_topology, parse_topology, sample_variation, Topology, TopologyFormat};

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_SAMPLES_PER_SPLIT: usize = 1000;

/// Settings shared by every generated matrix in a study.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrafficConfig {
    /// Approximation factor of the min-MLU solver.
    pub epsilon: f64,
    /// Optimal MLU after rescaling.
    pub target_mlu: f64,
    pub metric: PathMetric,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        TrafficConfig { epsilon: mcnf::DEFAULT_EPSILON, target_mlu: 1.0, metric: PathMetric::Weight }
    }
}

/// Gravity matrix from explicit ingress/egress masses (indexed by node id).
///
/// `D[i][j] = in_i * out_j / Σ_k out_k` for present `i != j`; rows and
/// columns of nodes absent from `t` stay zero.
pub fn gravity_from_masses(t: &Topology, d_in: &[f64], d_out: &[f64]) -> DemandMatrix {
    let n = t.node_space();
    let present: Vec<usize> = t.node_ids().collect();
    let total_out: f64 = present.iter().map(|&k| d_out[k]).sum();
    let mut d = DemandMatrix::zeros(n);
    if total_out <= 0.0 {
        return d;
    }
    for &i in &present {
        for &j in &present {
            if i != j {
                d.set(i, j, d_in[i] * d_out[j] / total_out);
            }
        }
    }
    d
}

/// Unscaled gravity matrix with i.i.d. Exponential(1) masses.
pub fn gravity_unscaled<R: Rng + ?Sized>(t: &Topology, rng: &mut R) -> DemandMatrix {
    let n = t.node_space();
    let mut d_in = vec![0.0; n];
    let mut d_out = vec![0.0; n];
    for v in t.node_ids() {
        d_in[v] = Exp1.sample(rng);
        d_out[v] = Exp1.sample(rng);
    }
    gravity_from_masses(t, &d_in, &d_out)
}

/// Gravity matrix rescaled so that its optimal MLU equals `cfg.target_mlu`.
pub fn gravity_dm<R: Rng + ?Sized>(
    t: &Topology,
    rng: &mut R,
    cfg: &TrafficConfig,
) -> Result<(DemandMatrix, MinMluResult)> {
    let raw = gravity_unscaled(t, rng);
    let opt = mcnf::min_mlu(t, &raw, cfg.epsilon)?;
    Ok((mcnf::rescale_to_target(&raw, opt.theta, cfg.target_mlu)?, opt))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validate,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validate, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validate => "validate",
            Split::Test => "test",
        }
    }
}

/// Divisors used to standardize model inputs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub max_demand: f64,
    pub max_capacity: f64,
}

impl Normalization {
    pub fn demand(&self, raw: f64) -> f64 {
        raw / self.max_demand
    }

    pub fn denormalize_demand(&self, standardized: f64) -> f64 {
        standardized * self.max_demand
    }

    pub fn capacity(&self, raw: f64) -> f64 {
        raw / self.max_capacity
    }

    pub fn denormalize_capacity(&self, standardized: f64) -> f64 {
        standardized * self.max_capacity
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// Index into the bundle's variation list, if the sample was generated on
    /// a variation of the original graph.
    pub variation: Option<usize>,
    /// Standardized demands, row-major `N x N` over the original id space.
    pub demands: Vec<f64>,
    /// MLU of the unstandardized matrix under the study's scheme.
    pub label: f64,
}

impl Sample {
    /// Recovers the unstandardized demand matrix.
    pub fn demand_matrix(&self, norm: &Normalization) -> Result<DemandMatrix> {
        let n = (self.demands.len() as f64).sqrt().round() as usize;
        DemandMatrix::from_vec(n, self.demands.iter().map(|&v| norm.denormalize_demand(v)).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub samples: Vec<Sample>,
    pub normalization: Normalization,
    /// Set when the original topology failed the triviality screen.
    pub trivial_warning: bool,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Number of stored demand entries (including diagonal slots).
    pub fn flow_entries(&self) -> usize {
        self.samples.iter().map(|s| s.demands.len()).sum()
    }

    pub fn labels(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// First `count` samples, keeping split and normalization.
    pub fn truncated(&self, count: usize) -> Dataset {
        Dataset { samples: self.samples.iter().take(count).cloned().collect(), ..self.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub topology: String,
    pub topology_hash: String,
    pub scheme: Scheme,
    pub metric: PathMetric,
    pub normalization: Normalization,
    pub master_seed: u64,
    pub epsilon: f64,
    pub target_mlu: f64,
    pub samples_per_split: usize,
    pub variations: Option<usize>,
    pub n_nodes: usize,
    pub flow_entries: usize,
    pub trivial_warning: bool,
}

/// Train/validate/test datasets for one (topology, scheme) pair.
#[derive(Clone, Debug)]
pub struct DatasetBundle {
    pub topology: Topology,
    pub variations: Vec<Topology>,
    pub train: Dataset,
    pub validate: Dataset,
    pub test: Dataset,
    pub manifest: DatasetManifest,
}

impl DatasetBundle {
    pub fn split(&self, split: Split) -> &Dataset {
        match split {
            Split::Train => &self.train,
            Split::Validate => &self.validate,
            Split::Test => &self.test,
        }
    }

    /// Graph a sample was generated on.
    pub fn graph_of(&self, sample: &Sample) -> &Topology {
        match sample.variation {
            Some(k) => &self.variations[k],
            None => &self.topology,
        }
    }

    pub fn flow_entries(&self) -> usize {
        Split::ALL.iter().map(|&s| self.split(s).flow_entries()).sum()
    }

    pub fn normalization(&self) -> Normalization {
        self.manifest.normalization
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_atomic(&dir.join("topology.json"), self.topology.to_json()?.as_bytes())?;
        let variations: Vec<serde_json::Value> = self
            .variations
            .iter()
            .map(|v| serde_json::from_str(&v.to_json()?).map_err(Error::from))
            .collect::<Result<_>>()?;
        write_json_pretty(&dir.join("variations.json"), &variations)?;
        for split in Split::ALL {
            let mut text = Vec::new();
            for s in &self.split(split).samples {
                serde_json::to_writer(&mut text, s)?;
                text.push(b'\n');
            }
            write_atomic(&dir.join(format!("{}.jsonl", split.as_str())), &text)?;
        }
        write_json_pretty(&dir.join("manifest.json"), &self.manifest)
    }

    pub fn read_dir(dir: &Path) -> Result<DatasetBundle> {
        let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        if manifest.format_version != DATASET_FORMAT_VERSION {
            return Err(Error::validation(format!(
                "dataset format version {} is not supported",
                manifest.format_version
            )));
        }
        let topology = parse_topology(
            &fs::read_to_string(dir.join("topology.json"))?,
            TopologyFormat::NativeJson,
            &manifest.topology,
        )?;
        let raw: Vec<serde_json::Value> = serde_json::from_str(&fs::read_to_string(dir.join("variations.json"))?)?;
        let variations = raw
            .iter()
            .map(|v| parse_topology(&v.to_string(), TopologyFormat::NativeJson, &manifest.topology))
            .collect::<Result<Vec<_>>>()?;
        let read_split = |split: Split| -> Result<Dataset> {
            let text = fs::read_to_string(dir.join(format!("{}.jsonl", split.as_str())))?;
            let samples = text
                .lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(i + 1, e.to_string())))
                .collect::<Result<Vec<Sample>>>()?;
            Ok(Dataset {
                split,
                samples,
                normalization: manifest.normalization,
                trivial_warning: manifest.trivial_warning,
            })
        };
        Ok(DatasetBundle {
            train: read_split(Split::Train)?,
            validate: read_split(Split::Validate)?,
            test: read_split(Split::Test)?,
            topology,
            variations,
            manifest,
        })
    }
}

/// Options for [`build_datasets`].
#[derive(Clone, Debug)]
pub struct DatasetSpec {
    pub scheme: Scheme,
    pub samples_per_split: usize,
    /// Number of topology variations the samples are spread over.
    pub variations: Option<usize>,
    pub master_seed: u64,
    pub traffic: TrafficConfig,
    /// Run the 100-matrix triviality screen on the original graph.
    pub screen_triviality: bool,
}

impl DatasetSpec {
    pub fn new(scheme: Scheme, samples_per_split: usize, master_seed: u64) -> Self {
        DatasetSpec {
            scheme,
            samples_per_split,
            variations: None,
            master_seed,
            traffic: TrafficConfig::default(),
            screen_triviality: true,
        }
    }
}

struct RawSample {
    variation: Option<usize>,
    demands: DemandMatrix,
    label: f64,
}

/// Generates train/validate/test datasets for `t`.
///
/// Each split draws from its own labeled sub-stream of the master seed and
/// each sample from its own indexed stream below that, so generation is
/// parallel and reproducible.
pub fn build_datasets(t: &Topology, spec: &DatasetSpec) -> Result<DatasetBundle> {
    let n = spec.samples_per_split;
    if n == 0 {
        return Err(Error::Config("samples per split must be at least 1".into()));
    }
    if !t.is_original() {
        return Err(Error::validation("datasets are built from an original topology"));
    }
    let per_variation = match spec.variations {
        Some(0) => return Err(Error::Config("variation count must be at least 1".into())),
        Some(k) if n % k != 0 => {
            return Err(Error::Config(format!("{n} samples per split are not divisible by {k} variations")))
        }
        Some(k) => Some(n / k),
        None => None,
    };

    let variations = match spec.variations {
        Some(k) => (0..k)
            .map(|i| sample_variation(t, &mut sub_rng(spec.master_seed, "variation", i as u64)))
            .collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };
    let graphs: Vec<&Topology> = if variations.is_empty() { vec![t] } else { variations.iter().collect() };
    let routers = graphs
        .iter()
        .map(|g| Router::with_metric(g, spec.traffic.metric))
        .collect::<Result<Vec<_>>>()?;

    let generate = |split: Split| -> Result<Vec<RawSample>> {
        let split_seed = derive_seed(spec.master_seed, split.as_str(), 0);
        (0..n)
            .into_par_iter()
            .map(|i| {
                let slot = per_variation.map(|p| i / p);
                let router = &routers[slot.unwrap_or(0)];
                let mut rng = sub_rng(split_seed, "sample", i as u64);
                let (demands, _) = gravity_dm(router.topology(), &mut rng, &spec.traffic)?;
                let label = router.mlu(&demands, spec.scheme)?;
                Ok(RawSample { variation: slot, demands, label })
            })
            .collect()
    };
    let raw: Vec<(Split, Vec<RawSample>)> = Split::ALL
        .iter()
        .map(|&s| generate(s).map(|v| (s, v)))
        .collect::<Result<_>>()?;

    let max_demand = raw
        .iter()
        .flat_map(|(_, v)| v.iter().map(|s| s.demands.max_entry()))
        .fold(0.0, f64::max);
    let normalization = Normalization { max_demand, max_capacity: t.max_capacity() };

    let trivial_warning = spec.screen_triviality
        && is_trivial_topology(t, spec.scheme, &mut sub_rng(spec.master_seed, "triviality", 0), &spec.traffic)?;
    if trivial_warning {
        log::warn!("topology `{}` looks trivial under {}", t.name(), spec.scheme);
    }

    let mut datasets = raw.into_iter().map(|(split, samples)| Dataset {
        split,
        samples: samples
            .into_iter()
            .map(|s| Sample {
                variation: s.variation,
                demands: s.demands.as_slice().iter().map(|&v| normalization.demand(v)).collect(),
                label: s.label,
            })
            .collect(),
        normalization,
        trivial_warning,
    });
    let (train, validate, test) = (datasets.next().unwrap(), datasets.next().unwrap(), datasets.next().unwrap());
    let flow_entries = train.flow_entries() + validate.flow_entries() + test.flow_entries();
    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        topology: t.name().to_string(),
        topology_hash: t.content_hash(),
        scheme: spec.scheme,
        metric: spec.traffic.metric,
        normalization,
        master_seed: spec.master_seed,
        epsilon: spec.traffic.epsilon,
        target_mlu: spec.traffic.target_mlu,
        samples_per_split: n,
        variations: spec.variations,
        n_nodes: t.node_space(),
        flow_entries,
        trivial_warning,
    };
    Ok(DatasetBundle { topology: t.clone(), variations, train, validate, test, manifest })
}

/// Total stored demand entries for three splits of `samples_per_split`
/// matrices over `n_nodes` nodes.
pub fn expected_flow_entries(samples_per_split: usize, n_nodes: usize) -> usize {
    3 * samples_per_split * n_nodes * n_nodes
}

/// Node feature `[D[0][i], …, D[N-1][i], D[i][0], …, D[i][N-1]]`: incoming
/// demands followed by outgoing demands.
pub fn representation_raw(demands: &[f64], n: usize, node: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * n);
    out.extend((0..n).map(|j| demands[j * n + node]));
    out.extend_from_slice(&demands[node * n..(node + 1) * n]);
    out
}

/// Node feature `[Σ_j D[i][j], Σ_j D[j][i]]`.
pub fn representation_sum(demands: &[f64], n: usize, node: usize) -> [f64; 2] {
    let out: f64 = demands[node * n..(node + 1) * n].iter().sum();
    let inn: f64 = (0..n).map(|j| demands[j * n + node]).sum();
    [out, inn]
}

/// Seeded helper used by tests and the CLI to draw a single rescaled matrix.
pub fn seeded_gravity_dm(t: &Topology, seed: u64, cfg: &TrafficConfig) -> Result<DemandMatrix> {
    Ok(gravity_dm(t, &mut rng_from_seed(seed), cfg)?.0)
}
