//! Subcommands of the `pewflow` binary.
//!
//! Each command reads its inputs, runs one stage of the study and writes its
//! outputs atomically next to a manifest describing how they were produced.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use pewflow::autodiff::Checkpoint;
use pewflow::harness::{
    correlation_csv, curve_csv, demand_representation_study, grid, grid_search, rank_metrics, rank_table_csv,
    representation_csv, summary_csv, topology_correlation, GridResult, NmseTable, Preset, RepStudySettings,
    TopologyRow, TrainConfig,
};
use pewflow::io::{write_atomic, write_json_pretty};
use pewflow::models::{Architecture, ModelConfig};
use pewflow::routing::{route, DemandMatrix, RoutingOutcome, Scheme};
use pewflow::topology::{compute_metrics, parse_topology, Topology, TopologyFormat, TopologyMetrics};
use pewflow::traffic::{build_datasets, DatasetBundle, DatasetManifest, DatasetSpec, DEFAULT_SAMPLES_PER_SPLIT};

#[derive(Debug, Parser)]
#[command(name = "pewflow", version, about = "MLU prediction studies on ISP topologies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate labeled train/validate/test demand matrices for a topology.
    GenData(GenDataArgs),
    /// Grid-search one architecture on a generated dataset.
    Train(TrainArgs),
    /// Summarize training results into NMSE and ranking tables.
    Evaluate(EvaluateArgs),
    /// Topology-correlation and demand-representation reports.
    Analyze(AnalyzeArgs),
    /// Route one demand matrix and print the link loads and MLU.
    Route(RouteArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub topology: PathBuf,
    /// `repetita` or `json`; inferred from the extension when omitted.
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long, default_value = "ssp")]
    pub scheme: Scheme,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_SAMPLES_PER_SPLIT)]
    pub samples: usize,
    /// Spread samples over this many random topology variations.
    #[arg(long)]
    pub variations: Option<usize>,
    #[arg(long, default_value_t = pewflow::mcnf::DEFAULT_EPSILON)]
    pub epsilon: f64,
    /// Skip the 100-matrix triviality screen.
    #[arg(long)]
    pub no_screen: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TrainingOptions {
    #[arg(long, default_value = "desk")]
    pub preset: Preset,
    /// Override the preset's epoch budget.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Override the preset's early-stopping patience.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Override the number of seeds (seeds 0..N).
    #[arg(long)]
    pub seeds: Option<u64>,
}

impl TrainingOptions {
    pub fn resolve(&self) -> Result<TrainConfig> {
        let mut tc = TrainConfig::preset(self.preset);
        if let Some(e) = self.epochs {
            tc.epochs = e;
            tc.patience = tc.patience.min(e);
        }
        if let Some(p) = self.patience {
            tc.patience = p;
        }
        if let Some(s) = self.seeds {
            tc.seeds = (0..s).collect();
        }
        tc.validate()?;
        Ok(tc)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by `gen-data`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub arch: Architecture,
    #[command(flatten)]
    pub training: TrainingOptions,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory holding `*.result.json` files.
    #[arg(long)]
    pub results: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub results: PathBuf,
    /// Architecture whose NMSE is related to topology metrics.
    #[arg(long, default_value = "pew")]
    pub focus: Architecture,
    /// Dataset directories for the representation study; skipped when empty.
    #[arg(long)]
    pub data: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.05, 0.1, 0.25, 0.5, 1.0])]
    pub fractions: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![Architecture::Pew, Architecture::Gat])]
    pub archs: Vec<Architecture>,
    #[arg(long, default_value_t = 5e-3)]
    pub lr: f64,
    #[command(flatten)]
    pub training: TrainingOptions,
}

#[derive(Debug, Args)]
pub struct RouteArgs {
    #[arg(long)]
    pub topology: PathBuf,
    #[arg(long)]
    pub format: Option<String>,
    /// JSON array of demand rows.
    #[arg(long)]
    pub dm: PathBuf,
    #[arg(long, default_value = "ssp")]
    pub scheme: Scheme,
    /// Also write the outcome to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Provenance embedded in (or written beside) every output.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StudyManifest {
    pub tool_version: String,
    pub command: String,
    pub topology_paths: Vec<String>,
    pub scheme: Option<Scheme>,
    pub master_seed: Option<u64>,
    pub epsilon: Option<f64>,
    pub samples_per_split: Option<usize>,
    pub variations: Option<usize>,
    pub preset: Option<Preset>,
    pub train: Option<TrainConfig>,
    pub architecture: Option<Architecture>,
    pub output_dir: String,
}

impl StudyManifest {
    fn new(command: &str, out: &Path) -> Self {
        StudyManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            output_dir: out.display().to_string(),
            ..Default::default()
        }
    }
}

/// Contents of a `*.result.json` file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResultFile {
    pub manifest: StudyManifest,
    pub dataset: DatasetManifest,
    pub topology_metrics: TopologyMetrics,
    pub result: GridResult,
}

/// Best checkpoint plus what is needed to rebuild the model around it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub architecture: Architecture,
    pub config: ModelConfig,
    pub topology_hash: String,
    pub seed: u64,
    pub checkpoint: Checkpoint,
}

pub fn read_topology(path: &Path, format: Option<&str>) -> Result<Topology> {
    let format = match format {
        Some(f) => f.parse::<TopologyFormat>()?,
        None if path.extension().is_some_and(|e| e == "json") => TopologyFormat::NativeJson,
        None => TopologyFormat::Repetita,
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "topology".into());
    Ok(parse_topology(&text, format, &name)?)
}

pub struct GenDataOutcome {
    pub manifest: DatasetManifest,
}

pub fn cmd_gen_data(args: &GenDataArgs) -> Result<GenDataOutcome> {
    let t = read_topology(&args.topology, args.format.as_deref())?;
    let mut spec = DatasetSpec::new(args.scheme, args.samples, args.seed);
    spec.variations = args.variations;
    spec.traffic.epsilon = args.epsilon;
    spec.screen_triviality = !args.no_screen;
    let bundle = build_datasets(&t, &spec)?;
    bundle.write_dir(&args.out)?;
    let mut m = StudyManifest::new("gen-data", &args.out);
    m.topology_paths = vec![args.topology.display().to_string()];
    m.scheme = Some(args.scheme);
    m.master_seed = Some(args.seed);
    m.epsilon = Some(args.epsilon);
    m.samples_per_split = Some(args.samples);
    m.variations = args.variations;
    write_json_pretty(&args.out.join("study_manifest.json"), &m)?;
    Ok(GenDataOutcome { manifest: bundle.manifest })
}

fn result_stem(topology: &str, scheme: Scheme, arch: Architecture) -> String {
    format!("{topology}__{scheme}__{arch}")
}

pub fn cmd_train(args: &TrainArgs) -> Result<PathBuf> {
    let bundle = DatasetBundle::read_dir(&args.data).with_context(|| format!("reading {}", args.data.display()))?;
    let tc = args.training.resolve()?;
    let configs = grid(args.arch, &bundle);
    let result = grid_search(&configs, &bundle, &tc)?;

    let mut m = StudyManifest::new("train", &args.out);
    m.topology_paths = vec![args.data.display().to_string()];
    m.scheme = Some(bundle.manifest.scheme);
    m.master_seed = Some(bundle.manifest.master_seed);
    m.epsilon = Some(bundle.manifest.epsilon);
    m.samples_per_split = Some(bundle.manifest.samples_per_split);
    m.variations = bundle.manifest.variations;
    m.preset = Some(args.training.preset);
    m.train = Some(tc);
    m.architecture = Some(args.arch);

    let stem = result_stem(bundle.topology.name(), bundle.manifest.scheme, args.arch);
    let best = result.best_config();
    let chosen = best
        .runs
        .iter()
        .filter(|r| !r.failed())
        .min_by(|a, b| a.best_val_mse.total_cmp(&b.best_val_mse))
        .context("selected config has no successful run")?;
    if let Some(ck) = &chosen.checkpoint {
        let model = ModelFile {
            architecture: args.arch,
            config: chosen.config.clone(),
            topology_hash: bundle.manifest.topology_hash.clone(),
            seed: chosen.seed,
            checkpoint: ck.clone(),
        };
        write_json_pretty(&args.out.join(format!("{stem}.checkpoint.json")), &model)?;
    }
    write_atomic(&args.out.join(format!("{stem}.curve.csv")), curve_csv(&chosen.val_losses)?.as_bytes())?;

    let file = ResultFile {
        manifest: m,
        dataset: bundle.manifest.clone(),
        topology_metrics: compute_metrics(&bundle.topology),
        result,
    };
    let path = args.out.join(format!("{stem}.result.json"));
    write_json_pretty(&path, &file)?;
    Ok(path)
}

/// Every `*.result.json` under `dir`, in file-name order.
pub fn read_results(dir: &Path) -> Result<Vec<ResultFile>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().is_some_and(|n| n.to_string_lossy().ends_with(".result.json")))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| -> Result<ResultFile> {
            let text = fs::read_to_string(p)?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        })
        .collect()
}

/// NMSE table per scheme, keeping only topologies that have every architecture.
pub fn nmse_tables(results: &[ResultFile]) -> BTreeMap<Scheme, NmseTable> {
    let mut tables: BTreeMap<Scheme, NmseTable> = BTreeMap::new();
    for r in results {
        tables
            .entry(r.result.scheme)
            .or_default()
            .entry(r.result.topology.clone())
            .or_default()
            .insert(r.result.architecture.to_string(), r.result.test_nmse_mean);
    }
    for table in tables.values_mut() {
        let archs: BTreeSet<String> = table.values().flat_map(|row| row.keys().cloned()).collect();
        table.retain(|topo, row| {
            let complete = row.len() == archs.len();
            if !complete {
                log::warn!("{topo}: missing architectures, left out of the ranking");
            }
            complete
        });
    }
    tables
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<Vec<PathBuf>> {
    let results = read_results(&args.results)?;
    if results.is_empty() {
        bail!(pewflow::Error::Validation(format!("no result files in {}", args.results.display())));
    }
    let grids: Vec<GridResult> = results.iter().map(|r| r.result.clone()).collect();
    let summary = args.results.join("summary.csv");
    write_atomic(&summary, summary_csv(&grids)?.as_bytes())?;

    let mut rows = Vec::new();
    for (scheme, table) in nmse_tables(&results) {
        if table.is_empty() {
            continue;
        }
        for (arch, s) in rank_metrics(&table)? {
            rows.push((scheme, arch, s));
        }
    }
    let ranks = args.results.join("ranks.csv");
    write_atomic(&ranks, rank_table_csv(&rows)?.as_bytes())?;

    let mut m = StudyManifest::new("evaluate", &args.results);
    m.topology_paths = results.iter().flat_map(|r| r.manifest.topology_paths.clone()).collect();
    let manifest = args.results.join("evaluate.manifest.json");
    write_json_pretty(&manifest, &m)?;
    Ok(vec![summary, ranks, manifest])
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<Vec<PathBuf>> {
    let results = read_results(&args.results)?;
    let mut written = Vec::new();
    let mut metrics: BTreeMap<String, TopologyMetrics> = BTreeMap::new();
    for r in &results {
        metrics.insert(r.result.topology.clone(), r.topology_metrics.clone());
    }
    for (scheme, table) in nmse_tables(&results) {
        let rows: Vec<TopologyRow> = table
            .into_iter()
            .map(|(topology, nmse)| TopologyRow { metrics: metrics[&topology].clone(), topology, nmse })
            .collect();
        if rows.len() < 3 {
            log::warn!("{scheme}: {} topologies, correlation report needs 3", rows.len());
            continue;
        }
        let report = topology_correlation(&rows, args.focus.as_str())?;
        let json = args.results.join(format!("correlation_{scheme}.json"));
        write_json_pretty(&json, &report)?;
        let csv = args.results.join(format!("correlation_{scheme}.csv"));
        write_atomic(&csv, correlation_csv(&report)?.as_bytes())?;
        written.extend([json, csv]);
    }

    let mut m = StudyManifest::new("analyze", &args.results);
    if !args.data.is_empty() {
        let tc = args.training.resolve()?;
        let bundles = args
            .data
            .iter()
            .map(|d| DatasetBundle::read_dir(d).with_context(|| format!("reading {}", d.display())))
            .collect::<Result<Vec<_>>>()?;
        let settings = RepStudySettings { learning_rate: args.lr, width_choice: 0 };
        let report = demand_representation_study(&bundles, &args.archs, &args.fractions, &tc, settings)?;
        let json = args.results.join("representation.json");
        write_json_pretty(&json, &report)?;
        let csv = args.results.join("representation.csv");
        write_atomic(&csv, representation_csv(&report)?.as_bytes())?;
        written.extend([json, csv]);
        m.topology_paths = args.data.iter().map(|d| d.display().to_string()).collect();
        m.preset = Some(args.training.preset);
        m.train = Some(tc);
    }
    let manifest = args.results.join("analyze.manifest.json");
    write_json_pretty(&manifest, &m)?;
    written.push(manifest);
    Ok(written)
}

pub fn cmd_route(args: &RouteArgs) -> Result<RoutingOutcome> {
    let t = read_topology(&args.topology, args.format.as_deref())?;
    let text = fs::read_to_string(&args.dm).with_context(|| format!("reading {}", args.dm.display()))?;
    let d: DemandMatrix = serde_json::from_str(&text).map_err(pewflow::Error::from)?;
    let outcome = route(&t, &d, args.scheme)?;
    if let Some(out) = &args.out {
        write_json_pretty(out, &outcome)?;
    }
    Ok(outcome)
}

/// Exit code for a failed command: 2 for bad input, 3 for runtime failures.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<pewflow::Error>() {
        Some(e) if e.is_validation() => 2,
        Some(_) => 3,
        None if err.downcast_ref::<serde_json::Error>().is_some() => 2,
        None if err.downcast_ref::<std::io::Error>().is_some() => 3,
        None => 3,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => {
            let out = cmd_gen_data(&a)?;
            if out.manifest.trivial_warning {
                eprintln!("warning: {} looks trivial (minimum MLU equals the 90th percentile)", out.manifest.topology);
            }
            println!("{}", serde_json::to_string_pretty(&out.manifest)?);
        }
        Command::Train(a) => println!("{}", cmd_train(&a)?.display()),
        Command::Evaluate(a) => {
            for p in cmd_evaluate(&a)? {
                println!("{}", p.display());
            }
        }
        Command::Analyze(a) => {
            for p in cmd_analyze(&a)? {
                println!("{}", p.display());
            }
        }
        Command::Route(a) => println!("{}", serde_json::to_string(&cmd_route(&a)?)?),
    }
    Ok(())
}
