use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Architecture, ModelConfig, Representation};
use crate::routing::Scheme;
use crate::topology::TopologyMetrics;
use crate::traffic::DatasetBundle;

use super::metrics::{mean, percent_change, sample_std, smooth_curve, spearman, SMOOTHING_ALPHA, SMOOTHING_SKIP};
use super::train::{train, RunResult, TrainConfig};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConfigOutcome {
    pub config: ModelConfig,
    pub runs: Vec<RunResult>,
    /// Mean best validation MSE over runs that did not fail.
    #[serde(with = "super::train::non_finite")]
    pub mean_val_mse: f64,
    pub failed_runs: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridResult {
    pub architecture: Architecture,
    pub topology: String,
    pub scheme: Scheme,
    pub configs: Vec<ConfigOutcome>,
    /// Index of the selected config.
    pub best: usize,
    #[serde(with = "super::train::non_finite")]
    pub test_nmse_mean: f64,
    /// Sample standard deviation over seeds.
    #[serde(with = "super::train::non_finite")]
    pub test_nmse_std: f64,
}

impl GridResult {
    pub fn best_config(&self) -> &ConfigOutcome {
        &self.configs[self.best]
    }
}

/// Trains every config under every seed and selects by mean validation MSE.
/// Ties go to the smaller learning rate, then the smaller width.
pub fn grid_search(configs: &[ModelConfig], bundle: &DatasetBundle, tc: &TrainConfig) -> Result<GridResult> {
    let Some(first) = configs.first() else {
        return Err(Error::Config("empty hyperparameter grid".into()));
    };
    tc.validate()?;
    let units: Vec<(usize, u64)> =
        (0..configs.len()).flat_map(|c| tc.seeds.iter().map(move |&s| (c, s))).collect();
    let runs: Vec<RunResult> =
        units.par_iter().map(|&(c, s)| train(&configs[c], bundle, tc, s)).collect::<Result<_>>()?;

    let mut outcomes = Vec::with_capacity(configs.len());
    let mut per_seed = runs.into_iter();
    for cfg in configs {
        let runs: Vec<RunResult> = per_seed.by_ref().take(tc.seeds.len()).collect();
        let ok: Vec<f64> = runs.iter().filter(|r| !r.failed()).map(|r| r.best_val_mse).collect();
        outcomes.push(ConfigOutcome {
            config: cfg.clone(),
            failed_runs: runs.len() - ok.len(),
            mean_val_mse: if ok.is_empty() { f64::INFINITY } else { mean(&ok) },
            runs,
        });
    }
    let best = (0..outcomes.len())
        .filter(|&i| outcomes[i].failed_runs < outcomes[i].runs.len())
        .min_by(|&a, &b| {
            let (x, y) = (&outcomes[a], &outcomes[b]);
            x.mean_val_mse
                .total_cmp(&y.mean_val_mse)
                .then(x.config.learning_rate.total_cmp(&y.config.learning_rate))
                .then(x.config.hidden.cmp(&y.config.hidden))
        })
        .ok_or_else(|| Error::Training(format!("every {} run failed", first.architecture)))?;
    let nmses: Vec<f64> = outcomes[best].runs.iter().filter(|r| !r.failed()).map(|r| r.test_nmse).collect();
    Ok(GridResult {
        architecture: first.architecture,
        topology: bundle.topology.name().to_string(),
        scheme: bundle.manifest.scheme,
        test_nmse_mean: mean(&nmses),
        test_nmse_std: sample_std(&nmses),
        configs: outcomes,
        best,
    })
}

/// Fixed hyperparameters for the representation study.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepStudySettings {
    pub learning_rate: f64,
    /// 0 for the smaller grid width, 1 for the larger.
    pub width_choice: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepStudyPoint {
    pub topology: String,
    pub architecture: Architecture,
    pub fraction: f64,
    pub train_samples: usize,
    pub raw_nmse: f64,
    pub sum_nmse: f64,
    /// `raw_nmse - sum_nmse`; positive means the raw representation did worse.
    pub diff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepStudyReport {
    pub legend: String,
    pub points: Vec<RepStudyPoint>,
    /// (architecture, fraction, diff averaged across topologies).
    pub mean_diff: Vec<(Architecture, f64, f64)>,
}

/// Number of samples kept when subsampling `len` items to `fraction`.
pub fn subsample_count(len: usize, fraction: f64) -> usize {
    (len as f64 * fraction).round() as usize
}

fn subsampled(bundle: &DatasetBundle, fraction: f64, batch: usize) -> Result<DatasetBundle> {
    let n_train = subsample_count(bundle.train.len(), fraction);
    let n_val = subsample_count(bundle.validate.len(), fraction);
    if n_train < batch || n_val < 1 {
        return Err(Error::validation(format!(
            "fraction {fraction} leaves {n_train} training samples, below one batch of {batch}"
        )));
    }
    let mut out = bundle.clone();
    out.train = bundle.train.truncated(n_train);
    out.validate = bundle.validate.truncated(n_val);
    Ok(out)
}

fn mean_test_nmse(cfg: &ModelConfig, bundle: &DatasetBundle, tc: &TrainConfig) -> Result<f64> {
    let runs: Vec<RunResult> = tc.seeds.par_iter().map(|&s| train(cfg, bundle, tc, s)).collect::<Result<_>>()?;
    let ok: Vec<f64> = runs.iter().filter(|r| !r.failed()).map(|r| r.test_nmse).collect();
    if ok.is_empty() {
        return Err(Error::Training(format!("every {} run failed", cfg.architecture)));
    }
    Ok(mean(&ok))
}

/// Trains raw and sum representations on shrinking training subsets and
/// reports the NMSE difference per fraction.
pub fn demand_representation_study(
    bundles: &[DatasetBundle],
    architectures: &[Architecture],
    fractions: &[f64],
    tc: &TrainConfig,
    settings: RepStudySettings,
) -> Result<RepStudyReport> {
    let mut points = Vec::new();
    for &fraction in fractions {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Config(format!("fraction {fraction} outside (0, 1]")));
        }
        for bundle in bundles {
            let sub = subsampled(bundle, fraction, tc.batch_size)?;
            for &arch in architectures {
                let mut nmse = [0.0; 2];
                for (slot, rep) in Representation::ALL.into_iter().enumerate() {
                    let width = arch.widths(rep)[settings.width_choice.min(1)];
                    let cfg = ModelConfig::new(arch, width, rep, &bundle.topology, settings.learning_rate);
                    nmse[slot] = mean_test_nmse(&cfg, &sub, tc)?;
                }
                points.push(RepStudyPoint {
                    topology: bundle.topology.name().to_string(),
                    architecture: arch,
                    fraction,
                    train_samples: sub.train.len(),
                    raw_nmse: nmse[0],
                    sum_nmse: nmse[1],
                    diff: nmse[0] - nmse[1],
                });
            }
        }
    }
    let mut mean_diff = Vec::new();
    for &arch in architectures {
        for &fraction in fractions {
            let diffs: Vec<f64> =
                points.iter().filter(|p| p.architecture == arch && p.fraction == fraction).map(|p| p.diff).collect();
            mean_diff.push((arch, fraction, mean(&diffs)));
        }
    }
    Ok(RepStudyReport {
        legend: "diff = nmse(raw) - nmse(sum); diff > 0 means the raw representation performed worse".into(),
        points,
        mean_diff,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopologyRow {
    pub topology: String,
    pub metrics: TopologyMetrics,
    /// Test NMSE per architecture name.
    pub nmse: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationPair {
    pub topology: String,
    pub metric: String,
    pub value: f64,
    pub nmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PercentChange {
    pub topology: String,
    pub metric: String,
    pub value: f64,
    pub architecture: String,
    /// Change in NMSE going from `architecture` to the focus architecture.
    pub percent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub focus: String,
    pub pairs: Vec<CorrelationPair>,
    /// Spearman correlation per metric; `None` when undefined.
    pub correlations: Vec<(String, Option<f64>)>,
    pub percent_changes: Vec<PercentChange>,
}

/// Relates the focus architecture's NMSE to topology characteristics.
pub fn topology_correlation(rows: &[TopologyRow], focus: &str) -> Result<CorrelationReport> {
    if rows.len() < 3 {
        return Err(Error::validation(format!("need at least 3 topologies, got {}", rows.len())));
    }
    let focus_nmse: Vec<f64> = rows
        .iter()
        .map(|r| r.nmse.get(focus).copied().ok_or_else(|| Error::validation(format!("{} lacks {focus}", r.topology))))
        .collect::<Result<_>>()?;
    let mut pairs = Vec::new();
    let mut percent_changes = Vec::new();
    let mut correlations = Vec::new();
    for (k, name) in TopologyMetrics::NAMES.iter().enumerate() {
        let values: Vec<f64> = rows.iter().map(|r| r.metrics.values()[k]).collect();
        for (r, (&v, &y)) in rows.iter().zip(values.iter().zip(&focus_nmse)) {
            pairs.push(CorrelationPair { topology: r.topology.clone(), metric: name.to_string(), value: v, nmse: y });
            for (arch, &other) in &r.nmse {
                if arch != focus {
                    percent_changes.push(PercentChange {
                        topology: r.topology.clone(),
                        metric: name.to_string(),
                        value: v,
                        architecture: arch.clone(),
                        percent: percent_change(other, y),
                    });
                }
            }
        }
        correlations.push((name.to_string(), spearman(&values, &focus_nmse)));
    }
    Ok(CorrelationReport { focus: focus.to_string(), pairs, correlations, percent_changes })
}

fn csv_string(write: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    write(&mut w).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(std::io::Error::other(e)))
}

/// One row per topology x architecture x scheme.
pub fn summary_csv(results: &[GridResult]) -> Result<String> {
    csv_string(|w| {
        w.write_record([
            "topology",
            "scheme",
            "architecture",
            "nmse_mean",
            "nmse_sample_std",
            "runs",
            "failed_runs",
            "learning_rate",
            "representation",
            "hidden",
        ])?;
        for r in results {
            let best = r.best_config();
            let failed: usize = r.configs.iter().map(|c| c.failed_runs).sum();
            let runs: usize = r.configs.iter().map(|c| c.runs.len()).sum();
            w.write_record([
                r.topology.clone(),
                r.scheme.to_string(),
                r.architecture.to_string(),
                r.test_nmse_mean.to_string(),
                r.test_nmse_std.to_string(),
                runs.to_string(),
                failed.to_string(),
                best.config.learning_rate.to_string(),
                best.config.representation.to_string(),
                best.config.hidden.to_string(),
            ])?;
        }
        Ok(())
    })
}

/// Ranking table: one row per scheme x architecture with MRR and WR.
pub fn rank_table_csv(rows: &[(Scheme, String, super::metrics::RankSummary)]) -> Result<String> {
    csv_string(|w| {
        w.write_record(["scheme", "architecture", "mrr", "wr"])?;
        for (scheme, arch, s) in rows {
            w.write_record([
                scheme.to_string(),
                arch.clone(),
                super::metrics::format_metric(s.mrr),
                super::metrics::format_metric(s.wr),
            ])?;
        }
        Ok(())
    })
}

/// `epoch,raw,smoothed`; the smoothed column is empty for skipped epochs.
pub fn curve_csv(val_losses: &[f64]) -> Result<String> {
    let smooth = smooth_curve(val_losses, SMOOTHING_ALPHA, SMOOTHING_SKIP).unwrap_or_default();
    csv_string(|w| {
        w.write_record(["epoch", "raw", "smoothed"])?;
        for (i, v) in val_losses.iter().enumerate() {
            let s = i.checked_sub(SMOOTHING_SKIP).and_then(|k| smooth.get(k)).map(|x| x.to_string()).unwrap_or_default();
            w.write_record([(i + 1).to_string(), v.to_string(), s])?;
        }
        Ok(())
    })
}

pub fn correlation_csv(report: &CorrelationReport) -> Result<String> {
    csv_string(|w| {
        w.write_record(["topology", "metric", "value", "nmse"])?;
        for p in &report.pairs {
            w.write_record([p.topology.clone(), p.metric.clone(), p.value.to_string(), p.nmse.to_string()])?;
        }
        Ok(())
    })
}

pub fn representation_csv(report: &RepStudyReport) -> Result<String> {
    csv_string(|w| {
        w.write_record(["topology", "architecture", "fraction", "train_samples", "raw_nmse", "sum_nmse", "diff"])?;
        for p in &report.points {
            w.write_record([
                p.topology.clone(),
                p.architecture.to_string(),
                p.fraction.to_string(),
                p.train_samples.to_string(),
                p.raw_nmse.to_string(),
                p.sum_nmse.to_string(),
                p.diff.to_string(),
            ])?;
        }
        Ok(())
    })
}
