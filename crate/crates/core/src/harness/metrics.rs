use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SMOOTHING_ALPHA: f64 = 0.92;
pub const SMOOTHING_SKIP: usize = 5;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn mse(pred: &[f64], targets: &[f64]) -> f64 {
    debug_assert_eq!(pred.len(), targets.len());
    pred.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / targets.len() as f64
}

/// MSE relative to a predictor that always outputs `baseline_mean`.
pub fn nmse(pred: &[f64], targets: &[f64], baseline_mean: f64) -> Result<f64> {
    if pred.len() != targets.len() || targets.is_empty() {
        return Err(Error::validation(format!("{} predictions for {} targets", pred.len(), targets.len())));
    }
    let base: f64 = targets.iter().map(|t| (baseline_mean - t) * (baseline_mean - t)).sum::<f64>() / targets.len() as f64;
    if base == 0.0 {
        return Err(Error::validation("baseline MSE is zero; labels are constant"));
    }
    Ok(mse(pred, targets) / base)
}

/// Per-architecture ranking summary over a set of topologies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankSummary {
    /// Mean reciprocal rank.
    pub mrr: f64,
    /// Percentage of topologies won; ties split the win.
    pub wr: f64,
}

/// `table[topology][architecture] = nmse`.
pub type NmseTable = BTreeMap<String, BTreeMap<String, f64>>;

/// Competition ranks (1 = lowest NMSE, ties share the better rank).
pub fn competition_ranks(scores: &BTreeMap<String, f64>) -> BTreeMap<String, usize> {
    scores
        .iter()
        .map(|(k, &v)| (k.clone(), 1 + scores.values().filter(|&&o| o < v).count()))
        .collect()
}

pub fn rank_metrics(table: &NmseTable) -> Result<BTreeMap<String, RankSummary>> {
    let Some(first) = table.values().next() else {
        return Err(Error::validation("empty NMSE table"));
    };
    let archs: Vec<&String> = first.keys().collect();
    for (topo, row) in table {
        if row.len() != archs.len() || archs.iter().any(|a| !row.contains_key(*a)) {
            return Err(Error::validation(format!("topology {topo} lacks some architectures")));
        }
    }
    let mut rr: BTreeMap<String, f64> = archs.iter().map(|a| ((*a).clone(), 0.0)).collect();
    let mut wins = rr.clone();
    for row in table.values() {
        let ranks = competition_ranks(row);
        let winners = ranks.values().filter(|&&r| r == 1).count() as f64;
        for (arch, r) in ranks {
            *rr.get_mut(&arch).expect("known") += 1.0 / r as f64;
            if r == 1 {
                *wins.get_mut(&arch).expect("known") += 1.0 / winners;
            }
        }
    }
    let n = table.len() as f64;
    Ok(rr
        .into_iter()
        .map(|(a, s)| {
            let wr = 100.0 * wins[&a] / n;
            (a, RankSummary { mrr: s / n, wr })
        })
        .collect())
}

/// Three-decimal rendering used in summary tables.
pub fn format_metric(x: f64) -> String {
    format!("{x:.3}")
}

/// Drops the first `skip` values, caps the rest at the first retained value
/// and applies exponential weighting `s_t = alpha * s_{t-1} + (1 - alpha) * x_t`.
pub fn smooth_curve(losses: &[f64], alpha: f64, skip: usize) -> Result<Vec<f64>> {
    if losses.len() <= skip {
        return Err(Error::validation(format!("curve of length {} too short to skip {skip}", losses.len())));
    }
    let cap = losses[skip];
    let mut out = Vec::with_capacity(losses.len() - skip);
    let mut s = cap;
    for (i, &x) in losses[skip..].iter().enumerate() {
        let x = x.min(cap);
        s = if i == 0 { x } else { alpha * s + (1.0 - alpha) * x };
        out.push(s);
    }
    Ok(out)
}

/// Average ranks, 1-based, ties receiving the mean of their positions.
fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Spearman rank correlation; `None` when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Percentage change in NMSE when moving from `other` to `pew`.
pub fn percent_change(other: f64, pew: f64) -> f64 {
    100.0 * (pew - other) / other
}
