use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState, Checkpoint, Tape};
use crate::error::{Error, Result};
use crate::models::{build_model, Architecture, Model, ModelConfig, Prepared};
use crate::rng::{derive_seed, sub_rng};
use crate::traffic::DatasetBundle;

use super::metrics::{mean, mse, nmse};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Full,
    Desk,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Preset::Full),
            "desk" => Ok(Preset::Desk),
            other => Err(Error::Config(format!("unknown preset `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub seeds: Vec<u64>,
    pub adam: AdamConfig,
}

impl TrainConfig {
    pub fn full() -> Self {
        TrainConfig { epochs: 3000, batch_size: 16, patience: 1500, seeds: (0..10).collect(), adam: AdamConfig::default() }
    }

    pub fn desk() -> Self {
        TrainConfig { epochs: 300, batch_size: 16, patience: 150, seeds: (0..3).collect(), adam: AdamConfig::default() }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Full => TrainConfig::full(),
            Preset::Desk => TrainConfig::desk(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if self.patience == 0 || self.patience > self.epochs {
            return Err(Error::Config(format!("patience {} must lie in [1, {}]", self.patience, self.epochs)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::full()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunResult {
    pub config: ModelConfig,
    pub seed: u64,
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
    /// 1-based epoch of the retained checkpoint.
    pub best_epoch: usize,
    #[serde(with = "non_finite")]
    pub best_val_mse: f64,
    #[serde(with = "non_finite")]
    pub test_mse: f64,
    #[serde(with = "non_finite")]
    pub test_nmse: f64,
    /// Mean training label, the NMSE baseline.
    pub baseline_mean: f64,
    /// Diagnostic when training diverged; metrics are NaN in that case.
    pub failure: Option<String>,
    #[serde(skip)]
    pub checkpoint: Option<Checkpoint>,
}

impl RunResult {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

fn batch_loss(model: &Model, batch: &[&Prepared]) -> Result<(f64, Vec<Vec<f64>>)> {
    let tape = Tape::new();
    let vars = model.params.bind(&tape);
    let pred = model.forward(&tape, &vars, batch)?;
    let targets: Vec<f64> = batch.iter().map(|p| p.label).collect();
    let loss = pred.mse_loss(&targets)?;
    let grads = tape.backward(loss)?;
    Ok((loss.item(), vars.iter().map(|v| grads.of(*v)).collect()))
}

/// Mini-batch Adam on MSE with early stopping on validation MSE.
///
/// Training stops once `patience` epochs pass without a new best validation
/// loss; test metrics come from the best checkpoint.
pub fn train(config: &ModelConfig, bundle: &DatasetBundle, tc: &TrainConfig, seed: u64) -> Result<RunResult> {
    tc.validate()?;
    let mut model = build_model(
        config,
        &bundle.topology,
        &bundle.variations,
        &bundle.normalization(),
        derive_seed(seed, "init", 0),
    )?;
    let train_set = model.prepare_dataset(&bundle.train)?;
    let val_set = model.prepare_dataset(&bundle.validate)?;
    let test_set = model.prepare_dataset(&bundle.test)?;
    if train_set.is_empty() || val_set.is_empty() || test_set.is_empty() {
        return Err(Error::Training("every split needs at least one sample".into()));
    }
    let baseline_mean = mean(&bundle.train.labels());
    let val_targets = bundle.validate.labels();
    let test_targets = bundle.test.labels();

    let mut adam = AdamState::new(&model.params, tc.adam);
    let mut rng = sub_rng(seed, "shuffle", 0);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut result = RunResult {
        config: config.clone(),
        seed,
        train_losses: Vec::new(),
        val_losses: Vec::new(),
        best_epoch: 0,
        best_val_mse: f64::INFINITY,
        test_mse: f64::NAN,
        test_nmse: f64::NAN,
        baseline_mean,
        failure: None,
        checkpoint: None,
    };
    let mut best = model.params.clone();

    for epoch in 1..=tc.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(tc.batch_size) {
            let batch: Vec<&Prepared> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (loss, grads) = batch_loss(&model, &batch)?;
            if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                result.failure = Some(format!("non-finite loss or gradient at epoch {epoch}"));
                log::warn!("{} seed {seed}: diverged at epoch {epoch}", config.architecture);
                return Ok(result);
            }
            total += loss * chunk.len() as f64;
            adam.step(&mut model.params, &grads, config.learning_rate)?;
        }
        result.train_losses.push(total / train_set.len() as f64);

        let val = mse(&model.predict(&val_set)?, &val_targets);
        if !val.is_finite() {
            result.failure = Some(format!("non-finite validation loss at epoch {epoch}"));
            return Ok(result);
        }
        result.val_losses.push(val);
        if val < result.best_val_mse {
            result.best_val_mse = val;
            result.best_epoch = epoch;
            best.clone_from(&model.params);
        }
        if epoch - result.best_epoch >= tc.patience {
            break;
        }
    }

    model.params = best;
    let preds = model.predict(&test_set)?;
    result.test_mse = mse(&preds, &test_targets);
    result.test_nmse = nmse(&preds, &test_targets, baseline_mean)?;
    result.checkpoint = Some(model.params.to_checkpoint());
    Ok(result)
}

/// The twelve grid points of an architecture, in enumeration order.
pub fn grid(arch: Architecture, bundle: &DatasetBundle) -> Vec<ModelConfig> {
    let mut out = Vec::with_capacity(12);
    for lr in [1e-2, 5e-3, 1e-3] {
        for rep in crate::models::Representation::ALL {
            for width in arch.widths(rep) {
                out.push(ModelConfig::new(arch, width, rep, &bundle.topology, lr));
            }
        }
    }
    out
}

/// JSON has no NaN or infinity; failed runs store their metrics as `null`.
pub(super) mod non_finite {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}
