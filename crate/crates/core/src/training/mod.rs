//! End-to-end objective, metrics, the training loop and the experiment harnesses.
//!
//! A run is fully determined by its [`TrainConfig`]: the seed fixes the
//! stratified split, parameter initialization and every epoch's shuffle.

mod checkpoint;
mod harness;
mod metrics;

use std::fmt::Write as _;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{TrainedModel, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use harness::{
    ablate, compare, run_many, summarize, sweep, AblationRow, CompareRow, ComparedPipeline,
    RunSummary, SeedResult, SweepRow, Variant, COMPARED_PIPELINES,
};
pub use metrics::{
    accuracy, auroc, classification_auroc, cross_entropy, predictions, total_loss, LossBreakdown,
    LossGrads, Metrics,
};

use crate::dataset::{split_indices, Dataset, SplitSpec};
use crate::error::{Error, Result};
use crate::graphgen::LossWeights;
use crate::nn::{gradient_check, Adam, GradCheckReport, Gradients, Mode, ParamStore};
use crate::pipeline::{prepare, Model, ModelConfig, PreparedSample};

/// Optimizer, batching and split settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Ratios only; the split seed is always the run seed.
    pub split: SplitSpec,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-4,
            batch_size: 16,
            epochs: 500,
            split: SplitSpec::default(),
        }
    }
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidConfig(format!("train.lr must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "train.weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "train.batch_size must be at least 2 (batch norm), got {}",
                self.batch_size
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("train.epochs must be positive".into()));
        }
        self.split.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub train: TrainSettings,
    pub seed: u64,
}

impl TrainConfig {
    /// Check every section against a series of `steps` time points.
    pub fn validate(&self, steps: usize) -> Result<()> {
        self.model.validate(steps)?;
        self.loss.validate()?;
        self.train.validate()
    }

    pub fn split_spec(&self) -> SplitSpec {
        self.train.split.with_seed(self.seed)
    }
}

/// Train and validation metrics of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    pub train: Metrics,
    pub val: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

const HISTORY_COLUMNS: [&str; 7] = ["loss", "ce", "intra", "inter", "sparsity", "auroc", "accuracy"];

fn metric_fields(m: &Metrics) -> [String; 7] {
    [
        m.loss.total.to_string(),
        m.loss.ce.to_string(),
        m.loss.intra.to_string(),
        m.loss.inter.to_string(),
        m.loss.sparsity.to_string(),
        m.auroc.map(|a| a.to_string()).unwrap_or_default(),
        m.accuracy.to_string(),
    ]
}

impl TrainHistory {
    /// One row per epoch; an undefined AUROC is an empty field.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch");
        for split in ["train", "val"] {
            for c in HISTORY_COLUMNS {
                write!(out, ",{split}_{c}").unwrap();
            }
        }
        out.push('\n');
        for rec in &self.epochs {
            write!(out, "{}", rec.epoch).unwrap();
            for m in [&rec.train, &rec.val] {
                for f in metric_fields(m) {
                    write!(out, ",{f}").unwrap();
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }

    /// Sanity check on the training CE curve: after 10-epoch smoothing it
    /// should never climb more than 10% of its initial value above its
    /// running minimum. Violations are logged, not fatal.
    pub fn ce_trend_ok(&self) -> bool {
        let ce: Vec<f64> = self.epochs.iter().map(|r| r.train.loss.ce).collect();
        let window = 10.min(ce.len());
        if window == 0 {
            return true;
        }
        let smooth: Vec<f64> = ce
            .windows(window)
            .map(|w| w.iter().sum::<f64>() / window as f64)
            .collect();
        let tolerance = 0.1 * smooth[0].abs();
        let mut low = smooth[0];
        for (k, &s) in smooth.iter().enumerate() {
            if s > low + tolerance {
                log::warn!(
                    "smoothed training CE rose from {low:.4} to {s:.4} around epoch {}",
                    k + window
                );
                return false;
            }
            low = low.min(s);
        }
        true
    }
}

/// Loss and metrics of `model` on `samples` in evaluation mode, processed
/// in chunks of `batch_size` (group losses are batch-level quantities).
fn measure(
    model: &Model,
    store: &ParamStore,
    samples: &[&PreparedSample],
    weights: &LossWeights,
    batch_size: usize,
) -> Result<Metrics> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("cannot evaluate an empty split".into()));
    }
    let mut logits = Vec::new();
    let mut losses = Vec::new();
    for chunk in samples.chunks(batch_size.max(1)) {
        let (out, _) = model.forward(store, chunk, Mode::Eval)?;
        let labels: Vec<usize> = chunk.iter().map(|s| s.label).collect();
        let graphs: Option<Vec<Array2<f64>>> =
            out.graphs.as_ref().map(|g| g.iter().map(|g| g.a.clone()).collect());
        let (loss, _) = total_loss(&out.logits, &labels, graphs.as_deref(), weights)?;
        losses.push((loss, chunk.len()));
        logits.push(out.logits);
    }
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    Ok(Metrics::from_logits(
        &metrics::stack_rows(&logits),
        &labels,
        LossBreakdown::weighted_mean(&losses),
    ))
}

/// AUROC, accuracy and mean loss components on a split.
///
/// Fails when the split holds a single class, where AUROC is undefined.
pub fn evaluate(
    trained: &TrainedModel,
    samples: &[&PreparedSample],
    weights: &LossWeights,
    batch_size: usize,
) -> Result<Metrics> {
    let m = measure(&trained.model, &trained.store, samples, weights, batch_size)?;
    if m.auroc.is_none() {
        return Err(Error::InvalidInput(
            "AUROC is undefined on a split with a single class".into(),
        ));
    }
    Ok(m)
}

/// Shuffled mini-batches; a trailing batch of one sample joins the previous
/// batch because batch norm needs at least two rows.
fn epoch_batches(order: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(|c| c.to_vec()).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().expect("non-empty");
        batches.last_mut().expect("non-empty").extend(last);
    }
    batches
}

/// Outcome of a full run: the selected model, its history and test metrics.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub trained: TrainedModel,
    pub history: TrainHistory,
    pub test: Metrics,
    /// Dataset indices of the train, validation and test parts.
    pub split: [Vec<usize>; 3],
}

/// Train on the configured split and return the best-validation checkpoint.
pub fn train(config: &TrainConfig, ds: &Dataset) -> Result<(TrainedModel, TrainHistory)> {
    let r = run(config, ds)?;
    Ok((r.trained, r.history))
}

/// Train, select the best validation epoch and evaluate it on the test split.
pub fn run(config: &TrainConfig, ds: &Dataset) -> Result<RunResult> {
    config.validate(ds.steps())?;
    let samples = prepare(ds)?;
    let split = split_indices(&ds.labels(), ds.classes().len(), &config.split_spec())?;
    let [train_idx, val_idx, test_idx] = &split;
    for (c, name) in ds.classes().iter().enumerate() {
        if !train_idx.iter().any(|&i| samples[i].label == c) {
            return Err(Error::InvalidInput(format!(
                "class {name} is absent from the training split"
            )));
        }
    }
    if train_idx.len() < 2 {
        return Err(Error::InvalidInput(
            "the training split needs at least 2 samples".into(),
        ));
    }
    for (part, idx) in [("validation", val_idx), ("test", test_idx)] {
        if idx.is_empty() {
            return Err(Error::InvalidInput(format!("the {part} split is empty")));
        }
    }
    let pick = |idx: &[usize]| -> Vec<&PreparedSample> { idx.iter().map(|&i| &samples[i]).collect() };
    let val = pick(val_idx);
    let test = pick(test_idx);

    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let model = Model::new(
        &mut store,
        &config.model,
        ds.rois(),
        ds.steps(),
        ds.classes().len(),
        &mut rng,
    )?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);
    let mut adam = Adam::new(&store, config.train.lr, config.train.weight_decay);
    let weights = config.loss;
    let batch_size = config.train.batch_size;

    let mut order = train_idx.clone();
    let mut epochs = Vec::with_capacity(config.train.epochs);
    let mut best: Option<(usize, ParamStore)> = None;
    for epoch in 1..=config.train.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut logits = Vec::new();
        let mut labels_seen = Vec::with_capacity(order.len());
        let mut losses = Vec::new();
        for (b, batch_idx) in epoch_batches(&order, batch_size).iter().enumerate() {
            let batch = pick(batch_idx);
            let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
            let (out, cache) = model.forward(&store, &batch, Mode::Train)?;
            let graphs: Option<Vec<Array2<f64>>> =
                out.graphs.as_ref().map(|g| g.iter().map(|g| g.a.clone()).collect());
            let (loss, d) = total_loss(&out.logits, &labels, graphs.as_deref(), &weights)?;
            if !loss.total.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss {} at epoch {epoch}, batch {}",
                    loss.total,
                    b + 1
                )));
            }
            let mut grads = Gradients::zeros_like(&store);
            model.backward(&store, &out, &cache, &d.logits, d.graphs.as_deref(), &mut grads);
            model.update_running(&mut store, &cache);
            adam.step(&mut store, &grads).map_err(|e| {
                Error::Training(format!("{e} at epoch {epoch}, batch {}", b + 1))
            })?;
            losses.push((loss, batch.len()));
            labels_seen.extend(labels);
            logits.push(out.logits);
        }
        let train_metrics = Metrics::from_logits(
            &metrics::stack_rows(&logits),
            &labels_seen,
            LossBreakdown::weighted_mean(&losses),
        );
        let val_metrics = measure(&model, &store, &val, &weights, batch_size)?;
        log::debug!(
            "epoch {epoch}: train loss {:.5}, val loss {:.5}, val auroc {:?}",
            train_metrics.loss.total,
            val_metrics.loss.total,
            val_metrics.auroc
        );
        let improved = match &best {
            None => true,
            Some((e, _)) => {
                let prev: &EpochRecord = &epochs[*e - 1];
                match (val_metrics.auroc, prev.val.auroc) {
                    (Some(now), Some(then)) => now > then,
                    (Some(_), None) => true,
                    (None, Some(_)) => false,
                    (None, None) => val_metrics.loss.total < prev.val.loss.total,
                }
            }
        };
        epochs.push(EpochRecord {
            epoch,
            train: train_metrics,
            val: val_metrics,
        });
        if improved {
            best = Some((epoch, store.clone()));
        }
    }
    let (best_epoch, best_store) = best.expect("at least one epoch");
    let history = TrainHistory { epochs, best_epoch };
    history.ce_trend_ok();
    let trained = TrainedModel::new(
        config.model.clone(),
        ds.rois(),
        ds.steps(),
        ds.classes().to_vec(),
        config.seed,
        best_store,
    )?;
    let test = measure(&trained.model, &trained.store, &test, &weights, batch_size)?;
    Ok(RunResult {
        trained,
        history,
        test,
        split,
    })
}

/// Finite-difference check of the full objective gradient on one batch,
/// with a model freshly initialized from `seed`. In [`Mode::Train`] the
/// batch needs at least two samples.
pub fn objective_gradient_check(
    config: &ModelConfig,
    weights: &LossWeights,
    batch: &[&PreparedSample],
    classes: usize,
    seed: u64,
    mode: Mode,
) -> Result<GradCheckReport> {
    let first = batch
        .first()
        .ok_or_else(|| Error::InvalidInput("gradient check needs a batch".into()))?;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = Model::new(&mut store, config, first.x.nrows(), first.x.ncols(), classes, &mut rng)?;
    let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
    let objective = |store: &ParamStore| -> Result<f64> {
        let (out, _) = model.forward(store, batch, mode)?;
        let graphs: Option<Vec<Array2<f64>>> =
            out.graphs.as_ref().map(|g| g.iter().map(|g| g.a.clone()).collect());
        Ok(total_loss(&out.logits, &labels, graphs.as_deref(), weights)?.0.total)
    };
    objective(&store)?;
    Ok(gradient_check(
        &mut store,
        |s| objective(s).expect("shapes were validated"),
        |s| {
            let (out, cache) = model.forward(s, batch, mode).expect("validated");
            let graphs: Option<Vec<Array2<f64>>> =
                out.graphs.as_ref().map(|g| g.iter().map(|g| g.a.clone()).collect());
            let (_, d) = total_loss(&out.logits, &labels, graphs.as_deref(), weights)
                .expect("validated");
            let mut grads = Gradients::zeros_like(s);
            model.backward(s, &out, &cache, &d.logits, d.graphs.as_deref(), &mut grads);
            grads
        },
    ))
}
