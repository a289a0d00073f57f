//! Multi-seed experiments: regularizer ablation, pipeline comparison and
//! the window/embedding-size sweep. Independent runs execute in parallel;
//! results are collected in input order so tables are deterministic.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run, Metrics, TrainConfig};
use crate::dataset::Dataset;
use crate::encoders::EncoderKind;
use crate::error::{Error, Result};
use crate::graphgen::LossWeights;
use crate::pipeline::PipelineKind;

/// Test metrics of one seeded run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub best_epoch: usize,
    pub test: Metrics,
}

/// Mean and sample standard deviation over seeds. AUROC statistics skip
/// runs whose test split had a single class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub auroc_mean: Option<f64>,
    pub auroc_std: Option<f64>,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub runs: Vec<SeedResult>,
}

fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some((mean, std))
}

pub fn summarize(runs: Vec<SeedResult>) -> RunSummary {
    let aurocs: Vec<f64> = runs.iter().filter_map(|r| r.test.auroc).collect();
    let accs: Vec<f64> = runs.iter().map(|r| r.test.accuracy).collect();
    let auroc = mean_std(&aurocs);
    let (accuracy_mean, accuracy_std) = mean_std(&accs).unwrap_or((f64::NAN, f64::NAN));
    RunSummary {
        auroc_mean: auroc.map(|a| a.0),
        auroc_std: auroc.map(|a| a.1),
        accuracy_mean,
        accuracy_std,
        runs,
    }
}

/// Run every configuration (in parallel) and keep test metrics per run.
pub fn run_many(configs: &[TrainConfig], ds: &Dataset) -> Result<Vec<SeedResult>> {
    configs
        .par_iter()
        .map(|cfg| {
            run(cfg, ds).map(|r| SeedResult {
                seed: cfg.seed,
                best_epoch: r.history.best_epoch,
                test: r.test,
            })
        })
        .collect()
}

fn check_seeds(seeds: &[u64]) -> Result<()> {
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("at least one seed is required".into()));
    }
    Ok(())
}

/// Run each configuration over all seeds and summarize per configuration.
fn grid(cells: &[TrainConfig], seeds: &[u64], ds: &Dataset) -> Result<Vec<RunSummary>> {
    check_seeds(seeds)?;
    let jobs: Vec<TrainConfig> = cells
        .iter()
        .flat_map(|c| seeds.iter().map(move |&seed| TrainConfig { seed, ..c.clone() }))
        .collect();
    let results = run_many(&jobs, ds)?;
    Ok(results
        .chunks(seeds.len())
        .map(|c| summarize(c.to_vec()))
        .collect())
}

/// Regularizer subsets compared in the ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    All,
    Ce,
    CeGl,
    CeSl,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::All, Variant::Ce, Variant::CeGl, Variant::CeSl];

    pub fn name(self) -> &'static str {
        match self {
            Variant::All => "All",
            Variant::Ce => "CE",
            Variant::CeGl => "CE+GL",
            Variant::CeSl => "CE+SL",
        }
    }

    /// Loss weights of this variant derived from the full setting `base`.
    pub fn weights(self, base: &LossWeights) -> LossWeights {
        match self {
            Variant::All => *base,
            Variant::Ce => LossWeights::ZERO,
            Variant::CeGl => LossWeights { gamma: 0.0, ..*base },
            Variant::CeSl => LossWeights {
                alpha: 0.0,
                beta: 0.0,
                ..*base
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub weights: LossWeights,
    pub summary: RunSummary,
}

pub fn ablate(config: &TrainConfig, ds: &Dataset, seeds: &[u64]) -> Result<Vec<AblationRow>> {
    config.validate(ds.steps())?;
    let cells: Vec<TrainConfig> = Variant::ALL
        .iter()
        .map(|v| TrainConfig {
            loss: v.weights(&config.loss),
            ..config.clone()
        })
        .collect();
    let summaries = grid(&cells, seeds, ds)?;
    Ok(Variant::ALL
        .iter()
        .zip(cells.iter().zip(summaries))
        .map(|(v, (c, summary))| AblationRow {
            variant: v.name().into(),
            weights: c.loss,
            summary,
        })
        .collect())
}

/// One row of the pipeline comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComparedPipeline {
    pub name: &'static str,
    pub pipeline: PipelineKind,
    /// Encoder override; `None` for pipelines without an encoder.
    pub encoder: Option<EncoderKind>,
}

pub const COMPARED_PIPELINES: [ComparedPipeline; 6] = [
    ComparedPipeline {
        name: "fbnetgen-cnn",
        pipeline: PipelineKind::Fbnetgen,
        encoder: Some(EncoderKind::Cnn),
    },
    ComparedPipeline {
        name: "fbnetgen-gru",
        pipeline: PipelineKind::Fbnetgen,
        encoder: Some(EncoderKind::Gru),
    },
    ComparedPipeline {
        name: "gnn-uniform",
        pipeline: PipelineKind::GnnUniform,
        encoder: None,
    },
    ComparedPipeline {
        name: "gnn-pearson",
        pipeline: PipelineKind::GnnPearson,
        encoder: None,
    },
    ComparedPipeline {
        name: "seq-cnn",
        pipeline: PipelineKind::Sequence,
        encoder: Some(EncoderKind::Cnn),
    },
    ComparedPipeline {
        name: "seq-gru",
        pipeline: PipelineKind::Sequence,
        encoder: Some(EncoderKind::Gru),
    },
];

impl ComparedPipeline {
    pub fn config(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        cfg.model.pipeline = self.pipeline;
        if let Some(kind) = self.encoder {
            cfg.model.encoder.kind = kind;
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub pipeline: String,
    pub summary: RunSummary,
}

pub fn compare(config: &TrainConfig, ds: &Dataset, seeds: &[u64]) -> Result<Vec<CompareRow>> {
    let cells: Vec<TrainConfig> = COMPARED_PIPELINES.iter().map(|p| p.config(config)).collect();
    for c in &cells {
        c.validate(ds.steps())?;
    }
    let summaries = grid(&cells, seeds, ds)?;
    Ok(COMPARED_PIPELINES
        .iter()
        .zip(summaries)
        .map(|(p, summary)| CompareRow {
            pipeline: p.name.into(),
            summary,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub window: usize,
    pub dim: usize,
    pub summary: RunSummary,
}

/// Train every `(window, dim)` combination, windows outermost.
pub fn sweep(
    config: &TrainConfig,
    ds: &Dataset,
    windows: &[usize],
    dims: &[usize],
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    if windows.is_empty() || dims.is_empty() {
        return Err(Error::InvalidConfig("sweep grid must be non-empty".into()));
    }
    let mut pairs = Vec::new();
    let mut cells = Vec::new();
    for &window in windows {
        for &dim in dims {
            let mut cfg = config.clone();
            cfg.model.encoder.window = window;
            cfg.model.encoder.dim = dim;
            cfg.validate(ds.steps())?;
            pairs.push((window, dim));
            cells.push(cfg);
        }
    }
    let summaries = grid(&cells, seeds, ds)?;
    Ok(pairs
        .into_iter()
        .zip(summaries)
        .map(|((window, dim), summary)| SweepRow {
            window,
            dim,
            summary,
        })
        .collect())
}
