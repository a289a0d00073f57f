//! Experiment configuration: one JSON document per experiment.

use std::path::{Path, PathBuf};

use netgen_core::dataset::{generate_synthetic, load_dataset, Dataset, SynthSpec};
use netgen_core::encoders::EncoderConfig;
use netgen_core::graphgen::LossWeights;
use netgen_core::pipeline::{ModelConfig, PipelineKind};
use netgen_core::predictor::PredictorConfig;
use netgen_core::training::{TrainConfig, TrainSettings};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Where samples come from: a dataset directory or a synthetic spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
    /// Generation seed for `synth`; independent of the run seed so that
    /// every run of a multi-seed experiment sees the same data.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub windows: Vec<usize>,
    pub dims: Vec<usize>,
}

/// Which samples feed the interpretability graphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphSplit {
    #[default]
    All,
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterpretSettings {
    pub alpha: f64,
    pub split: GraphSplit,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

impl Default for InterpretSettings {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            split: GraphSplit::All,
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    #[serde(default)]
    pub pipeline: PipelineKind,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub predictor: PredictorConfig,
    #[serde(default)]
    pub loss: LossWeights,
    #[serde(default)]
    pub train: TrainSettings,
    /// Run seed for `train`; the default seed list for the other commands.
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepGrid>,
    #[serde(default)]
    pub interpret: InterpretSettings,
}

impl ExperimentConfig {
    /// Parse `path`. Relative paths inside are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = cfg.data.path.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.output.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.interpret.checkpoint.as_mut() {
            resolve(p);
        }
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            model: ModelConfig {
                pipeline: self.pipeline,
                encoder: self.encoder,
                predictor: self.predictor.clone(),
            },
            loss: self.loss,
            train: self.train,
            seed: self.seed,
        }
    }

    pub fn seed_list(&self) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| vec![self.seed])
    }

    pub fn output_dir(&self) -> Result<&Path, CliError> {
        self.output
            .as_deref()
            .ok_or_else(|| CliError::Config("no output directory: set `output` or pass --out".into()))
    }

    /// Checks that need no data; everything else waits for the dataset shape.
    pub fn validate(&self) -> Result<(), CliError> {
        match (&self.data.path, &self.data.synth) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config("data: give either `path` or `synth`, not both".into()))
            }
            (None, None) => return Err(CliError::Config("data: `path` or `synth` is required".into())),
            (Some(p), None) if !p.is_dir() => {
                return Err(CliError::Config(format!("data path {} does not exist", p.display())))
            }
            (None, Some(spec)) => spec.validate()?,
            _ => {}
        }
        if self.seeds.as_ref().is_some_and(|s| s.is_empty()) {
            return Err(CliError::Config("seeds must not be empty".into()));
        }
        if let Some(grid) = &self.sweep {
            if grid.windows.is_empty() || grid.dims.is_empty() {
                return Err(CliError::Config("sweep windows and dims must be non-empty".into()));
            }
        }
        let alpha = self.interpret.alpha;
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(CliError::Config(format!("interpret.alpha must lie in (0, 1), got {alpha}")));
        }
        self.loss.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn load_data(&self) -> Result<Dataset, CliError> {
        match (&self.data.path, &self.data.synth) {
            (Some(path), _) => Ok(load_dataset(path)?),
            (None, Some(spec)) => Ok(generate_synthetic(spec, self.data.seed)?),
            (None, None) => Err(CliError::Config("data: `path` or `synth` is required".into())),
        }
    }
}
