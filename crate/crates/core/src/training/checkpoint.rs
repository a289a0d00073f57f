use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::pipeline::{Model, ModelConfig};

pub const CHECKPOINT_FORMAT: &str = "netgen-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A model together with the parameters selected by training.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub rois: usize,
    pub steps: usize,
    pub classes: Vec<String>,
    pub seed: u64,
    pub store: ParamStore,
    pub model: Model,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    version: u32,
    model: ModelConfig,
    rois: usize,
    steps: usize,
    classes: Vec<String>,
    seed: u64,
    parameters: ParamStore,
}

impl TrainedModel {
    /// Rebuild the architecture from `config` and install `store`, which
    /// must match it tensor for tensor.
    pub fn new(
        config: ModelConfig,
        rois: usize,
        steps: usize,
        classes: Vec<String>,
        seed: u64,
        store: ParamStore,
    ) -> Result<Self> {
        let mut fresh = ParamStore::new();
        // initial values are discarded; only the layout matters
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = Model::new(&mut fresh, &config, rois, steps, classes.len(), &mut rng)?;
        fresh.load_from(&store)?;
        Ok(Self {
            config,
            rois,
            steps,
            classes,
            seed,
            store: fresh,
            model,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            model: self.config.clone(),
            rois: self.rois,
            steps: self.steps,
            classes: self.classes.clone(),
            seed: self.seed,
            parameters: self.store.clone(),
        };
        serde_json::to_string(&file).map_err(|e| Error::InvalidInput(e.to_string()))
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let file: CheckpointFile =
            serde_json::from_str(text).map_err(|e| Error::format(origin, e.to_string()))?;
        if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
            return Err(Error::format(
                origin,
                format!(
                    "expected {CHECKPOINT_FORMAT} version {CHECKPOINT_VERSION}, found {} version {}",
                    file.format, file.version
                ),
            ));
        }
        Self::new(
            file.model,
            file.rois,
            file.steps,
            file.classes,
            file.seed,
            file.parameters,
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }
}
