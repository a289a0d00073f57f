//! Whole-model forward and backward passes for every compared pipeline.
//!
//! | pipeline    | graph            | encoder | classifier        |
//! |-------------|------------------|---------|-------------------|
//! | `fbnetgen`  | generated from h | yes     | GCN + head        |
//! | `gnn-uniform` | all ones       | no      | GCN + head        |
//! | `gnn-pearson` | signed Pearson | no      | GCN + head        |
//! | `sequence`  | none             | yes     | head on flat h    |

use ndarray::{s, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{pearson_features, zscore_normalize, Dataset};
use crate::encoders::{Encoder, EncoderCache, EncoderConfig};
use crate::error::{Error, Result};
use crate::graphgen::{generate_graph, generate_graph_backward, LearnableGraph};
use crate::nn::{Gradients, Mode, ParamStore};
use crate::predictor::{
    build_uniform_graph, ClassifierHead, GraphClassifier, GraphClassifierCache, HeadCache,
    PredictorConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PipelineKind {
    #[default]
    Fbnetgen,
    GnnUniform,
    GnnPearson,
    Sequence,
}

impl PipelineKind {
    pub fn uses_encoder(self) -> bool {
        matches!(self, PipelineKind::Fbnetgen | PipelineKind::Sequence)
    }

    /// Whether the graph is learned, so graph regularizers apply.
    pub fn learns_graph(self) -> bool {
        self == PipelineKind::Fbnetgen
    }
}

impl std::fmt::Display for PipelineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PipelineKind::Fbnetgen => "fbnetgen",
            PipelineKind::GnnUniform => "gnn-uniform",
            PipelineKind::GnnPearson => "gnn-pearson",
            PipelineKind::Sequence => "sequence",
        })
    }
}

/// Architecture of one model; everything needed to rebuild it from a checkpoint.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub pipeline: PipelineKind,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub predictor: PredictorConfig,
}

impl ModelConfig {
    pub fn validate(&self, steps: usize) -> Result<()> {
        if self.pipeline.uses_encoder() {
            self.encoder.validate(steps)?;
        }
        if self.pipeline != PipelineKind::Sequence {
            self.predictor.validate()?;
        } else if self.predictor.mlp_hidden == 0 {
            return Err(Error::InvalidConfig("predictor.mlp_hidden must be positive".into()));
        }
        Ok(())
    }
}

/// A sample with the inputs every pipeline needs, computed once.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    /// Row-wise z-scored series fed to the encoder.
    pub x: Array2<f64>,
    /// Pearson correlation matrix used as node features.
    pub features: Array2<f64>,
    pub label: usize,
}

pub fn prepare(ds: &Dataset) -> Result<Vec<PreparedSample>> {
    ds.samples()
        .iter()
        .map(|s| {
            Ok(PreparedSample {
                x: zscore_normalize(&s.x),
                features: pearson_features(&s.x)?,
                label: s.label,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
enum Body {
    Graph {
        encoder: Option<Encoder>,
        classifier: GraphClassifier,
    },
    Sequence {
        encoder: Encoder,
        head: ClassifierHead,
    },
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub rois: usize,
    pub classes: usize,
    body: Body,
    uniform: Option<Array2<f64>>,
}

/// Outputs of a batch forward pass.
#[derive(Debug, Clone)]
pub struct BatchOutput {
    pub logits: Array2<f64>,
    /// Generated graphs, one per sample, for the learnable pipeline only.
    pub graphs: Option<Vec<LearnableGraph>>,
}

#[derive(Debug, Clone)]
pub struct ModelCache {
    encoder: Option<EncoderCache>,
    classifier: Option<GraphClassifierCache>,
    head: Option<HeadCache>,
    adjacency: Vec<Array2<f64>>,
    features: Vec<Array2<f64>>,
}

impl Model {
    /// Registers all parameters in `store` under the `encoder.`/`predictor.` prefixes.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        config: &ModelConfig,
        rois: usize,
        steps: usize,
        classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate(steps)?;
        if classes < 2 {
            return Err(Error::InvalidConfig(format!("need at least 2 classes, got {classes}")));
        }
        let body = match config.pipeline {
            PipelineKind::Sequence => {
                let encoder = Encoder::new(store, "encoder", &config.encoder, rng);
                let head = ClassifierHead::new(
                    store,
                    "predictor.head",
                    rois * config.encoder.dim,
                    config.predictor.mlp_hidden,
                    classes,
                    rng,
                );
                Body::Sequence { encoder, head }
            }
            kind => {
                let encoder = kind
                    .uses_encoder()
                    .then(|| Encoder::new(store, "encoder", &config.encoder, rng));
                let classifier =
                    GraphClassifier::new(store, "predictor", &config.predictor, rois, classes, rng);
                Body::Graph { encoder, classifier }
            }
        };
        let uniform = (config.pipeline == PipelineKind::GnnUniform)
            .then(|| build_uniform_graph(rois))
            .transpose()?;
        Ok(Self {
            config: config.clone(),
            rois,
            classes,
            body,
            uniform,
        })
    }

    fn encoder(&self) -> Option<&Encoder> {
        match &self.body {
            Body::Graph { encoder, .. } => encoder.as_ref(),
            Body::Sequence { encoder, .. } => Some(encoder),
        }
    }

    fn check_batch(&self, batch: &[&PreparedSample]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        for s in batch {
            if s.x.nrows() != self.rois {
                return Err(Error::Shape(format!(
                    "model built for {} ROIs, sample has {}",
                    self.rois,
                    s.x.nrows()
                )));
            }
        }
        Ok(())
    }

    pub fn forward(
        &self,
        store: &ParamStore,
        batch: &[&PreparedSample],
        mode: Mode,
    ) -> Result<(BatchOutput, ModelCache)> {
        self.check_batch(batch)?;
        let v = self.rois;
        let encoded = match self.encoder() {
            Some(enc) => {
                let xs: Vec<&Array2<f64>> = batch.iter().map(|s| &s.x).collect();
                Some(enc.forward(store, &xs)?)
            }
            None => None,
        };
        let features: Vec<Array2<f64>> = batch.iter().map(|s| s.features.clone()).collect();
        match &self.body {
            Body::Sequence { head, .. } => {
                let (h, enc_cache) = encoded.expect("sequence pipeline has an encoder");
                let d = h.ncols();
                let flat = h
                    .into_shape_with_order((batch.len(), v * d))
                    .map_err(|e| Error::Shape(e.to_string()))?;
                let (logits, head_cache) = head.forward(store, &flat, mode)?;
                Ok((
                    BatchOutput {
                        logits,
                        graphs: None,
                    },
                    ModelCache {
                        encoder: Some(enc_cache),
                        classifier: None,
                        head: Some(head_cache),
                        adjacency: Vec::new(),
                        features,
                    },
                ))
            }
            Body::Graph { classifier, .. } => {
                let (graphs, adjacency, enc_cache) = match (self.config.pipeline, encoded) {
                    (PipelineKind::Fbnetgen, Some((h, cache))) => {
                        let graphs: Vec<LearnableGraph> = (0..batch.len())
                            .map(|b| generate_graph(&h.slice(s![b * v..(b + 1) * v, ..]).to_owned()))
                            .collect();
                        let adjacency = graphs.iter().map(|g| g.a.clone()).collect();
                        (Some(graphs), adjacency, Some(cache))
                    }
                    (PipelineKind::GnnUniform, _) => {
                        let ones = self.uniform.as_ref().expect("uniform graph built");
                        (None, vec![ones.clone(); batch.len()], None)
                    }
                    (PipelineKind::GnnPearson, _) => (None, features.clone(), None),
                    _ => unreachable!("graph body only hosts graph pipelines"),
                };
                let a_refs: Vec<&Array2<f64>> = adjacency.iter().collect();
                let f_refs: Vec<&Array2<f64>> = features.iter().collect();
                let (logits, cls_cache) = classifier.forward(store, &a_refs, &f_refs, mode)?;
                Ok((
                    BatchOutput { logits, graphs },
                    ModelCache {
                        encoder: enc_cache,
                        classifier: Some(cls_cache),
                        head: None,
                        adjacency,
                        features,
                    },
                ))
            }
        }
    }

    /// Backpropagate `d_logits` plus, for the learnable pipeline, extra
    /// gradients w.r.t. each generated graph (from the graph regularizers).
    pub fn backward(
        &self,
        store: &ParamStore,
        output: &BatchOutput,
        cache: &ModelCache,
        d_logits: &Array2<f64>,
        d_graphs: Option<&[Array2<f64>]>,
        grads: &mut Gradients,
    ) {
        let v = self.rois;
        match &self.body {
            Body::Sequence { encoder, head } => {
                let d_flat = head.backward(
                    store,
                    cache.head.as_ref().expect("sequence cache"),
                    d_logits,
                    grads,
                );
                let b = d_flat.nrows();
                let d_h = d_flat
                    .into_shape_with_order((b * v, self.config.encoder.dim))
                    .expect("flat embeddings reshape");
                encoder.backward(store, cache.encoder.as_ref().expect("encoder cache"), &d_h, grads);
            }
            Body::Graph {
                encoder,
                classifier,
            } => {
                let a_refs: Vec<&Array2<f64>> = cache.adjacency.iter().collect();
                let f_refs: Vec<&Array2<f64>> = cache.features.iter().collect();
                let mut d_adj = classifier.backward(
                    store,
                    &a_refs,
                    &f_refs,
                    cache.classifier.as_ref().expect("classifier cache"),
                    d_logits,
                    grads,
                );
                let (Some(encoder), Some(graphs)) = (encoder, &output.graphs) else {
                    return;
                };
                if let Some(extra) = d_graphs {
                    for (d, e) in d_adj.iter_mut().zip(extra) {
                        *d += e;
                    }
                }
                let d = self.config.encoder.dim;
                let mut d_h = Array2::zeros((graphs.len() * v, d));
                for (b, (g, da)) in graphs.iter().zip(&d_adj).enumerate() {
                    d_h.slice_mut(s![b * v..(b + 1) * v, ..])
                        .assign(&generate_graph_backward(g, da));
                }
                encoder.backward(store, cache.encoder.as_ref().expect("encoder cache"), &d_h, grads);
            }
        }
    }

    /// Fold training-mode batch-norm statistics into the running averages.
    pub fn update_running(&self, store: &mut ParamStore, cache: &ModelCache) {
        match &self.body {
            Body::Sequence { head, .. } => {
                head.update_running(store, cache.head.as_ref().expect("sequence cache"))
            }
            Body::Graph { classifier, .. } => classifier.head.update_running(
                store,
                &cache.classifier.as_ref().expect("classifier cache").head,
            ),
        }
    }

    /// Generated graphs for `samples` without running the classifier.
    pub fn generate_graphs(
        &self,
        store: &ParamStore,
        samples: &[&PreparedSample],
    ) -> Result<Vec<LearnableGraph>> {
        if !self.config.pipeline.learns_graph() {
            return Err(Error::InvalidInput(format!(
                "the {} pipeline does not generate graphs",
                self.config.pipeline
            )));
        }
        self.check_batch(samples)?;
        let encoder = self.encoder().expect("learnable pipeline has an encoder");
        let v = self.rois;
        let mut graphs = Vec::with_capacity(samples.len());
        // chunked so memory stays bounded on large datasets
        for chunk in samples.chunks(64) {
            let xs: Vec<&Array2<f64>> = chunk.iter().map(|s| &s.x).collect();
            let (h, _) = encoder.forward(store, &xs)?;
            for b in 0..chunk.len() {
                graphs.push(generate_graph(&h.slice(s![b * v..(b + 1) * v, ..]).to_owned()));
            }
        }
        Ok(graphs)
    }
}
