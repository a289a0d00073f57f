//! GCN classifier over a connectivity matrix and node features, the shared
//! classification head, and the fixed graphs used by the GNN baselines.

use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::pearson_features;
use crate::error::{Error, Result};
use crate::nn::{
    relu, relu_backward, BatchNorm1d, BatchNormCache, Dense, Gradients, Mode, ParamStore,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Concat,
    Sum,
}

impl std::fmt::Display for Pooling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Pooling::Concat => "concat",
            Pooling::Sum => "sum",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorConfig {
    pub pooling: Pooling,
    /// Per-node output width of each GCN layer.
    pub widths: Vec<usize>,
    pub mlp_hidden: usize,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            pooling: Pooling::Concat,
            widths: vec![32, 32, 8],
            mlp_hidden: 32,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "predictor.widths must be non-empty and positive, got {:?}",
                self.widths
            )));
        }
        if self.mlp_hidden == 0 {
            return Err(Error::InvalidConfig("predictor.mlp_hidden must be positive".into()));
        }
        Ok(())
    }

    /// Length of the pooled graph vector for `v` nodes.
    pub fn pooled_dim(&self, v: usize) -> usize {
        let out = *self.widths.last().expect("validated widths");
        match self.pooling {
            Pooling::Concat => v * out,
            Pooling::Sum => out,
        }
    }
}

/// Stack of `h ← ReLU(A h W + b)` layers.
#[derive(Debug, Clone)]
pub struct Gcn {
    pub layers: Vec<Dense>,
}

#[derive(Debug, Clone)]
pub struct GcnCache {
    /// `A h` for each layer, the input of its dense map.
    propagated: Vec<Array2<f64>>,
    /// Layer outputs after ReLU.
    outputs: Vec<Array2<f64>>,
}

impl Gcn {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        widths: &[usize],
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut d_in = input_dim;
        for (k, &w) in widths.iter().enumerate() {
            layers.push(Dense::new(store, &format!("{prefix}.gcn{k}"), d_in, w, rng));
            d_in = w;
        }
        Self { layers }
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.output_dim)
    }

    pub fn forward(
        &self,
        store: &ParamStore,
        a: &Array2<f64>,
        features: &Array2<f64>,
    ) -> Result<(Array2<f64>, GcnCache)> {
        let v = features.nrows();
        if a.dim() != (v, v) {
            return Err(Error::Shape(format!(
                "adjacency is {}x{} but there are {v} nodes",
                a.nrows(),
                a.ncols()
            )));
        }
        let mut propagated = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut h = features.clone();
        for layer in &self.layers {
            let ah = a.dot(&h);
            h = relu(&layer.forward(store, &ah)?);
            propagated.push(ah);
            outputs.push(h.clone());
        }
        Ok((h, GcnCache { propagated, outputs }))
    }

    /// Accumulates weight gradients and returns the gradient w.r.t. `A`.
    pub fn backward(
        &self,
        store: &ParamStore,
        a: &Array2<f64>,
        features: &Array2<f64>,
        cache: &GcnCache,
        dout: &Array2<f64>,
        grads: &mut Gradients,
    ) -> Array2<f64> {
        let mut d_a = Array2::zeros(a.raw_dim());
        let mut dh = dout.clone();
        for k in (0..self.layers.len()).rev() {
            let dz = relu_backward(&cache.outputs[k], &dh);
            let d_ah = self.layers[k].backward(store, &cache.propagated[k], &dz, grads);
            let h_in = if k == 0 { features } else { &cache.outputs[k - 1] };
            d_a += &d_ah.dot(&h_in.t());
            dh = a.t().dot(&d_ah);
        }
        d_a
    }
}

/// Graph readout of node embeddings to a single row.
pub fn pool(nodes: &Array2<f64>, pooling: Pooling) -> Array2<f64> {
    match pooling {
        Pooling::Concat => nodes
            .to_shape((1, nodes.len()))
            .expect("contiguous node embeddings")
            .to_owned(),
        Pooling::Sum => nodes.sum_axis(Axis(0)).insert_axis(Axis(0)),
    }
}

/// Backward of [`pool`] for a `v`-node graph.
pub fn pool_backward(d_pooled: &Array2<f64>, v: usize, pooling: Pooling) -> Array2<f64> {
    match pooling {
        Pooling::Concat => {
            let width = d_pooled.len() / v;
            d_pooled
                .to_shape((v, width))
                .expect("pooled row of v · width values")
                .to_owned()
        }
        Pooling::Sum => {
            let row = d_pooled.row(0);
            Array2::from_shape_fn((v, row.len()), |(_, j)| row[j])
        }
    }
}

/// Batch norm followed by a two-layer MLP producing class logits.
#[derive(Debug, Clone)]
pub struct ClassifierHead {
    pub norm: BatchNorm1d,
    pub hidden: Dense,
    pub output: Dense,
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    input: Array2<f64>,
    norm: BatchNormCache,
    normalized: Array2<f64>,
    hidden: Array2<f64>,
}

impl ClassifierHead {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        classes: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            norm: BatchNorm1d::new(store, &format!("{prefix}.norm"), input_dim),
            hidden: Dense::new(store, &format!("{prefix}.mlp0"), input_dim, hidden, rng),
            output: Dense::new(store, &format!("{prefix}.mlp1"), hidden, classes, rng),
        }
    }

    pub fn forward(
        &self,
        store: &ParamStore,
        x: &Array2<f64>,
        mode: Mode,
    ) -> Result<(Array2<f64>, HeadCache)> {
        let (normalized, norm) = self.norm.forward(store, x, mode)?;
        let hidden = relu(&self.hidden.forward(store, &normalized)?);
        let logits = self.output.forward(store, &hidden)?;
        Ok((
            logits,
            HeadCache {
                input: x.clone(),
                norm,
                normalized,
                hidden,
            },
        ))
    }

    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &HeadCache,
        d_logits: &Array2<f64>,
        grads: &mut Gradients,
    ) -> Array2<f64> {
        let d_hidden = self.output.backward(store, &cache.hidden, d_logits, grads);
        let d_pre = relu_backward(&cache.hidden, &d_hidden);
        let d_norm = self.hidden.backward(store, &cache.normalized, &d_pre, grads);
        self.norm.backward(store, &cache.norm, &d_norm, grads)
    }

    pub fn update_running(&self, store: &mut ParamStore, cache: &HeadCache) {
        self.norm.update_running(store, &cache.norm, cache.input.nrows());
    }
}

/// GCN, pooling and head applied to a batch of graphs.
#[derive(Debug, Clone)]
pub struct GraphClassifier {
    pub gcn: Gcn,
    pub head: ClassifierHead,
    pub pooling: Pooling,
    pub nodes: usize,
}

#[derive(Debug, Clone)]
pub struct GraphClassifierCache {
    gcn: Vec<GcnCache>,
    pub head: HeadCache,
}

impl GraphClassifier {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &PredictorConfig,
        nodes: usize,
        classes: usize,
        rng: &mut R,
    ) -> Self {
        // node features are Pearson rows, so the input width is v
        let gcn = Gcn::new(store, prefix, nodes, &cfg.widths, rng);
        let head = ClassifierHead::new(
            store,
            &format!("{prefix}.head"),
            cfg.pooled_dim(nodes),
            cfg.mlp_hidden,
            classes,
            rng,
        );
        Self {
            gcn,
            head,
            pooling: cfg.pooling,
            nodes,
        }
    }

    pub fn forward(
        &self,
        store: &ParamStore,
        graphs: &[&Array2<f64>],
        features: &[&Array2<f64>],
        mode: Mode,
    ) -> Result<(Array2<f64>, GraphClassifierCache)> {
        if graphs.len() != features.len() || graphs.is_empty() {
            return Err(Error::Shape(format!(
                "{} graphs for {} feature matrices",
                graphs.len(),
                features.len()
            )));
        }
        let width = match self.pooling {
            Pooling::Concat => self.nodes * self.gcn.output_dim(),
            Pooling::Sum => self.gcn.output_dim(),
        };
        let mut pooled = Array2::zeros((graphs.len(), width));
        let mut caches = Vec::with_capacity(graphs.len());
        for (i, (a, f)) in graphs.iter().zip(features).enumerate() {
            if f.nrows() != self.nodes {
                return Err(Error::Shape(format!(
                    "classifier built for {} nodes, got {}",
                    self.nodes,
                    f.nrows()
                )));
            }
            let (nodes, cache) = self.gcn.forward(store, a, f)?;
            pooled.row_mut(i).assign(&pool(&nodes, self.pooling).row(0));
            caches.push(cache);
        }
        let (logits, head) = self.head.forward(store, &pooled, mode)?;
        Ok((logits, GraphClassifierCache { gcn: caches, head }))
    }

    /// Returns the gradient w.r.t. every input graph.
    pub fn backward(
        &self,
        store: &ParamStore,
        graphs: &[&Array2<f64>],
        features: &[&Array2<f64>],
        cache: &GraphClassifierCache,
        d_logits: &Array2<f64>,
        grads: &mut Gradients,
    ) -> Vec<Array2<f64>> {
        let d_pooled = self.head.backward(store, &cache.head, d_logits, grads);
        graphs
            .iter()
            .zip(features)
            .zip(&cache.gcn)
            .enumerate()
            .map(|(i, ((a, f), c))| {
                let row = d_pooled.row(i).insert_axis(Axis(0)).to_owned();
                let d_nodes = pool_backward(&row, self.nodes, self.pooling);
                self.gcn.backward(store, a, f, c, &d_nodes, grads)
            })
            .collect()
    }
}

/// All-ones adjacency of the GNN-uniform baseline.
pub fn build_uniform_graph(v: usize) -> Result<Array2<f64>> {
    if v == 0 {
        return Err(Error::InvalidInput("graph needs at least one node".into()));
    }
    Ok(Array2::ones((v, v)))
}

/// Signed Pearson adjacency of the GNN-Pearson baseline.
pub fn build_pearson_graph(x: &Array2<f64>) -> Result<Array2<f64>> {
    pearson_features(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
    }

    #[test]
    fn identity_graph_single_layer_is_relu_of_features() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let gcn = Gcn::new(&mut store, "g", 3, &[3], &mut rng);
        *store.get_mut(gcn.layers[0].weight) = Array2::eye(3);
        let f = array![[1.0, -2.0, 0.5], [-1.0, 3.0, 0.0], [0.2, 0.2, -0.2]];
        let (out, _) = gcn.forward(&store, &Array2::eye(3), &f).unwrap();
        assert_eq!(out, relu(&f));
    }

    #[test]
    fn ones_graph_with_identical_rows_gives_identical_outputs() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gcn = Gcn::new(&mut store, "g", 4, &[32, 32, 8], &mut rng);
        let row = random(1, 4, &mut rng);
        let f = Array2::from_shape_fn((4, 4), |(_, j)| row[[0, j]]);
        let (out, _) = gcn.forward(&store, &build_uniform_graph(4).unwrap(), &f).unwrap();
        for r in 1..4 {
            assert_eq!(out.row(r), out.row(0));
        }
    }

    #[test]
    fn zero_graph_gives_zero_output_and_weight_gradient() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gcn = Gcn::new(&mut store, "g", 5, &[4, 3], &mut rng);
        let f = random(5, 5, &mut rng);
        let a = Array2::zeros((5, 5));
        let (out, cache) = gcn.forward(&store, &a, &f).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
        let mut grads = Gradients::zeros_like(&store);
        gcn.backward(&store, &a, &f, &cache, &Array2::ones((5, 3)), &mut grads);
        for layer in &gcn.layers {
            assert!(grads.get(layer.weight).iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gcn = Gcn::new(&mut store, "g", 4, &[2], &mut rng);
        let err = gcn.forward(&store, &Array2::eye(3), &Array2::zeros((4, 4)));
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn concat_pooling_preserves_node_order() {
        let nodes = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        assert_eq!(pool(&nodes, Pooling::Concat), array![[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]]);
        assert_eq!(pool(&nodes, Pooling::Sum), array![[9.0, 12.0]]);
        let back = pool_backward(&array![[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]], 3, Pooling::Concat);
        assert_eq!(back, nodes);
        let back = pool_backward(&array![[1.0, 2.0]], 3, Pooling::Sum);
        assert_eq!(back, array![[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]]);
    }

    fn permute(m: &Array2<f64>, perm: &[usize], cols_too: bool) -> Array2<f64> {
        Array2::from_shape_fn(m.dim(), |(i, j)| {
            m[[perm[i], if cols_too { perm[j] } else { j }]]
        })
    }

    #[test]
    fn sum_pooling_is_permutation_invariant_and_concat_is_not() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gcn = Gcn::new(&mut store, "g", 5, &[6, 4], &mut rng);
        let a = random(5, 5, &mut rng).mapv(|v: f64| v.abs().min(1.0));
        let a = (&a + &a.t()) / 2.0;
        let f = random(5, 5, &mut rng);
        let perm = [3, 0, 4, 1, 2];
        let (out, _) = gcn.forward(&store, &a, &f).unwrap();
        // node features are indexed by node on rows only; columns are feature channels
        let (out_p, _) = gcn
            .forward(&store, &permute(&a, &perm, true), &permute(&f, &perm, false))
            .unwrap();
        let s = pool(&out, Pooling::Sum);
        let s_p = pool(&out_p, Pooling::Sum);
        assert!(s.iter().zip(s_p.iter()).all(|(x, y)| (x - y).abs() < 1e-9));
        let c = pool(&out, Pooling::Concat);
        let c_p = pool(&out_p, Pooling::Concat);
        assert!(c.iter().zip(c_p.iter()).any(|(x, y)| (x - y).abs() > 1e-6));
    }

    #[test]
    fn classifier_logits_shape_and_singleton_batch_error() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = PredictorConfig::default();
        let clf = GraphClassifier::new(&mut store, "p", &cfg, 6, 2, &mut rng);
        let a: Vec<_> = (0..3).map(|_| random(6, 6, &mut rng)).collect();
        let f: Vec<_> = (0..3).map(|_| random(6, 6, &mut rng)).collect();
        let ar: Vec<_> = a.iter().collect();
        let fr: Vec<_> = f.iter().collect();
        let (logits, _) = clf.forward(&store, &ar, &fr, Mode::Train).unwrap();
        assert_eq!(logits.dim(), (3, 2));
        let err = clf.forward(&store, &ar[..1], &fr[..1], Mode::Train).unwrap_err();
        assert!(err.to_string().contains("at least 2"));
        let (single, _) = clf.forward(&store, &ar[..1], &fr[..1], Mode::Eval).unwrap();
        assert_eq!(single.dim(), (1, 2));
    }

    #[test]
    fn fixed_graphs() {
        assert_eq!(build_uniform_graph(3).unwrap(), Array2::<f64>::ones((3, 3)));
        let x = array![[1.0, 2.0, 3.0, 4.0], [1.0, 2.0, 3.0, 4.0], [4.0, 3.0, 2.0, 1.0]];
        let g = build_pearson_graph(&x).unwrap();
        assert!((g[[0, 1]] - 1.0).abs() < 1e-12);
        assert!(g[[0, 2]] < 0.0);
        assert_eq!(g, g.t());
        assert!((0..3).all(|i| g[[i, i]] == 1.0));
    }
}
