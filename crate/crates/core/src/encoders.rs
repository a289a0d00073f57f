//! Per-ROI time-series encoders producing `v × d` embeddings.
//!
//! Both encoders treat every ROI of every sample as an independent sequence
//! and share their weights across ROIs. Batches are processed as one stacked
//! matrix with row `b * v + p` holding ROI `p` of sample `b`.

use ndarray::{concatenate, s, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    global_max_pool, global_max_pool_backward, relu, relu_backward, Conv1d, Conv1dCache, Dense,
    GlobalMaxPoolCache, Gradients, GruCache, GruCell, ParamStore,
};

pub const CNN_LAYERS: usize = 3;
pub const GRU_LAYERS: usize = 4;

const CONV1_CHANNELS: usize = 32;
const CONV2_CHANNELS: usize = 32;
const CONV3_CHANNELS: usize = 16;
const CONV_KERNEL: usize = 8;
const CONV1_STRIDE: usize = 2;
const CNN_HIDDEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Cnn,
    Gru,
}

impl std::fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EncoderKind::Cnn => "cnn",
            EncoderKind::Gru => "gru",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    /// Window τ: first-conv kernel width (CNN) or segment length (GRU).
    pub window: usize,
    /// Embedding size d.
    pub dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kind: EncoderKind::Gru,
            window: 8,
            dim: 8,
        }
    }
}

impl EncoderConfig {
    /// Shortest series length this configuration accepts.
    pub fn min_steps(&self) -> usize {
        match self.kind {
            // conv1 output must leave room for two kernel-8 convolutions
            EncoderKind::Cnn => self.window + CONV1_STRIDE * (2 * (CONV_KERNEL - 1)),
            EncoderKind::Gru => self.window,
        }
    }

    pub fn validate(&self, steps: usize) -> Result<()> {
        if self.window == 0 || self.dim == 0 {
            return Err(Error::InvalidConfig(
                "encoder window and dim must be positive".into(),
            ));
        }
        if steps < self.min_steps() {
            return Err(Error::InvalidConfig(format!(
                "{} encoder with window {} needs at least {} time steps, series has {}",
                self.kind,
                self.window,
                self.min_steps(),
                steps
            )));
        }
        Ok(())
    }
}

/// Conv(1→32, τ, stride 2) → Conv(32→32, 8) → Conv(32→16, 8) → global max
/// pool → Dense(16→32) → ReLU → Dense(32→d).
#[derive(Debug, Clone)]
pub struct CnnEncoder {
    conv1: Conv1d,
    conv2: Conv1d,
    conv3: Conv1d,
    fc1: Dense,
    fc2: Dense,
}

#[derive(Debug, Clone)]
pub struct CnnCache {
    c1: Conv1dCache,
    c2: Conv1dCache,
    c3: Conv1dCache,
    pool: GlobalMaxPoolCache,
    pooled: Array2<f64>,
    hidden: Array2<f64>,
}

impl CnnEncoder {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, cfg: &EncoderConfig, rng: &mut R) -> Self {
        Self {
            conv1: Conv1d::new(
                store,
                &format!("{prefix}.conv1"),
                1,
                CONV1_CHANNELS,
                cfg.window,
                CONV1_STRIDE,
                rng,
            ),
            conv2: Conv1d::new(
                store,
                &format!("{prefix}.conv2"),
                CONV1_CHANNELS,
                CONV2_CHANNELS,
                CONV_KERNEL,
                1,
                rng,
            ),
            conv3: Conv1d::new(
                store,
                &format!("{prefix}.conv3"),
                CONV2_CHANNELS,
                CONV3_CHANNELS,
                CONV_KERNEL,
                1,
                rng,
            ),
            fc1: Dense::new(store, &format!("{prefix}.fc1"), CONV3_CHANNELS, CNN_HIDDEN, rng),
            fc2: Dense::new(store, &format!("{prefix}.fc2"), CNN_HIDDEN, cfg.dim, rng),
        }
    }

    fn forward(&self, store: &ParamStore, xs: &[&Array2<f64>]) -> Result<(Array2<f64>, CnnCache)> {
        let rows: usize = xs.iter().map(|x| x.nrows()).sum();
        let t = xs[0].ncols();
        let flat: Vec<f64> = xs.iter().flat_map(|x| x.iter().copied()).collect();
        let input = Array2::from_shape_vec((rows * t, 1), flat).expect("row-major stacking");
        let (y1, c1) = self.conv1.forward(store, &input, rows)?;
        let (y2, c2) = self.conv2.forward(store, &y1, rows)?;
        let (y3, c3) = self.conv3.forward(store, &y2, rows)?;
        let (pooled, pool) = global_max_pool(&y3, rows)?;
        let hidden = relu(&self.fc1.forward(store, &pooled)?);
        let out = self.fc2.forward(store, &hidden)?;
        Ok((
            out,
            CnnCache {
                c1,
                c2,
                c3,
                pool,
                pooled,
                hidden,
            },
        ))
    }

    fn backward(&self, store: &ParamStore, cache: &CnnCache, dout: &Array2<f64>, grads: &mut Gradients) {
        let dhidden = self.fc2.backward(store, &cache.hidden, dout, grads);
        let dpre = relu_backward(&cache.hidden, &dhidden);
        let dpooled = self.fc1.backward(store, &cache.pooled, &dpre, grads);
        let dy3 = global_max_pool_backward(&cache.pool, &dpooled);
        let dy2 = self.conv3.backward(store, &cache.c3, &dy3, grads);
        let dy1 = self.conv2.backward(store, &cache.c2, &dy2, grads);
        // input gradient of the first convolution is not needed
        let _ = self.conv1.backward(store, &cache.c1, &dy1, grads);
    }
}

/// Stacked bidirectional GRU over non-overlapping windows of length τ with
/// hidden size τ per direction, followed by Dense(2τ → d) on the final
/// forward state concatenated with the final backward state of the top layer.
#[derive(Debug, Clone)]
pub struct GruEncoder {
    layers: Vec<[GruCell; 2]>,
    head: Dense,
    window: usize,
}

#[derive(Debug, Clone)]
pub struct GruLayerCache {
    forward: Vec<GruCache>,
    backward: Vec<GruCache>,
}

#[derive(Debug, Clone)]
pub struct GruEncoderCache {
    layers: Vec<GruLayerCache>,
    readout: Array2<f64>,
    rows: usize,
    segments: usize,
}

impl GruEncoder {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, cfg: &EncoderConfig, rng: &mut R) -> Self {
        let hidden = cfg.window;
        let layers = (0..GRU_LAYERS)
            .map(|l| {
                let input = if l == 0 { cfg.window } else { 2 * hidden };
                [
                    GruCell::new(store, &format!("{prefix}.gru{l}.fwd"), input, hidden, rng),
                    GruCell::new(store, &format!("{prefix}.gru{l}.bwd"), input, hidden, rng),
                ]
            })
            .collect();
        let head = Dense::new(store, &format!("{prefix}.head"), 2 * hidden, cfg.dim, rng);
        Self {
            layers,
            head,
            window: cfg.window,
        }
    }

    /// Number of windows `floor(t / τ)`; trailing steps are dropped.
    pub fn segments(&self, steps: usize) -> usize {
        steps / self.window
    }

    fn forward(
        &self,
        store: &ParamStore,
        xs: &[&Array2<f64>],
    ) -> Result<(Array2<f64>, GruEncoderCache)> {
        let rows: usize = xs.iter().map(|x| x.nrows()).sum();
        let tau = self.window;
        let segments = self.segments(xs[0].ncols());
        if segments == 0 {
            return Err(Error::InvalidConfig(format!(
                "window {tau} exceeds series length {}",
                xs[0].ncols()
            )));
        }
        let mut inputs: Vec<Array2<f64>> = (0..segments)
            .map(|z| {
                let views: Vec<_> = xs.iter().map(|x| x.slice(s![.., z * tau..(z + 1) * tau])).collect();
                concatenate(Axis(0), &views).expect("equal widths")
            })
            .collect();

        let hidden = tau;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut readout = Array2::zeros((rows, 2 * hidden));
        for (l, [fwd, bwd]) in self.layers.iter().enumerate() {
            let mut outs_f = Vec::with_capacity(segments);
            let mut fcache = Vec::with_capacity(segments);
            let mut h = Array2::zeros((rows, hidden));
            for x in &inputs {
                let (next, c) = fwd.forward(store, x, &h)?;
                outs_f.push(next.clone());
                fcache.push(c);
                h = next;
            }
            let mut outs_b = vec![Array2::zeros((0, 0)); segments];
            let mut bcache: Vec<Option<GruCache>> = vec![None; segments];
            let mut h = Array2::zeros((rows, hidden));
            for z in (0..segments).rev() {
                let (next, c) = bwd.forward(store, &inputs[z], &h)?;
                outs_b[z] = next.clone();
                bcache[z] = Some(c);
                h = next;
            }
            if l + 1 == self.layers.len() {
                readout
                    .slice_mut(s![.., ..hidden])
                    .assign(&outs_f[segments - 1]);
                readout.slice_mut(s![.., hidden..]).assign(&outs_b[0]);
            }
            inputs = outs_f
                .iter()
                .zip(&outs_b)
                .map(|(f, b)| concatenate(Axis(1), &[f.view(), b.view()]).expect("same rows"))
                .collect();
            caches.push(GruLayerCache {
                forward: fcache,
                backward: bcache.into_iter().map(|c| c.expect("filled")).collect(),
            });
        }
        let out = self.head.forward(store, &readout)?;
        Ok((
            out,
            GruEncoderCache {
                layers: caches,
                readout,
                rows,
                segments,
            },
        ))
    }

    fn backward(
        &self,
        store: &ParamStore,
        cache: &GruEncoderCache,
        dout: &Array2<f64>,
        grads: &mut Gradients,
    ) {
        let hidden = self.window;
        let segments = cache.segments;
        let zeros = || Array2::<f64>::zeros((cache.rows, hidden));
        let dreadout = self.head.backward(store, &cache.readout, dout, grads);

        let mut d_out_f: Vec<Array2<f64>> = (0..segments).map(|_| zeros()).collect();
        let mut d_out_b: Vec<Array2<f64>> = (0..segments).map(|_| zeros()).collect();
        d_out_f[segments - 1] += &dreadout.slice(s![.., ..hidden]);
        d_out_b[0] += &dreadout.slice(s![.., hidden..]);

        for (l, ([fwd, bwd], lc)) in self.layers.iter().zip(&cache.layers).enumerate().rev() {
            let in_dim = if l == 0 { self.window } else { 2 * hidden };
            let mut d_in: Vec<Array2<f64>> = (0..segments)
                .map(|_| Array2::zeros((cache.rows, in_dim)))
                .collect();
            let mut carry = zeros();
            for z in (0..segments).rev() {
                let dh = &d_out_f[z] + &carry;
                let (dx, dprev) = fwd.backward(store, &lc.forward[z], &dh, grads);
                d_in[z] += &dx;
                carry = dprev;
            }
            let mut carry = zeros();
            for z in 0..segments {
                let dh = &d_out_b[z] + &carry;
                let (dx, dprev) = bwd.backward(store, &lc.backward[z], &dh, grads);
                d_in[z] += &dx;
                carry = dprev;
            }
            if l > 0 {
                d_out_f = d_in.iter().map(|d| d.slice(s![.., ..hidden]).to_owned()).collect();
                d_out_b = d_in.iter().map(|d| d.slice(s![.., hidden..]).to_owned()).collect();
            }
        }
    }
}

/// Either encoder, selected by [`EncoderKind`].
#[derive(Debug, Clone)]
pub enum Encoder {
    Cnn(CnnEncoder),
    Gru(GruEncoder),
}

#[derive(Debug, Clone)]
pub enum EncoderCache {
    Cnn(CnnCache),
    Gru(GruEncoderCache),
}

impl Encoder {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, cfg: &EncoderConfig, rng: &mut R) -> Self {
        match cfg.kind {
            EncoderKind::Cnn => Encoder::Cnn(CnnEncoder::new(store, prefix, cfg, rng)),
            EncoderKind::Gru => Encoder::Gru(GruEncoder::new(store, prefix, cfg, rng)),
        }
    }

    /// Encode a batch of samples; returns the stacked `(batch · v) × d` embeddings.
    pub fn forward(
        &self,
        store: &ParamStore,
        xs: &[&Array2<f64>],
    ) -> Result<(Array2<f64>, EncoderCache)> {
        let first = xs
            .first()
            .ok_or_else(|| Error::InvalidInput("empty batch".into()))?;
        if xs.iter().any(|x| x.dim() != first.dim()) {
            return Err(Error::Shape("all samples in a batch must share v × t".into()));
        }
        match self {
            Encoder::Cnn(e) => e.forward(store, xs).map(|(o, c)| (o, EncoderCache::Cnn(c))),
            Encoder::Gru(e) => e.forward(store, xs).map(|(o, c)| (o, EncoderCache::Gru(c))),
        }
    }

    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &EncoderCache,
        dout: &Array2<f64>,
        grads: &mut Gradients,
    ) {
        match (self, cache) {
            (Encoder::Cnn(e), EncoderCache::Cnn(c)) => e.backward(store, c, dout, grads),
            (Encoder::Gru(e), EncoderCache::Gru(c)) => e.backward(store, c, dout, grads),
            _ => panic!("encoder cache does not match encoder kind"),
        }
    }

    /// Embeddings `h_e` (`v × d`) for a single sample.
    pub fn encode(&self, store: &ParamStore, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.forward(store, &[x]).map(|(h, _)| h)
    }
}
