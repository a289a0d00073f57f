//! Feed-forward building blocks with explicit backward passes.
//!
//! Every layer splits into a `forward` that returns its output plus a cache,
//! and a `backward` that consumes the cache, accumulates parameter gradients
//! into a [`Gradients`] buffer and returns the gradient w.r.t. the input.
//! Parameters are read from a shared [`ParamStore`] so forward passes never
//! need mutable access to the model.

use ndarray::{s, Array2, Axis};
use rand::Rng;

use super::params::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Affine map `y = x W + b` applied row-wise; `W` is `in × out`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Dense {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        output_dim: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_xavier(
            format!("{name}.weight"),
            input_dim,
            output_dim,
            input_dim,
            output_dim,
            rng,
        );
        let bias = store.add(format!("{name}.bias"), Array2::zeros((1, output_dim)));
        Self {
            weight,
            bias,
            input_dim,
            output_dim,
        }
    }

    pub fn forward(&self, store: &ParamStore, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim {
            return Err(Error::Shape(format!(
                "dense layer expects {} input columns, got {}",
                self.input_dim,
                x.ncols()
            )));
        }
        Ok(x.dot(store.get(self.weight)) + store.get(self.bias))
    }

    /// `x` is the input seen by `forward`.
    pub fn backward(
        &self,
        store: &ParamStore,
        x: &Array2<f64>,
        dy: &Array2<f64>,
        grads: &mut Gradients,
    ) -> Array2<f64> {
        *grads.get_mut(self.weight) += &x.t().dot(dy);
        *grads.get_mut(self.bias) += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        dy.dot(&store.get(self.weight).t())
    }
}

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Backward of [`relu`] given its output.
pub fn relu_backward(y: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = dy.clone();
    dx.zip_mut_with(y, |d, &out| {
        if out <= 0.0 {
            *d = 0.0;
        }
    });
    dx
}

/// Row-wise softmax, stabilized by subtracting each row's maximum.
pub fn softmax_rows(m: &Array2<f64>) -> Array2<f64> {
    let mut out = m.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Backward of [`softmax_rows`] given its output `p`.
pub fn softmax_rows_backward(p: &Array2<f64>, dp: &Array2<f64>) -> Array2<f64> {
    let inner = (p * dp).sum_axis(Axis(1)).insert_axis(Axis(1));
    p * &(dp - &inner)
}

/// 1-D convolution over a batch of sequences.
///
/// Activations use a "sequence-major" layout: a batch of `n` sequences of
/// length `len` with `c` channels is an `(n * len) × c` matrix whose row
/// `seq * len + pos` holds the channel vector at that position. The weight is
/// `(kernel * in_channels) × out_channels`, indexed by `(tap, in_channel)`.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone)]
pub struct Conv1dCache {
    cols: Array2<f64>,
    sequences: usize,
    in_len: usize,
}

impl Conv1d {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel;
        let fan_out = out_channels * kernel;
        let weight = store.add_xavier(
            format!("{name}.weight"),
            kernel * in_channels,
            out_channels,
            fan_in,
            fan_out,
            rng,
        );
        let bias = store.add(format!("{name}.bias"), Array2::zeros((1, out_channels)));
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
        }
    }

    /// Output length for an input of length `len`, or `None` if the kernel does not fit.
    pub fn output_len(&self, len: usize) -> Option<usize> {
        (len >= self.kernel).then(|| (len - self.kernel) / self.stride + 1)
    }

    pub fn forward(
        &self,
        store: &ParamStore,
        x: &Array2<f64>,
        sequences: usize,
    ) -> Result<(Array2<f64>, Conv1dCache)> {
        if x.ncols() != self.in_channels || sequences == 0 || !x.nrows().is_multiple_of(sequences) {
            return Err(Error::Shape(format!(
                "conv1d expects (sequences*len) x {} input, got {:?} for {} sequences",
                self.in_channels,
                x.dim(),
                sequences
            )));
        }
        let in_len = x.nrows() / sequences;
        let out_len = self.output_len(in_len).ok_or_else(|| {
            Error::Shape(format!(
                "conv1d kernel {} longer than sequence length {}",
                self.kernel, in_len
            ))
        })?;
        let c = self.in_channels;
        let mut cols = Array2::zeros((sequences * out_len, self.kernel * c));
        for seq in 0..sequences {
            for o in 0..out_len {
                let row = seq * out_len + o;
                let start = seq * in_len + o * self.stride;
                for tap in 0..self.kernel {
                    cols.slice_mut(s![row, tap * c..(tap + 1) * c])
                        .assign(&x.row(start + tap));
                }
            }
        }
        let y = cols.dot(store.get(self.weight)) + store.get(self.bias);
        Ok((
            y,
            Conv1dCache {
                cols,
                sequences,
                in_len,
            },
        ))
    }

    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &Conv1dCache,
        dy: &Array2<f64>,
        grads: &mut Gradients,
    ) -> Array2<f64> {
        *grads.get_mut(self.weight) += &cache.cols.t().dot(dy);
        *grads.get_mut(self.bias) += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dcols = dy.dot(&store.get(self.weight).t());
        let c = self.in_channels;
        let out_len = dy.nrows() / cache.sequences;
        let mut dx = Array2::zeros((cache.sequences * cache.in_len, c));
        for seq in 0..cache.sequences {
            for o in 0..out_len {
                let row = seq * out_len + o;
                let start = seq * cache.in_len + o * self.stride;
                for tap in 0..self.kernel {
                    let mut target = dx.row_mut(start + tap);
                    target += &dcols.slice(s![row, tap * c..(tap + 1) * c]);
                }
            }
        }
        dx
    }
}

/// Max over all positions of each sequence, per channel: `(n * len) × c → n × c`.
#[derive(Debug, Clone)]
pub struct GlobalMaxPoolCache {
    argmax: Array2<usize>,
    in_rows: usize,
}

pub fn global_max_pool(
    x: &Array2<f64>,
    sequences: usize,
) -> Result<(Array2<f64>, GlobalMaxPoolCache)> {
    if sequences == 0 || !x.nrows().is_multiple_of(sequences) || x.nrows() == 0 {
        return Err(Error::Shape(format!(
            "max pool cannot split {} rows into {} sequences",
            x.nrows(),
            sequences
        )));
    }
    let len = x.nrows() / sequences;
    let c = x.ncols();
    let mut out = Array2::zeros((sequences, c));
    let mut argmax = Array2::zeros((sequences, c));
    for seq in 0..sequences {
        for ch in 0..c {
            let mut best = seq * len;
            for pos in 1..len {
                let r = seq * len + pos;
                if x[[r, ch]] > x[[best, ch]] {
                    best = r;
                }
            }
            out[[seq, ch]] = x[[best, ch]];
            argmax[[seq, ch]] = best;
        }
    }
    Ok((
        out,
        GlobalMaxPoolCache {
            argmax,
            in_rows: x.nrows(),
        },
    ))
}

pub fn global_max_pool_backward(cache: &GlobalMaxPoolCache, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = Array2::zeros((cache.in_rows, dy.ncols()));
    for ((seq, ch), &row) in cache.argmax.indexed_iter() {
        dx[[row, ch]] += dy[[seq, ch]];
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn relu_forward_and_mask() {
        let x = array![[-1.0, 2.0]];
        let y = relu(&x);
        assert_eq!(y, array![[0.0, 2.0]]);
        let dx = relu_backward(&y, &array![[1.0, 1.0]]);
        assert_eq!(dx, array![[0.0, 1.0]]);
    }

    #[test]
    fn dense_identity_passes_input_through() {
        let mut store = ParamStore::new();
        let weight = store.add("w", Array2::eye(3));
        let bias = store.add("b", Array2::zeros((1, 3)));
        let layer = Dense {
            weight,
            bias,
            input_dim: 3,
            output_dim: 3,
        };
        let x = array![[1.0, -2.0, 3.5], [0.0, 4.0, -1.0]];
        assert_eq!(layer.forward(&store, &x).unwrap(), x);
    }

    #[test]
    fn dense_rejects_wrong_width() {
        let mut store = ParamStore::new();
        let mut rng = rand::thread_rng();
        let layer = Dense::new(&mut store, "d", 3, 2, &mut rng);
        assert!(matches!(
            layer.forward(&store, &Array2::zeros((1, 4))),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn softmax_examples() {
        let p = softmax_rows(&array![[0.0, 0.0], [1000.0, 1000.0], [0.0, 3f64.ln()]]);
        assert!((p[[0, 0]] - 0.5).abs() < 1e-15 && (p[[0, 1]] - 0.5).abs() < 1e-15);
        assert!((p[[1, 0]] - 0.5).abs() < 1e-15 && (p[[1, 1]] - 0.5).abs() < 1e-15);
        assert!((p[[2, 0]] - 0.25).abs() < 1e-15);
        assert!((p[[2, 1]] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn conv_output_lengths() {
        let mut store = ParamStore::new();
        let mut rng = rand::thread_rng();
        let conv = Conv1d::new(&mut store, "c", 1, 2, 4, 2, &mut rng);
        assert_eq!(conv.output_len(40), Some(19));
        assert_eq!(conv.output_len(3), None);
        let x = Array2::ones((2 * 10, 1));
        let (y, _) = conv.forward(&store, &x, 2).unwrap();
        assert_eq!(y.dim(), (2 * 4, 2));
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut store = ParamStore::new();
        let mut rng = rand::thread_rng();
        let conv = Conv1d::new(&mut store, "c", 2, 3, 3, 2, &mut rng);
        *store.get_mut(conv.bias) = array![[0.1, -0.2, 0.3]];
        let x = Array2::from_shape_fn((9, 2), |(i, j)| (i as f64 * 0.7 - j as f64).sin());
        let (y, _) = conv.forward(&store, &x, 1).unwrap();
        let w = store.get(conv.weight);
        for o in 0..4 {
            for oc in 0..3 {
                let mut acc = store.get(conv.bias)[[0, oc]];
                for tap in 0..3 {
                    for ic in 0..2 {
                        acc += w[[tap * 2 + ic, oc]] * x[[o * 2 + tap, ic]];
                    }
                }
                assert!((y[[o, oc]] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn max_pool_picks_maximum() {
        let x = array![[1.0, 5.0], [3.0, -1.0], [0.0, 0.0], [-2.0, 7.0]];
        let (y, cache) = global_max_pool(&x, 2).unwrap();
        assert_eq!(y, array![[3.0, 5.0], [0.0, 7.0]]);
        let dx = global_max_pool_backward(&cache, &array![[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(dx, array![[0.0, 2.0], [1.0, 0.0], [3.0, 0.0], [0.0, 4.0]]);
    }
}
