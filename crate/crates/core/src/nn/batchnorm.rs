use ndarray::{Array1, Array2, Axis};

use super::params::{BufferId, Gradients, ParamId, ParamStore};
use super::Mode;
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Batch normalization over the rows of an `n × features` matrix.
///
/// Training mode normalizes with the batch statistics (biased variance) and
/// requires at least two rows; evaluation mode uses the running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
    pub features: usize,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    normalized: Array2<f64>,
    inv_std: Array1<f64>,
    batch_mean: Array1<f64>,
    batch_var: Array1<f64>,
    mode: Mode,
}

impl BatchNorm1d {
    pub fn new(store: &mut ParamStore, name: &str, features: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Array2::ones((1, features))),
            beta: store.add(format!("{name}.beta"), Array2::zeros((1, features))),
            running_mean: store
                .add_buffer(format!("{name}.running_mean"), Array2::zeros((1, features))),
            running_var: store
                .add_buffer(format!("{name}.running_var"), Array2::ones((1, features))),
            features,
        }
    }

    pub fn forward(
        &self,
        store: &ParamStore,
        x: &Array2<f64>,
        mode: Mode,
    ) -> Result<(Array2<f64>, BatchNormCache)> {
        if x.ncols() != self.features {
            return Err(Error::Shape(format!(
                "batch norm expects {} features, got {}",
                self.features,
                x.ncols()
            )));
        }
        let (mean, var) = match mode {
            Mode::Train => {
                if x.nrows() < 2 {
                    return Err(Error::InvalidInput(
                        "batch norm in training mode needs a batch of at least 2 samples".into(),
                    ));
                }
                let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
                let centered = x - &mean;
                let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).expect("non-empty");
                (mean, var)
            }
            Mode::Eval => (
                store.buffer(self.running_mean).row(0).to_owned(),
                store.buffer(self.running_var).row(0).to_owned(),
            ),
        };
        let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
        let normalized = (x - &mean) * &inv_std;
        let y = &normalized * &store.get(self.gamma).row(0) + store.get(self.beta).row(0);
        Ok((
            y,
            BatchNormCache {
                normalized,
                inv_std,
                batch_mean: mean,
                batch_var: var,
                mode,
            },
        ))
    }

    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &BatchNormCache,
        dy: &Array2<f64>,
        grads: &mut Gradients,
    ) -> Array2<f64> {
        *grads.get_mut(self.beta) += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        *grads.get_mut(self.gamma) +=
            &(dy * &cache.normalized).sum_axis(Axis(0)).insert_axis(Axis(0));
        let dnorm = dy * &store.get(self.gamma).row(0);
        match cache.mode {
            Mode::Eval => dnorm * &cache.inv_std,
            Mode::Train => {
                let n = dy.nrows() as f64;
                let sum_d = dnorm.sum_axis(Axis(0));
                let sum_dx = (&dnorm * &cache.normalized).sum_axis(Axis(0));
                let inner = &dnorm * n - &sum_d - &(&cache.normalized * &sum_dx);
                inner * &(&cache.inv_std / n)
            }
        }
    }

    /// Fold the batch statistics of a training-mode pass into the running averages.
    pub fn update_running(&self, store: &mut ParamStore, cache: &BatchNormCache, batch: usize) {
        if cache.mode != Mode::Train || batch < 2 {
            return;
        }
        let unbiased = &cache.batch_var * (batch as f64 / (batch as f64 - 1.0));
        let rm = store.buffer_mut(self.running_mean);
        let updated = &rm.row(0) * (1.0 - BN_MOMENTUM) + &cache.batch_mean * BN_MOMENTUM;
        rm.row_mut(0).assign(&updated);
        let rv = store.buffer_mut(self.running_var);
        let updated = &rv.row(0) * (1.0 - BN_MOMENTUM) + &unbiased * BN_MOMENTUM;
        rv.row_mut(0).assign(&updated);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn training_mode_standardizes_features() {
        let mut store = ParamStore::new();
        let bn = BatchNorm1d::new(&mut store, "bn", 5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for batch in [2usize, 3, 16] {
            // Spread of ~30 keeps eps/var below 1e-6.
            let x = Array2::from_shape_simple_fn((batch, 5), || rng.gen_range(-50.0..50.0));
            let (y, _) = bn.forward(&store, &x, Mode::Train).unwrap();
            for col in y.columns() {
                let mean = col.mean().unwrap();
                let var = col.mapv(|v| (v - mean).powi(2)).mean().unwrap();
                assert!(mean.abs() < 1e-6);
                assert!((var - 1.0).abs() < 1e-6, "var {var}");
            }
        }
    }

    #[test]
    fn single_row_training_batch_is_rejected() {
        let mut store = ParamStore::new();
        let bn = BatchNorm1d::new(&mut store, "bn", 2);
        let err = bn
            .forward(&store, &Array2::zeros((1, 2)), Mode::Train)
            .unwrap_err();
        assert!(err.to_string().contains("at least 2"));
        assert!(bn.forward(&store, &Array2::zeros((1, 2)), Mode::Eval).is_ok());
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut store = ParamStore::new();
        let bn = BatchNorm1d::new(&mut store, "bn", 1);
        let x = ndarray::array![[1.0], [3.0]];
        let (_, cache) = bn.forward(&store, &x, Mode::Train).unwrap();
        bn.update_running(&mut store, &cache, 2);
        assert!((store.buffer(bn.running_mean)[[0, 0]] - 0.2).abs() < 1e-15);
        // unbiased variance of {1,3} is 2
        assert!((store.buffer(bn.running_var)[[0, 0]] - (0.9 + 0.2)).abs() < 1e-15);
    }
}
