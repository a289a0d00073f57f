use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Handle to a trainable tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Handle to a non-trainable state tensor (batch-norm running statistics).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BufferId(pub(crate) usize);

/// A named trainable matrix. Vectors (biases, norm scales) are stored as `1 × n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamTensor {
    pub name: String,
    pub value: Array2<f64>,
}

/// Flat registry of every parameter and buffer of a model.
///
/// Layers keep only ids; all values live here so the optimizer, the
/// checkpoint writer and the finite-difference checker can walk one list.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<ParamTensor>,
    buffers: Vec<ParamTensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        self.params.push(ParamTensor {
            name: name.into(),
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Array2<f64>) -> BufferId {
        self.buffers.push(ParamTensor {
            name: name.into(),
            value,
        });
        BufferId(self.buffers.len() - 1)
    }

    /// Weight matrix with entries uniform in ±sqrt(6 / (fan_in + fan_out)).
    pub fn add_xavier<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        self.add_uniform(name, rows, cols, bound, rng)
    }

    pub fn add_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        bound: f64,
        rng: &mut R,
    ) -> ParamId {
        let value = Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-bound..=bound));
        self.add(name, value)
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.params[id.0].value
    }

    pub fn buffer(&self, id: BufferId) -> &Array2<f64> {
        &self.buffers[id.0].value
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Array2<f64> {
        &mut self.buffers[id.0].value
    }

    pub fn params(&self) -> &[ParamTensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [ParamTensor] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[ParamTensor] {
        &self.buffers
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar trainable values.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Overwrite values from `other`, which must have identical names and shapes.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        fn check(ours: &[ParamTensor], theirs: &[ParamTensor], kind: &str) -> Result<()> {
            if ours.len() != theirs.len() {
                return Err(Error::Shape(format!(
                    "{kind} count mismatch: model has {}, checkpoint has {}",
                    ours.len(),
                    theirs.len()
                )));
            }
            for (a, b) in ours.iter().zip(theirs) {
                if a.name != b.name || a.value.dim() != b.value.dim() {
                    return Err(Error::Shape(format!(
                        "{kind} mismatch: model expects {} {:?}, checkpoint has {} {:?}",
                        a.name,
                        a.value.dim(),
                        b.name,
                        b.value.dim()
                    )));
                }
            }
            Ok(())
        }
        check(&self.params, &other.params, "parameter")?;
        check(&self.buffers, &other.buffers, "buffer")?;
        self.params.clone_from(&other.params);
        self.buffers.clone_from(&other.buffers);
        Ok(())
    }
}

/// Gradient accumulator aligned with the parameters of a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    grads: Vec<Array2<f64>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            grads: store
                .params
                .iter()
                .map(|p| Array2::zeros(p.value.raw_dim()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.grads[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Array2<f64>> {
        self.grads.iter()
    }

    pub fn as_slice(&self) -> &[Array2<f64>] {
        &self.grads
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.grads {
            g.mapv_inplace(|x| x * factor);
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            *a += b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().all(|g| g.iter().all(|x| x.is_finite()))
    }
}
