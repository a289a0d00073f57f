//! Minimal differentiable toolkit: layers with exact backward passes, Adam,
//! and a finite-difference gradient checker.

mod adam;
mod batchnorm;
mod gradcheck;
mod gru;
mod layers;
mod params;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use batchnorm::{BatchNorm1d, BatchNormCache, BN_EPS, BN_MOMENTUM};
pub use gradcheck::{
    gradient_check, relative_error, CoordinateCheck, Discrepancy, GradCheckReport, FD_STEP,
    GRADCHECK_TOL,
};
pub use gru::{GruCache, GruCell};
pub use layers::{
    global_max_pool, global_max_pool_backward, relu, relu_backward, softmax_rows,
    softmax_rows_backward, Conv1d, Conv1dCache, Dense, GlobalMaxPoolCache,
};
pub use params::{BufferId, Gradients, ParamId, ParamStore, ParamTensor};

use crate::error::{Error, Result};

/// Whether batch norm uses batch statistics (`Train`) or running averages (`Eval`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// A single layer wrapped behind a uniform matrix-in, matrix-out interface.
///
/// `Gru` takes the concatenation `[x | h]` as input and returns the next state.
#[derive(Debug, Clone)]
pub enum Layer {
    Dense(Dense),
    Conv1d { conv: Conv1d, sequences: usize },
    Relu,
    Softmax,
    GlobalMaxPool { sequences: usize },
    BatchNorm(BatchNorm1d),
    Gru(GruCell),
}

/// Result of one forward and backward pass through a [`Layer`].
#[derive(Debug, Clone)]
pub struct LayerPass {
    pub output: Array2<f64>,
    pub input_grad: Array2<f64>,
    pub param_grads: Gradients,
}

/// Run `layer` forward on `input`, then backpropagate `upstream` (the
/// gradient of some scalar w.r.t. the output). Batch norm runs in training mode.
pub fn layer_forward_backward(
    layer: &Layer,
    store: &ParamStore,
    input: &Array2<f64>,
    upstream: &Array2<f64>,
) -> Result<LayerPass> {
    if input.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("layer input".into()));
    }
    let mut grads = Gradients::zeros_like(store);
    let (output, input_grad) = match layer {
        Layer::Dense(d) => {
            let y = d.forward(store, input)?;
            check_upstream(&y, upstream)?;
            let dx = d.backward(store, input, upstream, &mut grads);
            (y, dx)
        }
        Layer::Conv1d { conv, sequences } => {
            let (y, cache) = conv.forward(store, input, *sequences)?;
            check_upstream(&y, upstream)?;
            let dx = conv.backward(store, &cache, upstream, &mut grads);
            (y, dx)
        }
        Layer::Relu => {
            let y = relu(input);
            check_upstream(&y, upstream)?;
            let dx = relu_backward(&y, upstream);
            (y, dx)
        }
        Layer::Softmax => {
            let y = softmax_rows(input);
            check_upstream(&y, upstream)?;
            let dx = softmax_rows_backward(&y, upstream);
            (y, dx)
        }
        Layer::GlobalMaxPool { sequences } => {
            let (y, cache) = global_max_pool(input, *sequences)?;
            check_upstream(&y, upstream)?;
            let dx = global_max_pool_backward(&cache, upstream);
            (y, dx)
        }
        Layer::BatchNorm(bn) => {
            let (y, cache) = bn.forward(store, input, Mode::Train)?;
            check_upstream(&y, upstream)?;
            let dx = bn.backward(store, &cache, upstream, &mut grads);
            (y, dx)
        }
        Layer::Gru(cell) => {
            if input.ncols() != cell.input_dim + cell.hidden {
                return Err(Error::Shape(format!(
                    "GRU layer expects [x | h] with {} columns, got {}",
                    cell.input_dim + cell.hidden,
                    input.ncols()
                )));
            }
            let x = input.slice(s![.., ..cell.input_dim]).to_owned();
            let h = input.slice(s![.., cell.input_dim..]).to_owned();
            let (y, cache) = cell.forward(store, &x, &h)?;
            check_upstream(&y, upstream)?;
            let (dx, dh) = cell.backward(store, &cache, upstream, &mut grads);
            let mut din = Array2::zeros(input.raw_dim());
            din.slice_mut(s![.., ..cell.input_dim]).assign(&dx);
            din.slice_mut(s![.., cell.input_dim..]).assign(&dh);
            (y, din)
        }
    };
    Ok(LayerPass {
        output,
        input_grad,
        param_grads: grads,
    })
}

fn check_upstream(output: &Array2<f64>, upstream: &Array2<f64>) -> Result<()> {
    if output.dim() != upstream.dim() {
        return Err(Error::Shape(format!(
            "upstream gradient {:?} does not match layer output {:?}",
            upstream.dim(),
            output.dim()
        )));
    }
    Ok(())
}
