use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamStore};
use crate::error::{Error, Result};

/// Adam with bias correction and coupled L2 weight decay
/// (`g ← g + weight_decay · w` before the moment updates).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first_moment: Vec<Array2<f64>>,
    second_moment: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, weight_decay: f64) -> Self {
        let zeros: Vec<_> = store
            .params()
            .iter()
            .map(|p| Array2::zeros(p.value.raw_dim()))
            .collect();
        Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn second_moments(&self) -> &[Array2<f64>] {
        &self.second_moment
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if grads.as_slice().len() != self.first_moment.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} tensors, got {} gradients",
                self.first_moment.len(),
                grads.as_slice().len()
            )));
        }
        if !grads.all_finite() {
            return Err(Error::NonFinite("gradient passed to Adam".into()));
        }
        self.step += 1;
        let bias1 = 1.0 - self.beta1.powi(self.step as i32);
        let bias2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, wd, lr, eps) = (self.beta1, self.beta2, self.weight_decay, self.lr, self.eps);

        for (((param, g), m), s) in store
            .params_mut()
            .iter_mut()
            .zip(grads.iter())
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            if param.value.dim() != g.dim() {
                return Err(Error::Shape(format!(
                    "gradient for {} has shape {:?}, expected {:?}",
                    param.name,
                    g.dim(),
                    param.value.dim()
                )));
            }
            ndarray::Zip::from(&mut param.value)
                .and(g)
                .and(m)
                .and(s)
                .for_each(|w, &g, m, s| {
                    let g = g + wd * *w;
                    *m = b1 * *m + (1.0 - b1) * g;
                    *s = b2 * *s + (1.0 - b2) * g * g;
                    let m_hat = *m / bias1;
                    let s_hat = *s / bias2;
                    *w -= lr * m_hat / (s_hat.sqrt() + eps);
                });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn single(w: f64) -> ParamStore {
        let mut store = ParamStore::new();
        store.add("w", array![[w]]);
        store
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut store = ParamStore::new();
        store.add("a", array![[1.0, -2.0], [0.5, 3.0]]);
        store.add("b", array![[7.0]]);
        let before = store.clone();
        let mut adam = Adam::new(&store, 0.1, 0.0);
        let grads = Gradients::zeros_like(&store);
        for _ in 0..5 {
            adam.step(&mut store, &grads).unwrap();
        }
        assert_eq!(store, before);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut store = ParamStore::new();
        let id = store.add("w", array![[0.0, 0.0, 0.0]]);
        let mut adam = Adam::new(&store, 0.01, 0.0);
        let mut grads = Gradients::zeros_like(&store);
        *grads.get_mut(id) = array![[3.0, -0.002, 250.0]];
        adam.step(&mut store, &grads).unwrap();
        let w = store.get(id);
        assert!((w[[0, 0]] + 0.01).abs() < 1e-9);
        assert!((w[[0, 1]] - 0.01).abs() < 1e-7);
        assert!((w[[0, 2]] + 0.01).abs() < 1e-9);
    }

    #[test]
    fn quadratic_hand_evaluation() {
        // w = 1, g = 2w = 2: m̂ = 2, ŝ = 4, update = 0.1 * 2 / (2 + 1e-8)
        let mut store = single(1.0);
        let mut adam = Adam::new(&store, 0.1, 0.0);
        let mut grads = Gradients::zeros_like(&store);
        grads.get_mut(super::super::ParamId(0))[[0, 0]] = 2.0;
        adam.step(&mut store, &grads).unwrap();
        let expected = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
        assert!((store.params()[0].value[[0, 0]] - expected).abs() < 1e-15);
        assert!((store.params()[0].value[[0, 0]] - 0.9).abs() < 1e-8);
    }

    #[test]
    fn coupled_weight_decay_acts_as_gradient() {
        // wd * w alone behaves like a gradient of 0.5 on the first step.
        let mut store = single(5.0);
        let mut adam = Adam::new(&store, 0.1, 0.1);
        let grads = Gradients::zeros_like(&store);
        adam.step(&mut store, &grads).unwrap();
        assert!((store.params()[0].value[[0, 0]] - 4.9).abs() < 1e-7);
        assert!(adam.second_moments()[0][[0, 0]] >= 0.0);
    }

    #[test]
    fn rejects_non_finite_gradient() {
        let mut store = single(1.0);
        let mut adam = Adam::new(&store, 0.1, 0.0);
        let mut grads = Gradients::zeros_like(&store);
        grads.get_mut(super::super::ParamId(0))[[0, 0]] = f64::NAN;
        assert!(matches!(adam.step(&mut store, &grads), Err(Error::NonFinite(_))));
        assert_eq!(adam.steps_taken(), 0);
    }
}
