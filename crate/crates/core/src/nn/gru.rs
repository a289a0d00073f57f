use ndarray::{s, Array2, Axis};
use rand::Rng;

use super::params::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Gated recurrent unit operating on a batch of rows.
///
/// Gate layout in the stacked weights is `[reset | update | candidate]`:
///
/// ```text
/// r  = σ(x W_ir + b_ir + h W_hr + b_hr)
/// z  = σ(x W_iz + b_iz + h W_hz + b_hz)
/// n  = tanh(x W_in + b_in + r ⊙ (h W_hn + b_hn))
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
#[derive(Debug, Clone)]
pub struct GruCell {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub b_input: ParamId,
    pub b_hidden: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone)]
pub struct GruCache {
    x: Array2<f64>,
    h: Array2<f64>,
    r: Array2<f64>,
    z: Array2<f64>,
    n: Array2<f64>,
    hidden_cand: Array2<f64>,
}

impl GruCell {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let bound = (1.0 / hidden as f64).sqrt();
        Self {
            w_input: store.add_uniform(
                format!("{name}.w_input"),
                input_dim,
                3 * hidden,
                bound,
                rng,
            ),
            w_hidden: store.add_uniform(format!("{name}.w_hidden"), hidden, 3 * hidden, bound, rng),
            b_input: store.add(format!("{name}.b_input"), Array2::zeros((1, 3 * hidden))),
            b_hidden: store.add(format!("{name}.b_hidden"), Array2::zeros((1, 3 * hidden))),
            input_dim,
            hidden,
        }
    }

    pub fn forward(
        &self,
        store: &ParamStore,
        x: &Array2<f64>,
        h: &Array2<f64>,
    ) -> Result<(Array2<f64>, GruCache)> {
        if x.ncols() != self.input_dim || h.ncols() != self.hidden || x.nrows() != h.nrows() {
            return Err(Error::Shape(format!(
                "GRU cell ({} -> {}) got input {:?} and state {:?}",
                self.input_dim,
                self.hidden,
                x.dim(),
                h.dim()
            )));
        }
        let hd = self.hidden;
        let gi = x.dot(store.get(self.w_input)) + store.get(self.b_input);
        let gh = h.dot(store.get(self.w_hidden)) + store.get(self.b_hidden);
        let r = (&gi.slice(s![.., 0..hd]) + &gh.slice(s![.., 0..hd])).mapv(sigmoid);
        let z = (&gi.slice(s![.., hd..2 * hd]) + &gh.slice(s![.., hd..2 * hd])).mapv(sigmoid);
        let hidden_cand = gh.slice(s![.., 2 * hd..]).to_owned();
        let n = (&gi.slice(s![.., 2 * hd..]) + &(&r * &hidden_cand)).mapv(f64::tanh);
        let h_next = &n + &(&z * &(h - &n));
        Ok((
            h_next,
            GruCache {
                x: x.clone(),
                h: h.clone(),
                r,
                z,
                n,
                hidden_cand,
            },
        ))
    }

    /// Returns `(dx, dh_prev)`.
    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &GruCache,
        dh_next: &Array2<f64>,
        grads: &mut Gradients,
    ) -> (Array2<f64>, Array2<f64>) {
        let GruCache {
            x,
            h,
            r,
            z,
            n,
            hidden_cand,
        } = cache;
        let hd = self.hidden;
        let rows = x.nrows();

        let dn = dh_next * &z.mapv(|v| 1.0 - v);
        let dz = dh_next * &(h - n);
        let dh_direct = dh_next * z;

        let dn_pre = dn * &n.mapv(|v| 1.0 - v * v);
        let dr = &dn_pre * hidden_cand;
        let dz_pre = dz * &z.mapv(|v| v * (1.0 - v));
        let dr_pre = dr * &r.mapv(|v| v * (1.0 - v));

        let mut dgi = Array2::zeros((rows, 3 * hd));
        dgi.slice_mut(s![.., 0..hd]).assign(&dr_pre);
        dgi.slice_mut(s![.., hd..2 * hd]).assign(&dz_pre);
        dgi.slice_mut(s![.., 2 * hd..]).assign(&dn_pre);
        let mut dgh = dgi.clone();
        dgh.slice_mut(s![.., 2 * hd..]).assign(&(&dn_pre * r));

        *grads.get_mut(self.w_input) += &x.t().dot(&dgi);
        *grads.get_mut(self.b_input) += &dgi.sum_axis(Axis(0)).insert_axis(Axis(0));
        *grads.get_mut(self.w_hidden) += &h.t().dot(&dgh);
        *grads.get_mut(self.b_hidden) += &dgh.sum_axis(Axis(0)).insert_axis(Axis(0));

        let dx = dgi.dot(&store.get(self.w_input).t());
        let dh = dh_direct + dgh.dot(&store.get(self.w_hidden).t());
        (dx, dh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_halve_toward_candidate() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cell = GruCell::new(&mut store, "g", 2, 3, &mut rng);
        store.get_mut(cell.w_input).fill(0.0);
        store.get_mut(cell.w_hidden).fill(0.0);
        // r = z = 0.5, n = 0 → h' = 0.5 h
        let h = Array2::from_elem((1, 3), 0.8);
        let (h2, _) = cell.forward(&store, &Array2::ones((1, 2)), &h).unwrap();
        for v in h2.iter() {
            assert!((v - 0.4).abs() < 1e-15);
        }
    }
}
