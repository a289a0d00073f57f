//! Learnable graph generation and the three graph regularizers.
//!
//! `A = h_A h_Aᵀ` with `h_A` the row-wise softmax of the ROI embeddings, so
//! every ROI becomes a probability vector and `A` holds their inner products.
//! Group statistics are computed per class within a batch. The fast paths
//! use class means; the `*_pairwise` functions evaluate the same quantities
//! from all pairwise graph distances and exist to audit the fast paths.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{softmax_rows, softmax_rows_backward};

/// Weights of the intra (α), inter (β) and sparsity (γ) terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            beta: 1e-3,
            gamma: 1e-4,
        }
    }
}

impl LossWeights {
    pub const ZERO: LossWeights = LossWeights {
        alpha: 0.0,
        beta: 0.0,
        gamma: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "loss weight {name} must be finite and non-negative, got {w}"
                )));
            }
        }
        Ok(())
    }
}

/// Generated connectivity matrix and the row-stochastic embedding behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnableGraph {
    pub a: Array2<f64>,
    pub h_a: Array2<f64>,
}

pub fn generate_graph(h_e: &Array2<f64>) -> LearnableGraph {
    let h_a = softmax_rows(h_e);
    let mut a = h_a.dot(&h_a.t());
    // mirror the upper triangle so A is symmetric bit-for-bit
    let v = a.nrows();
    for p in 0..v {
        for q in p + 1..v {
            a[[q, p]] = a[[p, q]];
        }
    }
    LearnableGraph { a, h_a }
}

/// Gradient w.r.t. `h_e` given the gradient w.r.t. `A`.
pub fn generate_graph_backward(graph: &LearnableGraph, d_a: &Array2<f64>) -> Array2<f64> {
    let d_ha = (d_a + &d_a.t()).dot(&graph.h_a);
    softmax_rows_backward(&graph.h_a, &d_ha)
}

fn sq_dist(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Statistics of one class within a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    pub class: usize,
    /// Batch positions of the class members (`S^c`).
    pub members: Vec<usize>,
    pub mean: Array2<f64>,
    /// Mean squared Frobenius distance of members to `mean`.
    pub variance: f64,
}

/// Per-class statistics for the classes present in a batch, ordered by class.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupStats {
    pub classes: Vec<ClassStats>,
}

pub fn group_stats(graphs: &[Array2<f64>], labels: &[usize]) -> Result<GroupStats> {
    if graphs.is_empty() {
        return Err(Error::InvalidInput("group statistics need a non-empty batch".into()));
    }
    if graphs.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} graphs but {} labels",
            graphs.len(),
            labels.len()
        )));
    }
    let dim = graphs[0].dim();
    if graphs.iter().any(|g| g.dim() != dim) {
        return Err(Error::Shape("graphs in a batch must share their shape".into()));
    }
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        members.entry(l).or_default().push(i);
    }
    let classes = members
        .into_iter()
        .map(|(class, members)| {
            let size = members.len() as f64;
            let mut mean = Array2::zeros(dim);
            for &i in &members {
                mean += &graphs[i];
            }
            mean /= size;
            let variance = members.iter().map(|&i| sq_dist(&graphs[i], &mean)).sum::<f64>() / size;
            ClassStats {
                class,
                members,
                mean,
                variance,
            }
        })
        .collect();
    Ok(GroupStats { classes })
}

/// `Σ_c σ²_c`.
pub fn group_intra_loss(stats: &GroupStats) -> f64 {
    stats.classes.iter().map(|c| c.variance).sum()
}

/// `−Σ_{a≠b} ‖μ_a − μ_b‖²` over ordered pairs of classes present in the batch.
pub fn group_inter_loss(stats: &GroupStats) -> f64 {
    if stats.classes.len() < 2 {
        log::debug!("batch holds a single class; inter loss contributes 0");
        return 0.0;
    }
    let mut total = 0.0;
    for a in &stats.classes {
        for b in &stats.classes {
            if a.class != b.class {
                total -= sq_dist(&a.mean, &b.mean);
            }
        }
    }
    total
}

/// Gradient of [`group_intra_loss`] w.r.t. each batch graph: `2 (A_i − μ_c) / |S^c|`.
pub fn group_intra_grad(stats: &GroupStats, graphs: &[Array2<f64>]) -> Vec<Array2<f64>> {
    let mut grads: Vec<Array2<f64>> = graphs.iter().map(|g| Array2::zeros(g.raw_dim())).collect();
    for c in &stats.classes {
        let scale = 2.0 / c.members.len() as f64;
        for &i in &c.members {
            grads[i] = (&graphs[i] - &c.mean) * scale;
        }
    }
    grads
}

/// Gradient of [`group_inter_loss`] w.r.t. each batch graph.
pub fn group_inter_grad(stats: &GroupStats, batch: usize) -> Vec<Array2<f64>> {
    let dim = stats.classes[0].mean.raw_dim();
    let mut grads: Vec<Array2<f64>> = (0..batch).map(|_| Array2::zeros(dim)).collect();
    if stats.classes.len() < 2 {
        return grads;
    }
    for a in &stats.classes {
        // each unordered pair appears twice in the ordered sum
        let mut d_mean = Array2::<f64>::zeros(dim);
        for b in &stats.classes {
            if a.class != b.class {
                d_mean -= &((&a.mean - &b.mean) * 4.0);
            }
        }
        let share = d_mean / a.members.len() as f64;
        for &i in &a.members {
            grads[i] += &share;
        }
    }
    grads
}

/// Mean of all `v²` entries of `a`.
pub fn sparsity_loss(a: &Array2<f64>) -> f64 {
    a.mean().unwrap_or(0.0)
}

fn classes_of(labels: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        members.entry(l).or_default().push(i);
    }
    members
}

fn mean_cross_distance(graphs: &[Array2<f64>], left: &[usize], right: &[usize]) -> f64 {
    let mut total = 0.0;
    for &i in left {
        for &j in right {
            total += sq_dist(&graphs[i], &graphs[j]);
        }
    }
    total / (left.len() * right.len()) as f64
}

/// Intra loss from pairwise distances: `σ²_c = Σ_{i,j∈S^c} ‖A_i − A_j‖² / (2|S^c|²)`.
pub fn group_intra_loss_pairwise(graphs: &[Array2<f64>], labels: &[usize]) -> f64 {
    classes_of(labels)
        .values()
        .map(|m| mean_cross_distance(graphs, m, m) / 2.0)
        .sum()
}

/// Inter loss from pairwise distances:
/// `Σ_{a≠b} (σ²_a + σ²_b − Σ_{i∈S^a, j∈S^b} ‖A_i − A_j‖² / (|S^a||S^b|))`.
pub fn group_inter_loss_pairwise(graphs: &[Array2<f64>], labels: &[usize]) -> f64 {
    let classes = classes_of(labels);
    let variance: BTreeMap<usize, f64> = classes
        .iter()
        .map(|(&c, m)| (c, mean_cross_distance(graphs, m, m) / 2.0))
        .collect();
    let mut total = 0.0;
    for (&a, ma) in &classes {
        for (&b, mb) in &classes {
            if a != b {
                total += variance[&a] + variance[&b] - mean_cross_distance(graphs, ma, mb);
            }
        }
    }
    total
}
