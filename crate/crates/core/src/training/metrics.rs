use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphgen::{
    group_inter_grad, group_inter_loss, group_intra_grad, group_intra_loss, group_stats,
    sparsity_loss, LossWeights,
};
use crate::nn::softmax_rows;

/// Objective value and its four components (unweighted).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub ce: f64,
    pub intra: f64,
    pub inter: f64,
    pub sparsity: f64,
}

impl LossBreakdown {
    fn scaled_add(&mut self, other: &LossBreakdown, w: f64) {
        self.total += w * other.total;
        self.ce += w * other.ce;
        self.intra += w * other.intra;
        self.inter += w * other.inter;
        self.sparsity += w * other.sparsity;
    }

    /// Weighted mean of per-batch breakdowns, weighted by batch size.
    pub fn weighted_mean(parts: &[(LossBreakdown, usize)]) -> LossBreakdown {
        let n: usize = parts.iter().map(|(_, k)| k).sum();
        let mut out = LossBreakdown::default();
        for (b, k) in parts {
            out.scaled_add(b, *k as f64 / n as f64);
        }
        out
    }
}

/// Gradients of [`total_loss`] w.r.t. the logits and, if given, each graph.
#[derive(Debug, Clone)]
pub struct LossGrads {
    pub logits: Array2<f64>,
    pub graphs: Option<Vec<Array2<f64>>>,
}

/// Mean cross-entropy of softmax(logits) and its gradient.
pub fn cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    if logits.nrows() != labels.len() || logits.nrows() == 0 {
        return Err(Error::Shape(format!(
            "{} logit rows for {} labels",
            logits.nrows(),
            labels.len()
        )));
    }
    let n = labels.len() as f64;
    let mut grad = softmax_rows(logits);
    let mut total = 0.0;
    for (i, (row, &y)) in logits.rows().into_iter().zip(labels).enumerate() {
        if y >= row.len() {
            return Err(Error::InvalidInput(format!("label {y} out of range")));
        }
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[y];
        grad[[i, y]] -= 1.0;
    }
    grad /= n;
    Ok((total / n, grad))
}

/// `CE + α·intra + β·inter + γ·sparsity` for one batch.
///
/// Graph terms are only evaluated when `graphs` is given; sparsity is the
/// mean over the batch graphs.
pub fn total_loss(
    logits: &Array2<f64>,
    labels: &[usize],
    graphs: Option<&[Array2<f64>]>,
    weights: &LossWeights,
) -> Result<(LossBreakdown, LossGrads)> {
    let (ce, d_logits) = cross_entropy(logits, labels)?;
    let mut out = LossBreakdown {
        ce,
        ..LossBreakdown::default()
    };
    let mut d_graphs = None;
    if let Some(graphs) = graphs {
        let stats = group_stats(graphs, labels)?;
        out.intra = group_intra_loss(&stats);
        out.inter = group_inter_loss(&stats);
        let b = graphs.len() as f64;
        out.sparsity = graphs.iter().map(sparsity_loss).sum::<f64>() / b;

        let entries = graphs[0].len() as f64;
        let mut grads: Vec<Array2<f64>> = graphs
            .iter()
            .map(|g| Array2::from_elem(g.raw_dim(), weights.gamma / (b * entries)))
            .collect();
        if weights.alpha != 0.0 {
            for (g, d) in grads.iter_mut().zip(group_intra_grad(&stats, graphs)) {
                g.scaled_add(weights.alpha, &d);
            }
        }
        if weights.beta != 0.0 {
            for (g, d) in grads.iter_mut().zip(group_inter_grad(&stats, graphs.len())) {
                g.scaled_add(weights.beta, &d);
            }
        }
        d_graphs = Some(grads);
    }
    out.total =
        out.ce + weights.alpha * out.intra + weights.beta * out.inter + weights.gamma * out.sparsity;
    Ok((
        out,
        LossGrads {
            logits: d_logits,
            graphs: d_graphs,
        },
    ))
}

/// Rank-based AUROC with average ranks for ties.
pub fn auroc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            positive.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("AUROC score is NaN".into()));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidInput(
            "AUROC needs both positive and negative samples".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their average
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// AUROC of softmax probabilities: class 1 score for two classes, macro
/// one-vs-rest otherwise. `None` when fewer than two classes are present.
pub fn classification_auroc(probs: &Array2<f64>, labels: &[usize]) -> Option<f64> {
    let classes = probs.ncols();
    if classes == 2 {
        let scores: Vec<f64> = probs.column(1).to_vec();
        let positive: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
        return auroc(&scores, &positive).ok();
    }
    let per_class: Vec<f64> = (0..classes)
        .filter_map(|c| {
            let positive: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            auroc(&probs.column(c).to_vec(), &positive).ok()
        })
        .collect();
    (per_class.len() >= 2).then(|| per_class.iter().sum::<f64>() / per_class.len() as f64)
}

/// Index of the largest logit per row; ties go to the lowest class index.
pub fn predictions(logits: &Array2<f64>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

pub fn accuracy(logits: &Array2<f64>, labels: &[usize]) -> f64 {
    let hits = predictions(logits)
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    hits as f64 / labels.len() as f64
}

/// Classification metrics of one split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `None` when the split holds a single class.
    pub auroc: Option<f64>,
    pub accuracy: f64,
    pub loss: LossBreakdown,
}

impl Metrics {
    /// Metrics from stacked logits over a whole split.
    pub fn from_logits(logits: &Array2<f64>, labels: &[usize], loss: LossBreakdown) -> Self {
        Self {
            auroc: classification_auroc(&softmax_rows(logits), labels),
            accuracy: accuracy(logits, labels),
            loss,
        }
    }
}

/// Stack per-batch logits in order.
pub(crate) fn stack_rows(parts: &[Array2<f64>]) -> Array2<f64> {
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(Axis(0), &views).expect("logit batches share their width")
}
