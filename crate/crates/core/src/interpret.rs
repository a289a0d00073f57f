//! Post-hoc analysis of generated graphs: mean graphs, edge-wise Welch
//! t-tests between classes and module difference scores.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dataset::{write_matrix_csv, ModulePartition};
use crate::error::{Error, Result};
use crate::graphgen::LearnableGraph;
use crate::pipeline::PreparedSample;
use crate::training::TrainedModel;

/// Generated graph of every sample, in input order.
pub fn collect_graphs(
    trained: &TrainedModel,
    samples: &[&PreparedSample],
) -> Result<Vec<LearnableGraph>> {
    trained.model.generate_graphs(&trained.store, samples)
}

pub fn mean_graph(graphs: &[Array2<f64>]) -> Result<Array2<f64>> {
    let first = graphs
        .first()
        .ok_or_else(|| Error::InvalidInput("mean of an empty graph list".into()))?;
    let mut sum = Array2::zeros(first.raw_dim());
    for g in graphs {
        if g.dim() != first.dim() {
            return Err(Error::Shape("graphs differ in shape".into()));
        }
        sum += g;
    }
    Ok(sum / graphs.len() as f64)
}

/// Welch test statistic, degrees of freedom and two-sided p-value.
///
/// Returns `None` when both groups are constant with equal means, where the
/// statistic is undefined. Groups need at least two values each.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Option<(f64, f64, f64)> {
    let stats = |x: &[f64]| {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        (n, mean, var)
    };
    let (na, ma, va) = stats(a);
    let (nb, mb, vb) = stats(b);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    if se2 == 0.0 {
        if ma == mb {
            return None;
        }
        let t = if ma > mb { f64::INFINITY } else { f64::NEG_INFINITY };
        return Some((t, na + nb - 2.0, 0.0));
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Some((t, df, p))
}

/// Test result for one unordered edge `(p, q)`, `p < q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeTest {
    pub p: usize,
    pub q: usize,
    pub t: f64,
    pub p_value: f64,
}

/// Edges whose strength differs between class 0 and class 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSet {
    pub v: usize,
    pub alpha: f64,
    /// Number of edges with a defined statistic.
    pub tested: usize,
    pub significant: Vec<EdgeTest>,
}

impl EdgeSet {
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.significant.iter().map(|e| (e.p, e.q)).collect()
    }
}

/// Welch t-test of every upper-triangle edge between classes 0 and 1.
pub fn edge_ttest(graphs: &[Array2<f64>], labels: &[usize], alpha: f64) -> Result<EdgeSet> {
    if graphs.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} graphs for {} labels",
            graphs.len(),
            labels.len()
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let group = |c: usize| -> Vec<&Array2<f64>> {
        graphs.iter().zip(labels).filter(|(_, &l)| l == c).map(|(g, _)| g).collect()
    };
    let (g0, g1) = (group(0), group(1));
    if g0.len() < 2 || g1.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "edge t-tests need at least 2 graphs per class, got {} and {}",
            g0.len(),
            g1.len()
        )));
    }
    let v = graphs[0].nrows();
    if graphs.iter().any(|g| g.dim() != (v, v)) {
        return Err(Error::Shape("graphs must be square and equally sized".into()));
    }
    let mut tested = 0;
    let mut significant = Vec::new();
    for p in 0..v {
        for q in p + 1..v {
            let a: Vec<f64> = g0.iter().map(|g| g[[p, q]]).collect();
            let b: Vec<f64> = g1.iter().map(|g| g[[p, q]]).collect();
            if let Some((t, _, p_value)) = welch_t_test(&a, &b) {
                tested += 1;
                if p_value < alpha {
                    significant.push(EdgeTest { p, q, t, p_value });
                }
            }
        }
    }
    Ok(EdgeSet {
        v,
        alpha,
        tested,
        significant,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleScore {
    pub module: String,
    pub score: f64,
}

/// `T_u = Σ_{(p,q)} [1(p ∈ M_u) + 1(q ∈ M_u)] / (2 v |M_u|)`, sorted by
/// descending score, ties by module name.
pub fn module_difference_scores(
    edges: &[(usize, usize)],
    partition: &ModulePartition,
    v: usize,
) -> Result<Vec<ModuleScore>> {
    if partition.is_empty() {
        return Err(Error::InvalidInput("module partition is empty".into()));
    }
    if let Some(&(p, q)) = edges.iter().find(|(p, q)| *p >= v || *q >= v) {
        return Err(Error::InvalidInput(format!("edge ({p}, {q}) outside {v} ROIs")));
    }
    let mut scores: Vec<ModuleScore> = partition
        .modules()
        .iter()
        .map(|(name, members)| {
            let hits: usize = edges
                .iter()
                .map(|(p, q)| usize::from(members.contains(p)) + usize::from(members.contains(q)))
                .sum();
            ModuleScore {
                module: name.clone(),
                score: hits as f64 / (2 * v * members.len()) as f64,
            }
        })
        .collect();
    scores.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.module.cmp(&b.module)));
    Ok(scores)
}

pub fn export_matrix(matrix: &Array2<f64>, path: &Path) -> Result<()> {
    write_matrix_csv(matrix, path)
}

pub fn export_scores(scores: &[ModuleScore], path: &Path) -> Result<()> {
    let mut out = String::from("module,score\n");
    for s in scores {
        writeln!(out, "{},{}", s.module, s.score).unwrap();
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn export_edges(edges: &EdgeSet, path: &Path) -> Result<()> {
    let mut out = String::from("p,q,t,pvalue\n");
    for e in &edges.significant {
        writeln!(out, "{},{},{},{}", e.p, e.q, e.t, e.p_value).unwrap();
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Binary PGM (P5) grayscale image, one pixel per entry, min-max scaled.
pub fn export_heatmap(matrix: &Array2<f64>, path: &Path) -> Result<()> {
    let lo = matrix.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = matrix.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let mut bytes = format!("P5\n{} {}\n255\n", matrix.ncols(), matrix.nrows()).into_bytes();
    bytes.extend(matrix.iter().map(|&x| {
        if range > 0.0 {
            ((x - lo) / range * 255.0).round() as u8
        } else {
            0
        }
    }));
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::collections::{BTreeMap, BTreeSet};

    fn partition(modules: &[(&str, &[usize])]) -> ModulePartition {
        let map: BTreeMap<String, BTreeSet<usize>> = modules
            .iter()
            .map(|(n, m)| (n.to_string(), m.iter().copied().collect()))
            .collect();
        ModulePartition::new(map).unwrap()
    }

    #[test]
    fn module_score_hand_values() {
        let part = partition(&[("A", &[0, 1]), ("B", &[2, 3])]);
        let s = module_difference_scores(&[(0, 1)], &part, 4).unwrap();
        assert_eq!(s[0], ModuleScore { module: "A".into(), score: 0.125 });
        assert_eq!(s[1].score, 0.0);
        let s = module_difference_scores(&[(0, 2)], &part, 4).unwrap();
        assert_eq!(s[0].score, 0.0625);
        assert_eq!(s[1].score, 0.0625);
        // tie broken by name
        assert_eq!(s[0].module, "A");
        let s = module_difference_scores(&[], &part, 4).unwrap();
        assert!(s.iter().all(|m| m.score == 0.0));
    }

    #[test]
    fn module_scores_ignore_edge_orientation() {
        let part = partition(&[("A", &[0, 1]), ("B", &[2, 3, 4])]);
        let edges = [(0, 3), (1, 2), (3, 4)];
        let flipped: Vec<_> = edges.iter().map(|&(p, q)| (q, p)).collect();
        assert_eq!(
            module_difference_scores(&edges, &part, 5).unwrap(),
            module_difference_scores(&flipped, &part, 5).unwrap()
        );
    }

    #[test]
    fn constant_equal_edge_is_excluded() {
        let g = array![[1.0, 0.5], [0.5, 1.0]];
        let graphs = vec![g.clone(), g.clone(), g.clone(), g];
        let edges = edge_ttest(&graphs, &[0, 0, 1, 1], 0.05).unwrap();
        assert_eq!(edges.tested, 0);
        assert!(edges.significant.is_empty());
    }

    #[test]
    fn welch_matches_hand_computation() {
        // means 2 and 5, variances 1 and 1, n = 3 each: t = -3 / sqrt(2/3), df = 4
        let (t, df, p) = welch_t_test(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((t + 3.0 / (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((df - 4.0).abs() < 1e-12);
        assert!(p > 0.01 && p < 0.05);
    }

    #[test]
    fn single_sample_class_rejected() {
        let g = Array2::<f64>::eye(3);
        let err = edge_ttest(&[g.clone(), g.clone(), g], &[0, 0, 1], 0.05);
        assert!(err.is_err());
    }

    #[test]
    fn mean_graph_values() {
        let a = array![[1.0, 0.0], [0.0, 1.0]];
        let b = array![[0.0, 1.0], [1.0, 0.0]];
        assert_eq!(mean_graph(&[a.clone(), b]).unwrap(), array![[0.5, 0.5], [0.5, 0.5]]);
        assert_eq!(mean_graph(&[a.clone(), a.clone()]).unwrap(), a);
        assert!(mean_graph(&[]).is_err());
    }

    #[test]
    fn heatmap_header_and_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        export_heatmap(&array![[0.0, 1.0], [0.5, 1.0]], &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header = b"P5\n2 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..], &[0, 255, 128, 255]);
    }

    #[test]
    fn score_and_edge_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let scores = vec![
            ModuleScore { module: "B".into(), score: 0.5 },
            ModuleScore { module: "A".into(), score: 0.25 },
        ];
        export_scores(&scores, &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "module,score\nB,0.5\nA,0.25\n");
        let edges = EdgeSet {
            v: 3,
            alpha: 0.05,
            tested: 3,
            significant: vec![EdgeTest { p: 0, q: 2, t: -4.5, p_value: 0.001 }],
        };
        export_edges(&edges, &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "p,q,t,pvalue\n0,2,-4.5,0.001\n");
    }
}
