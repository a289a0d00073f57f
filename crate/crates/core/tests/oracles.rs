//! Fast paths against brute-force definitions written out in this file.

use ndarray::Array2;
use netgen_core::graphgen::{
    generate_graph, group_inter_grad, group_inter_loss, group_inter_loss_pairwise,
    group_intra_grad, group_intra_loss, group_intra_loss_pairwise, group_stats, sparsity_loss,
    LossWeights,
};
use netgen_core::nn::{relative_error, FD_STEP};
use netgen_core::training::{auroc, total_loss};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn sq(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Within-class variance from all ordered pairs: Σ_ij ‖A_i − A_j‖² / (2 n²).
fn brute_variance(members: &[&Array2<f64>]) -> f64 {
    let n = members.len() as f64;
    let mut total = 0.0;
    for a in members {
        for b in members {
            total += sq(a, b);
        }
    }
    total / (2.0 * n * n)
}

fn brute_mean(members: &[&Array2<f64>]) -> Array2<f64> {
    let mut m = Array2::zeros(members[0].raw_dim());
    for a in members {
        m += *a;
    }
    m / members.len() as f64
}

fn classes<'a>(graphs: &'a [Array2<f64>], labels: &[usize]) -> Vec<Vec<&'a Array2<f64>>> {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    (0..k)
        .map(|c| graphs.iter().zip(labels).filter(|(_, &l)| l == c).map(|(g, _)| g).collect())
        .filter(|m: &Vec<&Array2<f64>>| !m.is_empty())
        .collect()
}

fn brute_intra(graphs: &[Array2<f64>], labels: &[usize]) -> f64 {
    classes(graphs, labels).iter().map(|m| brute_variance(m)).sum()
}

fn brute_inter(graphs: &[Array2<f64>], labels: &[usize]) -> f64 {
    let groups = classes(graphs, labels);
    let means: Vec<Array2<f64>> = groups.iter().map(|m| brute_mean(m)).collect();
    let mut total = 0.0;
    for a in 0..means.len() {
        for b in 0..means.len() {
            if a != b {
                total -= sq(&means[a], &means[b]);
            }
        }
    }
    total
}

fn random_batch(rng: &mut ChaCha8Rng, classes: usize) -> (Vec<Array2<f64>>, Vec<usize>) {
    let n = rng.gen_range(2..=32);
    let v = rng.gen_range(1..=6);
    let graphs = (0..n)
        .map(|_| Array2::from_shape_simple_fn((v, v), || rng.gen_range(0.0..1.0)))
        .collect();
    let labels = (0..n).map(|_| rng.gen_range(0..classes)).collect();
    (graphs, labels)
}

#[test]
fn group_losses_match_brute_force() {
    let mut worst: f64 = 0.0;
    for classes in [2, 3] {
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 7 + classes as u64);
            let (graphs, labels) = random_batch(&mut rng, classes);
            let stats = group_stats(&graphs, &labels).unwrap();
            let pairs = [
                (group_intra_loss(&stats), brute_intra(&graphs, &labels)),
                (group_inter_loss(&stats), brute_inter(&graphs, &labels)),
                (group_intra_loss_pairwise(&graphs, &labels), brute_intra(&graphs, &labels)),
                (group_inter_loss_pairwise(&graphs, &labels), brute_inter(&graphs, &labels)),
            ];
            for (fast, slow) in pairs {
                let err = relative_error(fast, slow);
                assert!(err < 1e-6, "classes {classes} seed {seed}: {fast} vs {slow}");
                worst = worst.max(err);
            }
        }
    }
    eprintln!("worst relative error {worst:.2e}");
}

fn fd_check(graphs: &[Array2<f64>], f: impl Fn(&[Array2<f64>]) -> f64, analytic: &[Array2<f64>]) {
    let mut g = graphs.to_vec();
    for i in 0..g.len() {
        for idx in 0..g[i].len() {
            let orig = g[i].as_slice().unwrap()[idx];
            g[i].as_slice_mut().unwrap()[idx] = orig + FD_STEP;
            let plus = f(&g);
            g[i].as_slice_mut().unwrap()[idx] = orig - FD_STEP;
            let minus = f(&g);
            g[i].as_slice_mut().unwrap()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic[i].as_slice().unwrap()[idx];
            // absolute slack covers rounding in the central difference of an O(1) loss
            let ok = (a - numeric).abs() <= 1e-6 * a.abs().max(numeric.abs()) + 1e-9;
            assert!(ok, "graph {i} entry {idx}: {a} vs {numeric}");
        }
    }
}

#[test]
fn group_loss_gradients_match_finite_differences() {
    for classes in [2, 3] {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let (graphs, labels) = random_batch(&mut rng, classes);
            let stats = group_stats(&graphs, &labels).unwrap();
            fd_check(&graphs, |g| brute_intra(g, &labels), &group_intra_grad(&stats, &graphs));
            fd_check(&graphs, |g| brute_inter(g, &labels), &group_inter_grad(&stats, graphs.len()));
        }
    }
}

#[test]
fn total_loss_graph_gradient_matches_finite_differences() {
    let w = LossWeights {
        alpha: 0.3,
        beta: 0.2,
        gamma: 0.7,
    };
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (graphs, mut labels) = random_batch(&mut rng, 2);
        labels[0] = 0;
        labels[1] = 1;
        let logits = Array2::from_shape_simple_fn((graphs.len(), 2), || rng.sample(StandardNormal));
        let (_, d) = total_loss(&logits, &labels, Some(&graphs), &w).unwrap();
        fd_check(
            &graphs,
            |g| total_loss(&logits, &labels, Some(g), &w).unwrap().0.total,
            &d.graphs.unwrap(),
        );
        let mut l = logits.clone();
        for idx in 0..l.len() {
            let orig = l.as_slice().unwrap()[idx];
            l.as_slice_mut().unwrap()[idx] = orig + FD_STEP;
            let plus = total_loss(&l, &labels, Some(&graphs), &w).unwrap().0.total;
            l.as_slice_mut().unwrap()[idx] = orig - FD_STEP;
            let minus = total_loss(&l, &labels, Some(&graphs), &w).unwrap().0.total;
            l.as_slice_mut().unwrap()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            assert!(relative_error(d.logits.as_slice().unwrap()[idx], numeric) < 1e-6);
        }
    }
}

#[test]
fn sparsity_gradient_through_total_loss() {
    let graphs = vec![Array2::eye(3), Array2::ones((3, 3))];
    let logits = Array2::zeros((2, 2));
    let w = LossWeights {
        alpha: 0.0,
        beta: 0.0,
        gamma: 1.0,
    };
    let (l, d) = total_loss(&logits, &[0, 1], Some(&graphs), &w).unwrap();
    assert!((l.sparsity - (sparsity_loss(&graphs[0]) + 1.0) / 2.0).abs() < 1e-15);
    // d/dA of mean over batch of entry means
    assert!(d.graphs.unwrap().iter().all(|g| g.iter().all(|&x| (x - 1.0 / 18.0).abs() < 1e-15)));
}

#[test]
fn generated_graphs_are_valid() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..1000 {
        let v = rng.gen_range(1..=8);
        let d = rng.gen_range(1..=8);
        let scale = rng.gen_range(0.1..10.0);
        let h = Array2::from_shape_simple_fn((v, d), || scale * rng.sample::<f64, _>(StandardNormal));
        let g = generate_graph(&h);
        for p in 0..v {
            assert!((g.h_a.row(p).sum() - 1.0).abs() < 1e-12);
            assert!(g.a[[p, p]] >= 1.0 / d as f64 - 1e-12);
            for q in 0..v {
                assert!((g.a[[p, q]] - g.a[[q, p]]).abs() < 1e-9);
                assert!(g.a[[p, q]] > 0.0 && g.a[[p, q]] <= 1.0);
            }
        }
    }
}

/// Exhaustive concordance count with ties worth one half.
fn concordance(scores: &[f64], positive: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &pi) in positive.iter().enumerate() {
        for (j, &pj) in positive.iter().enumerate() {
            if pi && !pj {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

#[test]
fn auroc_equals_exhaustive_concordance() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    while checked < 200 {
        let n = rng.gen_range(2..=50);
        // coarse grid so ties are frequent
        let levels = rng.gen_range(2..=20);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..levels) as f64 / levels as f64).collect();
        let positive: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        if positive.iter().all(|&p| p) || positive.iter().all(|&p| !p) {
            continue;
        }
        assert_eq!(auroc(&scores, &positive).unwrap(), concordance(&scores, &positive));
        checked += 1;
    }
}

fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..50).prop_flat_map(|n| {
        (
            prop::collection::vec(-100.0f64..100.0, n),
            prop::collection::vec(any::<bool>(), n),
        )
    })
}

proptest! {
    #[test]
    fn auroc_invariant_under_monotone_maps((scores, positive) in scored_labels(), a in 0.1f64..5.0, b in -3.0f64..3.0) {
        prop_assume!(positive.iter().any(|&p| p) && positive.iter().any(|&p| !p));
        let base = auroc(&scores, &positive).unwrap();
        let affine: Vec<f64> = scores.iter().map(|s| a * s + b).collect();
        let cubic: Vec<f64> = scores.iter().map(|s| s.powi(3) + s).collect();
        let logistic: Vec<f64> = scores.iter().map(|s| 1.0 / (1.0 + (-s / 50.0).exp())).collect();
        prop_assert_eq!(auroc(&affine, &positive).unwrap(), base);
        prop_assert_eq!(auroc(&cubic, &positive).unwrap(), base);
        prop_assert_eq!(auroc(&logistic, &positive).unwrap(), base);
    }

    #[test]
    fn auroc_complements_under_label_flip((scores, positive) in scored_labels()) {
        prop_assume!(positive.iter().any(|&p| p) && positive.iter().any(|&p| !p));
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        prop_assume!(sorted.windows(2).all(|w| w[0] < w[1]));
        let flipped: Vec<bool> = positive.iter().map(|p| !p).collect();
        let sum = auroc(&scores, &positive).unwrap() + auroc(&scores, &flipped).unwrap();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }
}
