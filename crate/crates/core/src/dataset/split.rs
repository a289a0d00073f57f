use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

/// Train/validation/test proportions and the shuffling seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.1,
            test: 0.2,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let r = [self.train, self.val, self.test];
        if r.iter().any(|x| !x.is_finite() || *x < 0.0) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::InvalidConfig(format!(
                "split ratios must be non-negative and sum to 1, got {r:?}"
            )));
        }
        if self.train == 0.0 {
            return Err(Error::InvalidConfig("train ratio must be positive".into()));
        }
        Ok(())
    }
}

/// Round a `classes × 3` table of fractional quotas so every entry is its
/// floor or ceiling, every row sums to its class count, and column totals
/// follow `targets` as closely as the row constraints allow.
fn round_table(quotas: &[[f64; 3]], counts: &[usize], targets: [usize; 3]) -> Vec<[usize; 3]> {
    let mut alloc: Vec<[usize; 3]> = quotas
        .iter()
        .map(|q| [q[0].floor() as usize, q[1].floor() as usize, q[2].floor() as usize])
        .collect();
    let mut deficit = [0i64; 3];
    for j in 0..3 {
        let placed: usize = alloc.iter().map(|a| a[j]).sum();
        deficit[j] = targets[j] as i64 - placed as i64;
    }
    let units: Vec<usize> = alloc
        .iter()
        .zip(counts)
        .map(|(a, &c)| c - a.iter().sum::<usize>())
        .collect();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| units[b].cmp(&units[a]).then(a.cmp(&b)));
    for c in order {
        let frac = |j: usize| quotas[c][j] - quotas[c][j].floor();
        let mut cols = [0usize, 1, 2];
        cols.sort_by(|&a, &b| {
            deficit[b]
                .cmp(&deficit[a])
                .then(frac(b).partial_cmp(&frac(a)).unwrap())
                .then(a.cmp(&b))
        });
        for &j in cols.iter().take(units[c]) {
            alloc[c][j] += 1;
            deficit[j] -= 1;
        }
    }
    alloc
}

/// Stratified split of sample indices into `[train, val, test]`, each sorted ascending.
///
/// Split sizes target `round(ratio · n)` for train and validation (at least
/// one each once `n ≥ 10` and the ratio is positive), the test split taking
/// the rest. Within every class the count landing in each split is the floor
/// or ceiling of `ratio · n_class`.
pub fn split_indices(labels: &[usize], classes: usize, spec: &SplitSpec) -> Result<[Vec<usize>; 3]> {
    spec.validate()?;
    let n = labels.len();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::InvalidInput(format!("label {l} out of range")));
        }
        by_class[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for members in &mut by_class {
        members.shuffle(&mut rng);
    }

    let at_least_one = |ratio: f64, k: usize| if n >= 10 && ratio > 0.0 { k.max(1) } else { k };
    let mut n_train = at_least_one(spec.train, (spec.train * n as f64).round() as usize).min(n);
    let mut n_val = at_least_one(spec.val, (spec.val * n as f64).round() as usize).min(n - n_train);
    if n >= 10 && spec.test > 0.0 && n_train + n_val == n {
        if n_train > n_val {
            n_train -= 1;
        } else {
            n_val -= 1;
        }
    }
    let targets = [n_train, n_val, n - n_train - n_val];

    let counts: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let quotas: Vec<[f64; 3]> = counts
        .iter()
        .map(|&c| {
            let c = c as f64;
            [spec.train * c, spec.val * c, spec.test * c]
        })
        .collect();
    let alloc = round_table(&quotas, &counts, targets);

    for (c, (&count, a)) in counts.iter().zip(&alloc).enumerate() {
        if count > 0 && a[0] == 0 {
            return Err(Error::InvalidInput(format!(
                "split leaves class {c} without training samples"
            )));
        }
    }

    let mut out: [Vec<usize>; 3] = Default::default();
    for (members, a) in by_class.iter().zip(&alloc) {
        let (tr, va) = (a[0], a[1]);
        out[0].extend_from_slice(&members[..tr]);
        out[1].extend_from_slice(&members[tr..tr + va]);
        out[2].extend_from_slice(&members[tr + va..]);
    }
    for part in &mut out {
        part.sort_unstable();
    }
    Ok(out)
}

/// Split a dataset into `(train, val, test)`; see [`split_indices`].
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    let [tr, va, te] = split_indices(&ds.labels(), ds.classes().len(), spec)?;
    let sub = |idx: &[usize]| -> Result<Dataset> {
        if idx.is_empty() {
            return Err(Error::InvalidInput(
                "split produced an empty partition; adjust ratios or dataset size".into(),
            ));
        }
        ds.subset(idx)
    };
    Ok((sub(&tr)?, sub(&va)?, sub(&te)?))
}
