//! Samples, module partitions, on-disk layout, node features, splitting and
//! a synthetic generator with planted class-dependent module coupling.

mod features;
mod io;
mod split;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;

pub use features::{pearson_features, zscore_normalize};
pub use io::{load_dataset, read_matrix_csv, write_dataset, write_matrix_csv};
pub use split::{split, split_indices, SplitSpec};
pub use synthetic::{generate_synthetic, SynthSpec};

use crate::error::{Error, Result};

/// One subject: a `v × t` signal matrix (row per ROI) and a class index.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesSample {
    pub id: String,
    pub x: Array2<f64>,
    pub label: usize,
}

impl TimeSeriesSample {
    pub fn rois(&self) -> usize {
        self.x.nrows()
    }

    pub fn steps(&self) -> usize {
        self.x.ncols()
    }
}

/// Named, disjoint ROI index sets.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ModulePartition {
    modules: BTreeMap<String, BTreeSet<usize>>,
}

impl ModulePartition {
    pub fn new(modules: BTreeMap<String, BTreeSet<usize>>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for (name, rois) in &modules {
            if name.is_empty() || name.contains(',') || name.contains('\n') {
                return Err(Error::InvalidInput(format!("invalid module name {name:?}")));
            }
            if rois.is_empty() {
                return Err(Error::InvalidInput(format!("module {name} is empty")));
            }
            for &r in rois {
                if !seen.insert(r) {
                    return Err(Error::InvalidInput(format!(
                        "ROI {r} assigned to more than one module"
                    )));
                }
            }
        }
        Ok(Self { modules })
    }

    /// Build from `(roi, module)` pairs.
    pub fn from_assignments<I, S>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, S)>,
        S: Into<String>,
    {
        let mut modules: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
        let mut seen = BTreeSet::new();
        for (roi, name) in pairs {
            if !seen.insert(roi) {
                return Err(Error::InvalidInput(format!(
                    "ROI {roi} assigned to more than one module"
                )));
            }
            modules.entry(name.into()).or_default().insert(roi);
        }
        Self::new(modules)
    }

    pub fn modules(&self) -> &BTreeMap<String, BTreeSet<usize>> {
        &self.modules
    }

    pub fn get(&self, name: &str) -> Option<&BTreeSet<usize>> {
        self.modules.get(name)
    }

    pub fn len(&self) -> usize {
        self.modules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modules.is_empty()
    }

    /// Module containing `roi`, if any.
    pub fn module_of(&self, roi: usize) -> Option<&str> {
        self.modules
            .iter()
            .find(|(_, set)| set.contains(&roi))
            .map(|(name, _)| name.as_str())
    }

    /// All `(roi, module)` pairs sorted by ROI index.
    pub fn assignments(&self) -> Vec<(usize, &str)> {
        let mut out: Vec<_> = self
            .modules
            .iter()
            .flat_map(|(name, set)| set.iter().map(move |&r| (r, name.as_str())))
            .collect();
        out.sort_unstable();
        out
    }

    pub fn max_roi(&self) -> Option<usize> {
        self.modules.values().filter_map(|s| s.last().copied()).max()
    }
}

/// A validated collection of equally shaped samples plus their module partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<TimeSeriesSample>,
    partition: ModulePartition,
    classes: Vec<String>,
}

impl Dataset {
    /// Full validation: non-empty, identical shapes with `v, t ≥ 2`, finite
    /// values, labels in range and every class represented.
    pub fn new(
        samples: Vec<TimeSeriesSample>,
        partition: ModulePartition,
        classes: Vec<String>,
    ) -> Result<Self> {
        let ds = Self::unchecked_coverage(samples, partition, classes)?;
        for (c, name) in ds.classes.iter().enumerate() {
            if !ds.samples.iter().any(|s| s.label == c) {
                return Err(Error::InvalidInput(format!(
                    "class {name} ({c}) has no samples"
                )));
            }
        }
        Ok(ds)
    }

    /// Same as [`Dataset::new`] but allows classes without samples; used for splits.
    fn unchecked_coverage(
        samples: Vec<TimeSeriesSample>,
        partition: ModulePartition,
        classes: Vec<String>,
    ) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::InvalidInput("dataset must contain at least one sample".into()))?;
        let (v, t) = first.x.dim();
        if v < 2 || t < 2 {
            return Err(Error::Shape(format!(
                "samples need at least 2 ROIs and 2 time steps, got {v} x {t}"
            )));
        }
        if classes.is_empty() {
            return Err(Error::InvalidInput("class list is empty".into()));
        }
        for s in &samples {
            if s.x.dim() != (v, t) {
                return Err(Error::Shape(format!(
                    "sample {} has shape {:?}, expected ({v}, {t})",
                    s.id,
                    s.x.dim()
                )));
            }
            if s.label >= classes.len() {
                return Err(Error::InvalidInput(format!(
                    "sample {} has label {} but only {} classes exist",
                    s.id,
                    s.label,
                    classes.len()
                )));
            }
            if s.x.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("sample {}", s.id)));
            }
        }
        if let Some(max) = partition.max_roi() {
            if max >= v {
                return Err(Error::InvalidInput(format!(
                    "module partition references ROI {max} but samples have {v} ROIs"
                )));
            }
        }
        Ok(Self {
            samples,
            partition,
            classes,
        })
    }

    pub fn samples(&self) -> &[TimeSeriesSample] {
        &self.samples
    }

    pub fn partition(&self) -> &ModulePartition {
        &self.partition
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn n(&self) -> usize {
        self.samples.len()
    }

    pub fn rois(&self) -> usize {
        self.samples[0].rois()
    }

    pub fn steps(&self) -> usize {
        self.samples[0].steps()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Samples at `indices` (in that order), sharing partition and classes.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Self::unchecked_coverage(
            indices.iter().map(|&i| self.samples[i].clone()).collect(),
            self.partition.clone(),
            self.classes.clone(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: &str, v: usize, t: usize, label: usize) -> TimeSeriesSample {
        TimeSeriesSample {
            id: id.into(),
            x: Array2::from_shape_fn((v, t), |(i, j)| (i * t + j) as f64),
            label,
        }
    }

    #[test]
    fn rejects_mixed_shapes() {
        let err = Dataset::new(
            vec![sample("a", 4, 8, 0), sample("b", 3, 8, 1)],
            ModulePartition::default(),
            vec!["x".into(), "y".into()],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn rejects_missing_class_and_bad_label() {
        let classes = vec!["x".to_string(), "y".to_string()];
        assert!(Dataset::new(
            vec![sample("a", 4, 8, 0)],
            ModulePartition::default(),
            classes.clone()
        )
        .is_err());
        assert!(Dataset::new(
            vec![sample("a", 4, 8, 0), sample("b", 4, 8, 2)],
            ModulePartition::default(),
            classes
        )
        .is_err());
    }

    #[test]
    fn partition_rejects_overlap() {
        let err = ModulePartition::from_assignments([(0, "a"), (1, "b"), (0, "b")]);
        assert!(err.is_err());
        let p = ModulePartition::from_assignments([(2, "b"), (0, "a"), (1, "a")]).unwrap();
        assert_eq!(p.assignments(), vec![(0, "a"), (1, "a"), (2, "b")]);
        assert_eq!(p.module_of(2), Some("b"));
        assert_eq!(p.module_of(3), None);
    }
}
