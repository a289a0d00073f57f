use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, ModulePartition, TimeSeriesSample};
use crate::error::{Error, Result};

/// Standard deviation of the noise added to each module's shared sinusoid.
const DRIVER_NOISE: f64 = 0.5;
/// Coupling of every module ROI to its driver before any planted effect.
const BASE_COUPLING: f64 = 1.0;

/// Parameters of the planted-module generator.
///
/// ROIs are assigned to modules in order: the first `module_sizes[0]` ROIs
/// form module 0, and so on; ROIs past the last module are pure noise and
/// belong to no module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub v: usize,
    pub t: usize,
    pub n: usize,
    pub module_sizes: Vec<usize>,
    /// Defaults to `M0, M1, …`.
    #[serde(default)]
    pub module_names: Option<Vec<String>>,
    /// Module whose coupling is raised for class 1.
    pub planted: String,
    /// Coupling increase δ applied to the planted module in class 1.
    pub effect: f64,
    /// Standard deviation of the per-ROI observation noise.
    pub noise: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            v: 20,
            t: 64,
            n: 400,
            module_sizes: vec![5, 5, 5, 5],
            module_names: None,
            planted: "M2".into(),
            effect: 2.0,
            noise: 1.0,
        }
    }
}

pub const SYNTH_CLASSES: [&str; 2] = ["class0", "class1"];

impl SynthSpec {
    pub fn names(&self) -> Vec<String> {
        self.module_names.clone().unwrap_or_else(|| {
            (0..self.module_sizes.len())
                .map(|i| format!("M{i}"))
                .collect()
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.v < 2 || self.t < 2 {
            return bad(format!("synthetic data needs v, t >= 2 (got {}, {})", self.v, self.t));
        }
        if self.n < 2 * SYNTH_CLASSES.len() {
            return bad(format!(
                "synthetic data needs n >= {} (two per class), got {}",
                2 * SYNTH_CLASSES.len(),
                self.n
            ));
        }
        if self.module_sizes.is_empty() || self.module_sizes.contains(&0) {
            return bad("module sizes must be non-empty and positive".into());
        }
        if self.module_sizes.iter().sum::<usize>() > self.v {
            return bad(format!(
                "module sizes sum to {} but only {} ROIs exist",
                self.module_sizes.iter().sum::<usize>(),
                self.v
            ));
        }
        let names = self.names();
        if names.len() != self.module_sizes.len() {
            return bad("module_names must match module_sizes in length".into());
        }
        if names.iter().collect::<BTreeSet<_>>().len() != names.len() {
            return bad("module names must be distinct".into());
        }
        if !names.contains(&self.planted) {
            return bad(format!(
                "planted module {:?} is not one of {:?}",
                self.planted, names
            ));
        }
        if !(self.effect.is_finite() && self.effect >= 0.0) {
            return bad(format!("effect must be finite and >= 0, got {}", self.effect));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return bad(format!("noise must be finite and >= 0, got {}", self.noise));
        }
        Ok(())
    }

    pub fn partition(&self) -> Result<ModulePartition> {
        let mut modules = BTreeMap::new();
        let mut start = 0;
        for (name, &size) in self.names().into_iter().zip(&self.module_sizes) {
            modules.insert(name, (start..start + size).collect::<BTreeSet<_>>());
            start += size;
        }
        ModulePartition::new(modules)
    }
}

/// Draw a balanced binary dataset from a shared-driver latent model.
///
/// Each module `m` has a driver `sin(2π f_m s / t + φ) + 0.5 ε(s)` with a
/// module-specific frequency and a per-sample random phase. A module ROI
/// observes `c · driver + noise · ε(s)` with coupling `c = 1`, raised to
/// `1 + effect` for the planted module in class-1 samples. Labels alternate
/// 0, 1, 0, 1, …
pub fn generate_synthetic(spec: &SynthSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let partition = spec.partition()?;
    let names = spec.names();
    let planted_idx = names.iter().position(|n| *n == spec.planted).expect("validated");

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let label = i % 2;
        let mut x = Array2::<f64>::zeros((spec.v, spec.t));
        let mut roi = 0;
        for (m, &size) in spec.module_sizes.iter().enumerate() {
            let cycles = 2.0 + 1.5 * m as f64;
            let phase = rng.gen_range(0.0..2.0 * PI);
            let driver: Vec<f64> = (0..spec.t)
                .map(|s| {
                    let eps: f64 = rng.sample(StandardNormal);
                    (2.0 * PI * cycles * s as f64 / spec.t as f64 + phase).sin() + DRIVER_NOISE * eps
                })
                .collect();
            let coupling = if label == 1 && m == planted_idx {
                BASE_COUPLING + spec.effect
            } else {
                BASE_COUPLING
            };
            for _ in 0..size {
                for (s, d) in driver.iter().enumerate() {
                    let eps: f64 = rng.sample(StandardNormal);
                    x[[roi, s]] = coupling * d + spec.noise * eps;
                }
                roi += 1;
            }
        }
        for r in roi..spec.v {
            for s in 0..spec.t {
                let eps: f64 = rng.sample(StandardNormal);
                x[[r, s]] = spec.noise * eps;
            }
        }
        samples.push(TimeSeriesSample {
            id: format!("synth_{i:05}"),
            x,
            label,
        });
    }
    Dataset::new(
        samples,
        partition,
        SYNTH_CLASSES.iter().map(|s| s.to_string()).collect(),
    )
}
