use super::params::{Gradients, ParamStore};

/// Central-difference step used by [`gradient_check`].
pub const FD_STEP: f64 = 1e-5;

/// Relative error above which a coordinate is recorded in the report.
pub const GRADCHECK_TOL: f64 = 1e-4;

/// Floor for the denominator of the relative error.
const REL_FLOOR: f64 = 1e-8;

/// Tolerance for a one-sided difference to count as matching, loose enough
/// for its first-order truncation error.
const ONE_SIDED_TOL: f64 = 1e-3;

/// Relative discrepancy `|a − f| / max(|a|, |f|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Why a coordinate exceeded [`GRADCHECK_TOL`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Discrepancy {
    /// Absolute gap within the rounding noise of the central difference.
    Roundoff,
    /// One one-sided difference matches: a kink (ReLU, max) lies within one step.
    Kink,
    Unexplained,
}

/// A coordinate whose relative error exceeded [`GRADCHECK_TOL`].
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub central: f64,
    pub forward: f64,
    pub backward: f64,
    pub relative_error: f64,
    pub kind: Discrepancy,
}

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(parameter name, flat index, analytic, numeric)` at the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
    pub coordinates: usize,
    /// Every coordinate above [`GRADCHECK_TOL`], classified.
    pub exceeding: Vec<CoordinateCheck>,
    /// Absolute gap attributed to rounding in the central difference.
    pub roundoff_bound: f64,
}

impl GradCheckReport {
    pub fn unexplained(&self) -> impl Iterator<Item = &CoordinateCheck> {
        self.exceeding
            .iter()
            .filter(|c| c.kind == Discrepancy::Unexplained)
    }

    pub fn count(&self, kind: Discrepancy) -> usize {
        self.exceeding.iter().filter(|c| c.kind == kind).count()
    }
}

/// Compare the analytic gradient of a scalar function of `store` against
/// central finite differences over every parameter coordinate.
///
/// `loss` evaluates the scalar; `analytic` returns its gradient. The store is
/// perturbed in place and restored coordinate by coordinate.
pub fn gradient_check<L, G>(store: &mut ParamStore, mut loss: L, analytic: G) -> GradCheckReport
where
    L: FnMut(&ParamStore) -> f64,
    G: FnOnce(&ParamStore) -> Gradients,
{
    let grads = analytic(store);
    let base = loss(store);
    // a few ulps of the loss, divided by the central-difference width
    let roundoff_bound = 100.0 * f64::EPSILON * base.abs().max(1.0) / (2.0 * FD_STEP);
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        coordinates: 0,
        exceeding: Vec::new(),
        roundoff_bound,
    };
    for p in 0..store.len() {
        let len = store.params()[p].value.len();
        for idx in 0..len {
            let original = flat(store, p)[idx];
            flat_mut(store, p)[idx] = original + FD_STEP;
            let plus = loss(store);
            flat_mut(store, p)[idx] = original - FD_STEP;
            let minus = loss(store);
            flat_mut(store, p)[idx] = original;

            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = grads.as_slice()[p].as_slice().expect("standard layout")[idx];
            let err = relative_error(a, numeric);
            report.coordinates += 1;
            if err > report.max_relative_error || err.is_nan() {
                report.max_relative_error = err;
                report.worst = Some((store.params()[p].name.clone(), idx, a, numeric));
            }
            if err > GRADCHECK_TOL || err.is_nan() {
                let forward = (plus - base) / FD_STEP;
                let backward = (base - minus) / FD_STEP;
                let kind = if (a - numeric).abs() <= roundoff_bound {
                    Discrepancy::Roundoff
                } else if relative_error(a, forward).min(relative_error(a, backward))
                    < ONE_SIDED_TOL
                {
                    Discrepancy::Kink
                } else {
                    Discrepancy::Unexplained
                };
                report.exceeding.push(CoordinateCheck {
                    param: store.params()[p].name.clone(),
                    index: idx,
                    analytic: a,
                    central: numeric,
                    forward,
                    backward,
                    relative_error: err,
                    kind,
                });
            }
        }
    }
    report
}

fn flat(store: &ParamStore, p: usize) -> &[f64] {
    store.params()[p].value.as_slice().expect("standard layout")
}

fn flat_mut(store: &mut ParamStore, p: usize) -> &mut [f64] {
    store.params_mut()[p]
        .value
        .as_slice_mut()
        .expect("standard layout")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn quadratic_of_one_parameter() {
        let mut store = ParamStore::new();
        let id = store.add("w", array![[1.3]]);
        let report = gradient_check(
            &mut store,
            |s| 3.0 * s.get(id)[[0, 0]].powi(2),
            |s| {
                let mut g = Gradients::zeros_like(s);
                g.get_mut(id)[[0, 0]] = 6.0 * s.get(id)[[0, 0]];
                g
            },
        );
        assert!(report.max_relative_error < 1e-8);
        assert_eq!(report.coordinates, 1);
    }

    #[test]
    fn corrupted_gradient_is_reported() {
        let mut store = ParamStore::new();
        let id = store.add("w", array![[0.7, -1.1]]);
        let report = gradient_check(
            &mut store,
            |s| s.get(id).mapv(|v| v * v).sum(),
            |s| {
                let mut g = Gradients::zeros_like(s);
                // twice the true gradient 2w
                *g.get_mut(id) = s.get(id).mapv(|v| 4.0 * v);
                g
            },
        );
        assert!((report.max_relative_error - 0.5).abs() < 1e-6);
        assert_eq!(report.worst.as_ref().unwrap().0, "w");
        // a wrong gradient is never excused as a kink or rounding
        assert_eq!(report.unexplained().count(), 2);
    }

    #[test]
    fn kink_is_classified() {
        let mut store = ParamStore::new();
        // |w| at w = 3e-6: the +step crosses the kink, the -step does not
        let id = store.add("w", array![[3e-6]]);
        let report = gradient_check(
            &mut store,
            |s| s.get(id)[[0, 0]].abs(),
            |s| {
                let mut g = Gradients::zeros_like(s);
                g.get_mut(id)[[0, 0]] = 1.0;
                g
            },
        );
        assert!(report.max_relative_error > 0.1);
        assert_eq!(report.exceeding[0].kind, Discrepancy::Kink);
    }

    #[test]
    fn store_is_restored() {
        let mut store = ParamStore::new();
        let id = store.add("w", array![[0.25, 4.0]]);
        let before = store.clone();
        gradient_check(&mut store, |s| s.get(id).sum(), Gradients::zeros_like);
        assert_eq!(store, before);
    }
}
