use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

fn is_constant(row: ndarray::ArrayView1<f64>) -> bool {
    let first = row[0];
    row.iter().all(|&v| v == first)
}

/// Pairwise Pearson correlation between the rows of a `v × t` matrix.
///
/// A row whose values are all equal has no defined correlation; it gets 0
/// against every other row and 1 on the diagonal.
pub fn pearson_features(x: &Array2<f64>) -> Result<Array2<f64>> {
    let (v, t) = x.dim();
    if t < 2 {
        return Err(Error::InvalidInput(format!(
            "Pearson correlation needs at least 2 time steps, got {t}"
        )));
    }
    let constant: Vec<bool> = x.rows().into_iter().map(is_constant).collect();
    let mean = x.mean_axis(Axis(1)).expect("t >= 2");
    let mut centered = x - &mean.insert_axis(Axis(1));
    for (mut row, &flat) in centered.rows_mut().into_iter().zip(&constant) {
        if flat {
            row.fill(0.0);
        } else {
            let norm = row.dot(&row).sqrt();
            row.mapv_inplace(|a| a / norm);
        }
    }
    let mut f = centered.dot(&centered.t());
    for p in 0..v {
        for q in 0..v {
            f[[p, q]] = if p == q {
                1.0
            } else {
                f[[p, q]].clamp(-1.0, 1.0)
            };
        }
    }
    // exact symmetry regardless of summation order
    for p in 0..v {
        for q in p + 1..v {
            let avg = 0.5 * (f[[p, q]] + f[[q, p]]);
            f[[p, q]] = avg;
            f[[q, p]] = avg;
        }
    }
    Ok(f)
}

/// Standardize each row to mean 0 and (population) variance 1.
/// Rows with all-equal values become all zeros.
pub fn zscore_normalize(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        if is_constant(row.view()) {
            row.fill(0.0);
            continue;
        }
        let mean = row.mean().expect("non-empty row");
        row.mapv_inplace(|a| a - mean);
        let std = (row.dot(&row) / row.len() as f64).sqrt();
        row.mapv_inplace(|a| a / std);
    }
    out
}
