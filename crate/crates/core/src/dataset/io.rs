use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Dataset, ModulePartition, TimeSeriesSample};
use crate::error::{Error, Result};

const MANIFEST: &str = "manifest.json";
const MODULES_FILE: &str = "modules.csv";
const SAMPLE_DIR: &str = "samples";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    v: usize,
    t: usize,
    classes: Vec<String>,
    samples: Vec<ManifestEntry>,
    modules_file: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    id: String,
    label: usize,
    file: String,
}

/// Format one value with 9 significant digits.
fn fmt_value(v: f64) -> String {
    format!("{v:.8e}")
}

/// Write a matrix as text: one line per row, comma-separated values.
pub fn write_matrix_csv(matrix: &Array2<f64>, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(matrix.len() * 16);
    for row in matrix.rows() {
        let line: Vec<String> = row.iter().map(|&v| fmt_value(v)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read a matrix written by [`write_matrix_csv`] (or any comma-separated numeric text).
pub fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|tok| {
                tok.trim().parse::<f64>().map_err(|_| {
                    Error::format(path, format!("line {}: cannot parse {tok:?}", lineno + 1))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::format(
                    path,
                    format!(
                        "line {} has {} values, expected {}",
                        lineno + 1,
                        row.len(),
                        first.len()
                    ),
                ));
            }
        }
        rows.push(row);
    }
    let cols = rows.first().map_or(0, Vec::len);
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), cols), flat)
        .map_err(|e| Error::format(path, e.to_string()))
}

/// Write `ds` under `dir` as `manifest.json`, one CSV per sample and a modules file.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    if ds.samples.is_empty() {
        return Err(Error::InvalidInput("cannot write an empty dataset".into()));
    }
    let sample_dir = dir.join(SAMPLE_DIR);
    fs::create_dir_all(&sample_dir).map_err(|e| Error::io(&sample_dir, e))?;

    let mut entries = Vec::with_capacity(ds.samples.len());
    for (i, s) in ds.samples.iter().enumerate() {
        let rel = format!("{SAMPLE_DIR}/sample_{i:05}.csv");
        write_matrix_csv(&s.x, &dir.join(&rel))?;
        entries.push(ManifestEntry {
            id: s.id.clone(),
            label: s.label,
            file: rel,
        });
    }

    let mut modules = String::new();
    for (roi, name) in ds.partition.assignments() {
        modules.push_str(&format!("{roi},{name}\n"));
    }
    let modules_path = dir.join(MODULES_FILE);
    fs::write(&modules_path, modules).map_err(|e| Error::io(&modules_path, e))?;

    let manifest = Manifest {
        v: ds.rois(),
        t: ds.steps(),
        classes: ds.classes.clone(),
        samples: entries,
        modules_file: MODULES_FILE.into(),
    };
    let manifest_path = dir.join(MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, json + "\n").map_err(|e| Error::io(&manifest_path, e))
}

fn read_modules(path: &Path) -> Result<ModulePartition> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (roi, name) = line
            .split_once(',')
            .ok_or_else(|| Error::format(path, format!("line {}: expected roi,module", lineno + 1)))?;
        let roi: usize = roi.trim().parse().map_err(|_| {
            Error::format(path, format!("line {}: bad ROI index {roi:?}", lineno + 1))
        })?;
        pairs.push((roi, name.trim().to_string()));
    }
    ModulePartition::from_assignments(pairs).map_err(|e| Error::format(path, e.to_string()))
}

/// Load a dataset directory written by [`write_dataset`] (or by hand in the same layout).
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::format(&manifest_path, e.to_string()))?;
    if manifest.samples.is_empty() {
        return Err(Error::format(&manifest_path, "no samples listed"));
    }

    let resolve = |rel: &str| -> PathBuf { dir.join(rel) };
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for entry in &manifest.samples {
        let path = resolve(&entry.file);
        if entry.label >= manifest.classes.len() {
            return Err(Error::format(
                &manifest_path,
                format!(
                    "sample {} has unknown label {} ({} classes declared)",
                    entry.id,
                    entry.label,
                    manifest.classes.len()
                ),
            ));
        }
        let x = read_matrix_csv(&path)?;
        if x.dim() != (manifest.v, manifest.t) {
            return Err(Error::format(
                &path,
                format!(
                    "shape {:?} does not match manifest ({}, {})",
                    x.dim(),
                    manifest.v,
                    manifest.t
                ),
            ));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(&path, "contains a non-finite value"));
        }
        samples.push(TimeSeriesSample {
            id: entry.id.clone(),
            x,
            label: entry.label,
        });
    }
    let modules_path = resolve(&manifest.modules_file);
    let partition = read_modules(&modules_path)?;
    Dataset::new(samples, partition, manifest.classes)
        .map_err(|e| Error::format(&manifest_path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn two_sample_dataset() -> Dataset {
        let mk = |id: &str, label, scale: f64| TimeSeriesSample {
            id: id.into(),
            x: Array2::from_shape_fn((4, 8), |(i, j)| scale * ((i * 8 + j) as f64).sin()),
            label,
        };
        let partition = ModulePartition::from_assignments([(0, "a"), (1, "a"), (3, "b")]).unwrap();
        Dataset::new(
            vec![mk("s0", 0, 1.0), mk("s1", 1, 2.5)],
            partition,
            vec!["neg".into(), "pos".into()],
        )
        .unwrap()
    }

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let ds = two_sample_dataset();
        write_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.n(), 2);
        assert_eq!(back.partition(), ds.partition());
        assert_eq!(back.labels(), vec![0, 1]);
        for (a, b) in ds.samples()[1].x.iter().zip(back.samples()[1].x.iter()) {
            assert!((a - b).abs() <= 5e-9 * a.abs().max(1e-300));
        }
        let modules = fs::read_to_string(dir.path().join(MODULES_FILE)).unwrap();
        let names: BTreeSet<_> = modules.lines().map(|l| l.split(',').nth(1).unwrap()).collect();
        assert_eq!(names.len(), 2);
    }

    #[test]
    fn rewrite_is_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_dataset(&two_sample_dataset(), a.path()).unwrap();
        let loaded = load_dataset(a.path()).unwrap();
        write_dataset(&loaded, b.path()).unwrap();
        assert_eq!(load_dataset(b.path()).unwrap(), loaded);
        for f in ["manifest.json", "modules.csv", "samples/sample_00001.csv"] {
            assert_eq!(
                fs::read(a.path().join(f)).unwrap(),
                fs::read(b.path().join(f)).unwrap()
            );
        }
    }

    #[test]
    fn row_count_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&two_sample_dataset(), dir.path()).unwrap();
        let bad = dir.path().join("samples/sample_00000.csv");
        let text = fs::read_to_string(&bad).unwrap();
        let three: Vec<&str> = text.lines().take(3).collect();
        fs::write(&bad, three.join("\n")).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
        assert!(err.to_string().contains("sample_00000.csv"));
    }

    #[test]
    fn missing_sample_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&two_sample_dataset(), dir.path()).unwrap();
        fs::remove_file(dir.path().join("samples/sample_00001.csv")).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        match err {
            Error::Io { path, source } => {
                assert!(path.ends_with("samples/sample_00001.csv"));
                assert_eq!(source.kind(), std::io::ErrorKind::NotFound);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn malformed_manifest_and_non_finite_values() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&two_sample_dataset(), dir.path()).unwrap();
        let sample = dir.path().join("samples/sample_00000.csv");
        let text = fs::read_to_string(&sample).unwrap();
        fs::write(&sample, format!("inf{}", &text[text.find(',').unwrap()..])).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("non-finite"), "{err}");

        fs::write(dir.path().join(MANIFEST), "{ \"v\": 4 ").unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
        assert!(err.to_string().contains("manifest.json"));
    }

    #[test]
    fn empty_dataset_cannot_be_written() {
        let ds = two_sample_dataset();
        let empty = Dataset {
            samples: vec![],
            partition: ds.partition.clone(),
            classes: ds.classes.clone(),
        };
        let dir = tempfile::tempdir().unwrap();
        assert!(write_dataset(&empty, dir.path()).is_err());
    }
}
