//! One function per subcommand. Each validates everything it can before the
//! output directory is created, so a bad config leaves nothing behind.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use netgen_core::dataset::{split_indices, write_dataset, Dataset};
use netgen_core::interpret::{
    collect_graphs, edge_ttest, export_edges, export_heatmap, export_matrix, export_scores,
    mean_graph, module_difference_scores,
};
use netgen_core::pipeline::{prepare, PipelineKind, PreparedSample};
use netgen_core::training::{
    ablate, compare, run, sweep, RunSummary, TrainConfig, TrainedModel, COMPARED_PIPELINES,
};
use serde::Serialize;

use crate::config::{ExperimentConfig, GraphSplit};
use crate::error::CliError;

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Overrides {
    /// Apply to a training-style config: `--seed` becomes the only run seed.
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(seed) = self.seed {
            cfg.seed = seed;
            cfg.seeds = Some(vec![seed]);
        }
        if let Some(epochs) = self.epochs {
            cfg.train.epochs = epochs;
        }
        if let Some(out) = &self.out {
            cfg.output = Some(out.clone());
        }
        if let Some(ck) = &self.checkpoint {
            cfg.interpret.checkpoint = Some(ck.clone());
        }
    }
}

const RUN_FORMAT: &str = "netgen-run";
const RUN_VERSION: u32 = 1;

/// `run.json`: the effective config plus the files written next to it.
#[derive(Serialize)]
struct RunManifest<'a> {
    format: &'static str,
    version: u32,
    netgen: &'static str,
    command: &'a str,
    config: &'a ExperimentConfig,
    artifacts: Vec<String>,
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn to_json(value: &impl Serialize) -> String {
    serde_json::to_string_pretty(value).expect("plain data serializes") + "\n"
}

fn write_manifest(dir: &Path, command: &str, cfg: &ExperimentConfig, artifacts: &[&str]) -> Result<(), CliError> {
    let manifest = RunManifest {
        format: RUN_FORMAT,
        version: RUN_VERSION,
        netgen: env!("CARGO_PKG_VERSION"),
        command,
        config: cfg,
        artifacts: artifacts.iter().map(|s| s.to_string()).collect(),
    };
    write_file(&dir.join("run.json"), to_json(&manifest))
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Summary and per-seed tables for rows keyed by `keys` (already CSV-joined).
fn summary_tables(header: &str, rows: &[(String, &RunSummary)]) -> (String, String) {
    let mut summary = format!("{header},auroc_mean,auroc_std,accuracy_mean,accuracy_std,seeds\n");
    let mut runs = format!("{header},seed,best_epoch,auroc,accuracy\n");
    for (key, s) in rows {
        writeln!(
            summary,
            "{key},{},{},{},{},{}",
            opt(s.auroc_mean),
            opt(s.auroc_std),
            s.accuracy_mean,
            s.accuracy_std,
            s.runs.len()
        )
        .unwrap();
        for r in &s.runs {
            writeln!(runs, "{key},{},{},{},{}", r.seed, r.best_epoch, opt(r.test.auroc), r.test.accuracy).unwrap();
        }
    }
    (summary, runs)
}

fn fmt_summary(s: &RunSummary) -> String {
    match (s.auroc_mean, s.auroc_std) {
        (Some(m), Some(sd)) => format!(
            "AUROC {:.4} ± {:.4}, accuracy {:.4} ± {:.4}",
            m, sd, s.accuracy_mean, s.accuracy_std
        ),
        _ => format!("AUROC undefined, accuracy {:.4} ± {:.4}", s.accuracy_mean, s.accuracy_std),
    }
}

/// Shared front half of the training commands: load, check, build.
fn prepare_training(
    config: &Path,
    ov: &Overrides,
) -> Result<(ExperimentConfig, Dataset, TrainConfig), CliError> {
    let mut cfg = ExperimentConfig::load(config)?;
    ov.apply(&mut cfg);
    cfg.validate()?;
    cfg.output_dir()?;
    let ds = cfg.load_data()?;
    let tc = cfg.train_config();
    tc.validate(ds.steps())?;
    Ok((cfg, ds, tc))
}

pub fn synth(config: &Path, ov: &Overrides) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(seed) = ov.seed {
        cfg.data.seed = seed;
    }
    if let Some(out) = &ov.out {
        cfg.output = Some(out.clone());
    }
    if cfg.data.synth.is_none() {
        return Err(CliError::Config("synth needs a `data.synth` section".into()));
    }
    cfg.validate()?;
    let out = cfg.output_dir()?.to_path_buf();
    let ds = cfg.load_data()?;
    create_dir(&out)?;
    write_dataset(&ds, &out)?;
    println!("wrote {} samples ({} ROIs x {} steps) to {}", ds.n(), ds.rois(), ds.steps(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainMetrics<'a> {
    seed: u64,
    best_epoch: usize,
    epochs: usize,
    split_sizes: [usize; 3],
    val: &'a netgen_core::training::Metrics,
    test: &'a netgen_core::training::Metrics,
}

pub fn train(config: &Path, ov: &Overrides) -> Result<(), CliError> {
    let (cfg, ds, tc) = prepare_training(config, ov)?;
    let out = cfg.output_dir()?.to_path_buf();
    create_dir(&out)?;
    let r = run(&tc, &ds)?;
    r.trained.save(&out.join("checkpoint.json"))?;
    write_file(&out.join("history.csv"), r.history.to_csv())?;
    let metrics = TrainMetrics {
        seed: tc.seed,
        best_epoch: r.history.best_epoch,
        epochs: r.history.epochs.len(),
        split_sizes: [r.split[0].len(), r.split[1].len(), r.split[2].len()],
        val: &r.history.best().val,
        test: &r.test,
    };
    write_file(&out.join("metrics.json"), to_json(&metrics))?;
    write_manifest(&out, "train", &cfg, &["checkpoint.json", "history.csv", "metrics.json"])?;
    println!(
        "best epoch {} of {}: test AUROC {}, accuracy {:.4}",
        r.history.best_epoch,
        r.history.epochs.len(),
        r.test.auroc.map_or("undefined".into(), |a| format!("{a:.4}")),
        r.test.accuracy
    );
    Ok(())
}

pub fn compare_cmd(config: &Path, ov: &Overrides) -> Result<(), CliError> {
    let (cfg, ds, tc) = prepare_training(config, ov)?;
    for p in &COMPARED_PIPELINES {
        p.config(&tc).validate(ds.steps())?;
    }
    let out = cfg.output_dir()?.to_path_buf();
    create_dir(&out)?;
    let rows = compare(&tc, &ds, &cfg.seed_list())?;
    let keyed: Vec<(String, &RunSummary)> = rows.iter().map(|r| (r.pipeline.clone(), &r.summary)).collect();
    let (summary, runs) = summary_tables("pipeline", &keyed);
    write_file(&out.join("compare.csv"), summary)?;
    write_file(&out.join("compare_runs.csv"), runs)?;
    write_file(&out.join("metrics.json"), to_json(&rows))?;
    write_manifest(&out, "compare", &cfg, &["compare.csv", "compare_runs.csv", "metrics.json"])?;
    for r in &rows {
        println!("{:<13} {}", r.pipeline, fmt_summary(&r.summary));
    }
    Ok(())
}

pub fn ablate_cmd(config: &Path, ov: &Overrides) -> Result<(), CliError> {
    let (cfg, ds, tc) = prepare_training(config, ov)?;
    let out = cfg.output_dir()?.to_path_buf();
    create_dir(&out)?;
    let rows = ablate(&tc, &ds, &cfg.seed_list())?;
    let keyed: Vec<(String, &RunSummary)> = rows
        .iter()
        .map(|r| {
            let w = r.weights;
            (format!("{},{},{},{}", r.variant, w.alpha, w.beta, w.gamma), &r.summary)
        })
        .collect();
    let (summary, runs) = summary_tables("variant,alpha,beta,gamma", &keyed);
    write_file(&out.join("ablation.csv"), summary)?;
    write_file(&out.join("ablation_runs.csv"), runs)?;
    write_file(&out.join("metrics.json"), to_json(&rows))?;
    write_manifest(&out, "ablate", &cfg, &["ablation.csv", "ablation_runs.csv", "metrics.json"])?;
    for r in &rows {
        println!("{:<6} {}", r.variant, fmt_summary(&r.summary));
    }
    Ok(())
}

pub fn sweep_cmd(config: &Path, ov: &Overrides) -> Result<(), CliError> {
    let (cfg, ds, tc) = prepare_training(config, ov)?;
    let grid = cfg
        .sweep
        .clone()
        .ok_or_else(|| CliError::Config("sweep needs a `sweep` section with windows and dims".into()))?;
    for &window in &grid.windows {
        for &dim in &grid.dims {
            let mut c = tc.clone();
            c.model.encoder.window = window;
            c.model.encoder.dim = dim;
            c.validate(ds.steps())?;
        }
    }
    let out = cfg.output_dir()?.to_path_buf();
    create_dir(&out)?;
    let rows = sweep(&tc, &ds, &grid.windows, &grid.dims, &cfg.seed_list())?;
    let keyed: Vec<(String, &RunSummary)> =
        rows.iter().map(|r| (format!("{},{}", r.window, r.dim), &r.summary)).collect();
    let (summary, runs) = summary_tables("window,dim", &keyed);
    write_file(&out.join("sweep.csv"), summary)?;
    write_file(&out.join("sweep_runs.csv"), runs)?;
    write_file(&out.join("metrics.json"), to_json(&rows))?;
    write_manifest(&out, "sweep", &cfg, &["sweep.csv", "sweep_runs.csv", "metrics.json"])?;
    for r in &rows {
        println!("window {:>3} dim {:>3}: {}", r.window, r.dim, fmt_summary(&r.summary));
    }
    Ok(())
}

pub fn interpret_cmd(config: &Path, ov: &Overrides) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::load(config)?;
    ov.apply(&mut cfg);
    cfg.validate()?;
    let out = cfg.output_dir()?.to_path_buf();
    let ck_path = cfg
        .interpret
        .checkpoint
        .clone()
        .ok_or_else(|| CliError::Config("interpret needs --checkpoint or interpret.checkpoint".into()))?;
    if !ck_path.is_file() {
        return Err(CliError::Config(format!("checkpoint {} does not exist", ck_path.display())));
    }
    let ds = cfg.load_data()?;
    let trained = TrainedModel::load(&ck_path)?;
    if trained.config.pipeline != PipelineKind::Fbnetgen {
        return Err(CliError::Config(format!(
            "interpret needs a learnable-graph checkpoint, got pipeline {}",
            trained.config.pipeline
        )));
    }
    if (trained.rois, trained.steps) != (ds.rois(), ds.steps()) || trained.classes != ds.classes() {
        return Err(netgen_core::error::Error::InvalidInput(format!(
            "checkpoint expects {} ROIs x {} steps with classes {:?}, data has {} x {} with {:?}",
            trained.rois,
            trained.steps,
            trained.classes,
            ds.rois(),
            ds.steps(),
            ds.classes()
        ))
        .into());
    }
    let indices: Vec<usize> = match cfg.interpret.split {
        GraphSplit::All => (0..ds.n()).collect(),
        part => {
            // the checkpoint's seed reproduces the split it was trained on
            let spec = cfg.train.split.with_seed(trained.seed);
            let [tr, va, te] = split_indices(&ds.labels(), ds.classes().len(), &spec)?;
            match part {
                GraphSplit::Train => tr,
                GraphSplit::Val => va,
                _ => te,
            }
        }
    };
    let samples = prepare(&ds)?;
    let picked: Vec<&PreparedSample> = indices.iter().map(|&i| &samples[i]).collect();
    let labels: Vec<usize> = picked.iter().map(|s| s.label).collect();
    let graphs: Vec<_> = collect_graphs(&trained, &picked)?.into_iter().map(|g| g.a).collect();
    let edges = edge_ttest(&graphs, &labels, cfg.interpret.alpha)?;
    let scores = module_difference_scores(&edges.pairs(), ds.partition(), ds.rois())?;

    create_dir(&out)?;
    let mut artifacts = vec!["mean_graph_all.csv".to_string(), "mean_graph_all.pgm".to_string()];
    let all = mean_graph(&graphs)?;
    export_matrix(&all, &out.join("mean_graph_all.csv"))?;
    export_heatmap(&all, &out.join("mean_graph_all.pgm"))?;
    for k in 0..ds.classes().len() {
        let members: Vec<_> = graphs.iter().zip(&labels).filter(|(_, &l)| l == k).map(|(g, _)| g.clone()).collect();
        if members.is_empty() {
            log::warn!("class {k} has no samples in the {:?} split; no mean graph", cfg.interpret.split);
            continue;
        }
        let m = mean_graph(&members)?;
        let csv = format!("mean_graph_class{k}.csv");
        let pgm = format!("mean_graph_class{k}.pgm");
        export_matrix(&m, &out.join(&csv))?;
        export_heatmap(&m, &out.join(&pgm))?;
        artifacts.extend([csv, pgm]);
    }
    export_edges(&edges, &out.join("edges_significant.csv"))?;
    export_scores(&scores, &out.join("module_scores.csv"))?;
    artifacts.extend(["edges_significant.csv".to_string(), "module_scores.csv".to_string()]);
    let names: Vec<&str> = artifacts.iter().map(String::as_str).collect();
    write_manifest(&out, "interpret", &cfg, &names)?;

    println!(
        "{} of {} edges differ at alpha {} over {} graphs",
        edges.significant.len(),
        edges.tested,
        edges.alpha,
        graphs.len()
    );
    for s in &scores {
        println!("{:<12} {:.6}", s.module, s.score);
    }
    Ok(())
}
