//! Command implementations behind the CLI.
//!
//! Each command reads files, drives the library, and writes artifacts
//! into an output directory together with a manifest recording the
//! resolved configuration hash, the seed, and the crate version. Given
//! identical inputs and seeds, checkpoints, score files, and reports are
//! byte-identical across runs.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::data::{
    self, load_csv, make_windows, read_sidecar, save_csv, split_train_val, write_sidecar,
    RawSeries, SidecarMeta, WindowedDataset,
};
use crate::error::{Error, Result};
use crate::explain::{explain_sensor, export_relevance_graph};
use crate::model::Model;
use crate::score::{
    self, score_series, DetectionReport, RobustStats, ScoreSeries,
};
use crate::train::{fit, load_checkpoint, save_checkpoint, Checkpoint, FitReport, TrainConfig};

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_sha256: String,
    seed: u64,
    crate_version: &'a str,
}

/// Writes `manifest.json` describing this run. Contains no timestamps,
/// so reruns are byte-identical.
pub fn write_manifest(out_dir: &Path, command: &str, cfg: &RunConfig) -> Result<()> {
    let manifest = Manifest {
        command,
        config_sha256: cfg.sha256(),
        seed: cfg.seed,
        crate_version: env!("CARGO_PKG_VERSION"),
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    std::fs::write(out_dir.join("manifest.json"), text + "\n")?;
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

/// Cleans a raw CSV: head trim, median downsampling, mean imputation,
/// min-max scaling. Scaling statistics come from `stats_from` (a sidecar
/// written when preprocessing the training stretch) or are fitted here.
/// Writes `processed.csv` and `sidecar.json`.
pub fn cmd_preprocess(
    input: &Path,
    stats_from: Option<&Path>,
    cfg: &RunConfig,
    out_dir: &Path,
) -> Result<PathBuf> {
    ensure_dir(out_dir)?;
    let series = load_csv(input)?;
    let borrowed_stats = match stats_from {
        Some(path) => {
            let meta = read_sidecar(path)?;
            if meta.sensor_names != series.sensor_names {
                return Err(Error::Data(format!(
                    "sidecar {} was fitted on different sensors",
                    path.display()
                )));
            }
            Some(meta.stats)
        }
        None => None,
    };
    let (processed, stats) = data::preprocess(&series, &cfg.preprocess, borrowed_stats.as_ref())?;
    let out_csv = out_dir.join("processed.csv");
    save_csv(&processed, &out_csv)?;
    write_sidecar(
        &SidecarMeta {
            options: cfg.preprocess.clone(),
            sensor_names: processed.sensor_names.clone(),
            stats,
        },
        &out_dir.join("sidecar.json"),
    )?;
    write_manifest(out_dir, "preprocess", cfg)?;
    Ok(out_csv)
}

/// Model predictions per window, one row per timestep.
pub fn predict_series(model: &Model, ds: &WindowedDataset, batch: usize) -> Result<Vec<Vec<f64>>> {
    if ds.inputs.is_empty() {
        return Err(Error::Contract("prediction over an empty dataset".to_string()));
    }
    let adjacency = model.adjacency()?;
    let n = model.n_sensors();
    let mut rows = Vec::with_capacity(ds.inputs.len());
    for chunk in ds.inputs.chunks(batch.max(1)) {
        let trace = model.trace(chunk, &adjacency)?;
        let preds = trace.tape.data(trace.output);
        for window in preds.chunks(n) {
            rows.push(window.to_vec());
        }
    }
    Ok(rows)
}

/// Fits scoring statistics on validation-period errors of a trained
/// model.
fn validation_robust_stats(
    model: &Model,
    val: &WindowedDataset,
    batch: usize,
) -> Result<RobustStats> {
    let preds = predict_series(model, val, batch)?;
    let errors = score::abs_error(&preds, &val.targets)?;
    score::fit_robust_stats(&errors)
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub report: FitReport,
    pub checkpoint_path: PathBuf,
    pub n_windows_train: usize,
    pub n_windows_val: usize,
}

/// A model trained in memory together with the scoring statistics
/// fitted on its validation errors.
pub struct TrainedModel {
    pub model: Model,
    pub robust: RobustStats,
    pub report: FitReport,
    pub n_windows_train: usize,
    pub n_windows_val: usize,
}

/// Windows a series, trains a fresh model on it, and fits scoring
/// statistics on the held-out validation errors.
pub fn train_series(series: &RawSeries, cfg: &RunConfig) -> Result<TrainedModel> {
    let ds = make_windows(series, cfg.model.window)?;
    let (train_ds, val_ds) = split_train_val(&ds, cfg.val_fraction)?;
    let mut model = Model::new(cfg.model.clone(), series.n_sensors(), cfg.seed)?;
    let train_cfg = TrainConfig {
        seed: cfg.seed,
        ..cfg.train.clone()
    };
    let report = fit(&mut model, &train_ds, &val_ds, &train_cfg)?;
    let robust = validation_robust_stats(&model, &val_ds, cfg.train.batch_size)?;
    Ok(TrainedModel {
        model,
        robust,
        report,
        n_windows_train: train_ds.len(),
        n_windows_val: val_ds.len(),
    })
}

/// Trains on a processed CSV and writes `checkpoint.json`,
/// `metrics.jsonl`, and the manifest. A sidecar path embeds the scaling
/// statistics into the checkpoint for provenance.
pub fn cmd_train(
    input: &Path,
    sidecar: Option<&Path>,
    cfg: &RunConfig,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    ensure_dir(out_dir)?;
    let series = load_csv(input)?;
    let norm_stats = match sidecar {
        Some(path) => Some(read_sidecar(path)?.stats),
        None => None,
    };
    let trained = train_series(&series, cfg)?;

    let mut metrics = std::io::BufWriter::new(std::fs::File::create(out_dir.join("metrics.jsonl"))?);
    for epoch in &trained.report.history {
        let line = serde_json::to_string(epoch)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        writeln!(metrics, "{}", line)?;
    }
    drop(metrics);

    let checkpoint = Checkpoint::from_model(
        &trained.model,
        series.sensor_names.clone(),
        cfg.seed,
        norm_stats,
        Some(trained.robust),
    )?;
    let checkpoint_path = out_dir.join("checkpoint.json");
    save_checkpoint(&checkpoint, &checkpoint_path)?;
    write_manifest(out_dir, "train", cfg)?;
    Ok(TrainOutcome {
        report: trained.report,
        checkpoint_path,
        n_windows_train: trained.n_windows_train,
        n_windows_val: trained.n_windows_val,
    })
}

#[derive(Debug)]
pub struct DetectOutcome {
    pub report: DetectionReport,
    pub scores_path: PathBuf,
    pub n_windows: usize,
}

fn write_report(report: &DetectionReport, out_dir: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    std::fs::write(out_dir.join("report.json"), json + "\n")?;

    let mut text = String::new();
    text.push_str(&format!("threshold: {}\n", report.threshold));
    text.push_str(&format!("precision: {}\n", report.precision));
    text.push_str(&format!("recall: {}\n", report.recall));
    text.push_str(&format!("f1: {}\n", report.f1));
    text.push_str(&format!("true_positives: {}\n", report.true_positives));
    text.push_str(&format!("false_positives: {}\n", report.false_positives));
    text.push_str(&format!("false_negatives: {}\n", report.false_negatives));
    text.push_str(&format!("true_negatives: {}\n", report.true_negatives));
    if let Some(w) = &report.warning {
        text.push_str(&format!("warning: {}\n", w));
    }
    std::fs::write(out_dir.join("report.txt"), text)?;
    Ok(())
}

/// Scores a processed test CSV against a checkpoint. With labels in
/// the file, the threshold comes from a best-F1 grid search; without
/// labels a fixed threshold must be configured. Writes `scores.csv`,
/// `report.json`, `report.txt`, and the manifest.
pub fn cmd_detect(
    checkpoint_path: &Path,
    input: &Path,
    cfg: &RunConfig,
    out_dir: &Path,
    per_sensor: bool,
) -> Result<DetectOutcome> {
    ensure_dir(out_dir)?;
    let checkpoint = load_checkpoint(checkpoint_path)?;
    let model = checkpoint.build_model()?;
    let series = load_csv(input)?;
    if series.sensor_names != checkpoint.sensor_names {
        return Err(Error::Data(format!(
            "test data sensors {:?} do not match the checkpoint's {:?}",
            series.sensor_names, checkpoint.sensor_names
        )));
    }
    let robust = checkpoint.robust_stats.clone().ok_or_else(|| {
        Error::Checkpoint("checkpoint lacks scoring statistics; retrain to produce them".to_string())
    })?;

    let ds = make_windows(&series, model.config().window)?;
    let preds = predict_series(&model, &ds, cfg.train.batch_size)?;
    let scored = score_series(&preds, &ds.targets, &robust, cfg.sma_window)?;

    let report = match (&ds.labels, cfg.threshold) {
        (Some(labels), _) => score::grid_search_threshold(&scored.smooth, labels, cfg.grid_size)?,
        (None, Some(threshold)) => {
            let pred = score::apply_threshold(&scored.smooth, threshold);
            let positives = pred.iter().filter(|&&p| p == 1).count();
            DetectionReport {
                threshold,
                precision: 0.0,
                recall: 0.0,
                f1: 0.0,
                true_positives: 0,
                false_positives: 0,
                false_negatives: 0,
                true_negatives: 0,
                warning: Some(format!(
                    "no labels in {}; flagged {} of {} timesteps at the fixed threshold",
                    input.display(),
                    positives,
                    pred.len()
                )),
            }
        }
        (None, None) => {
            return Err(Error::Config(
                "test data has no label column; pass --threshold to score without labels"
                    .to_string(),
            ))
        }
    };

    let scores_path = out_dir.join("scores.csv");
    score::export_scores(
        &scored,
        &ds.timestamps,
        &series.sensor_names,
        per_sensor,
        &scores_path,
    )?;
    write_report(&report, out_dir)?;
    write_manifest(out_dir, "detect", cfg)?;
    Ok(DetectOutcome {
        report,
        scores_path,
        n_windows: ds.len(),
    })
}

/// Scores windows in memory (no files); used by sweep and tests.
pub fn detect_in_memory(
    model: &Model,
    robust: &RobustStats,
    ds: &WindowedDataset,
    cfg: &RunConfig,
) -> Result<(ScoreSeries, DetectionReport)> {
    let labels = ds.labels.as_ref().ok_or_else(|| {
        Error::Config("threshold search needs labeled test data".to_string())
    })?;
    let preds = predict_series(model, ds, cfg.train.batch_size)?;
    let scored = score_series(&preds, &ds.targets, robust, cfg.sma_window)?;
    let report = score::grid_search_threshold(&scored.smooth, labels, cfg.grid_size)?;
    Ok((scored, report))
}

/// Resolves a sensor given either its index or its name.
pub fn resolve_sensor(names: &[String], key: &str) -> Result<usize> {
    if let Some(i) = names.iter().position(|n| n == key) {
        return Ok(i);
    }
    if let Ok(i) = key.parse::<usize>() {
        if i < names.len() {
            return Ok(i);
        }
    }
    Err(Error::Index(format!(
        "unknown sensor '{}' ({} sensors: {})",
        key,
        names.len(),
        names.join(", ")
    )))
}

/// Explains one prediction of a processed test CSV and writes the
/// relevance graph to `out`.
pub fn cmd_explain(
    checkpoint_path: &Path,
    input: &Path,
    time: usize,
    sensor: &str,
    out: &Path,
) -> Result<PathBuf> {
    let checkpoint = load_checkpoint(checkpoint_path)?;
    let model = checkpoint.build_model()?;
    let series = load_csv(input)?;
    if series.sensor_names != checkpoint.sensor_names {
        return Err(Error::Data(
            "test data sensors do not match the checkpoint's".to_string(),
        ));
    }
    let target = resolve_sensor(&series.sensor_names, sensor)?;
    let ds = make_windows(&series, model.config().window)?;
    let idx = ds
        .timestamps
        .iter()
        .position(|&t| t == time)
        .ok_or_else(|| {
            Error::Index(format!(
                "no window predicts time {} (valid range {}..{})",
                time,
                ds.timestamps.first().copied().unwrap_or(0),
                ds.timestamps.last().copied().unwrap_or(0)
            ))
        })?;
    let map = explain_sensor(&model, &ds.inputs[idx], target, time)?;
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    export_relevance_graph(&map, &series.sensor_names, out)?;
    Ok(out.to_path_buf())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Window,
    TopK,
}

impl SweepParam {
    pub fn parse(s: &str) -> Result<SweepParam> {
        match s {
            "window" => Ok(SweepParam::Window),
            "topk" => Ok(SweepParam::TopK),
            other => Err(Error::Config(format!(
                "unknown sweep parameter '{}' (expected window or topk)",
                other
            ))),
        }
    }

    fn name(self) -> &'static str {
        match self {
            SweepParam::Window => "window",
            SweepParam::TopK => "topk",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub parameter: &'static str,
    pub value: usize,
    pub mean_f1: f64,
    pub stddev_f1: f64,
    pub f1s: Vec<f64>,
}

/// Trains and evaluates once per (value, repetition) pair, repetition r
/// using seed base+r, and aggregates best-threshold F1 per value.
/// Writes `sweep.csv`.
pub fn cmd_sweep(
    train_csv: &Path,
    test_csv: &Path,
    param: SweepParam,
    values: &[usize],
    cfg: &RunConfig,
    out_dir: &Path,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".to_string()));
    }
    ensure_dir(out_dir)?;
    let train_series = load_csv(train_csv)?;
    let test_series = load_csv(test_csv)?;
    if test_series.labels.is_none() {
        return Err(Error::Config(
            "sweep scoring needs labeled test data".to_string(),
        ));
    }

    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let mut point_cfg = cfg.clone();
        match param {
            SweepParam::Window => point_cfg.model.window = value,
            SweepParam::TopK => point_cfg.model.top_k = value,
        }
        let mut f1s = Vec::with_capacity(cfg.sweep_repeats);
        for rep in 0..cfg.sweep_repeats {
            let seed = cfg.seed + rep as u64;
            point_cfg.seed = seed;
            point_cfg.train.seed = seed;
            let f1 = sweep_point(&train_series, &test_series, &point_cfg)?;
            f1s.push(f1);
        }
        let mean = f1s.iter().sum::<f64>() / f1s.len() as f64;
        let var = f1s.iter().map(|f| (f - mean) * (f - mean)).sum::<f64>() / f1s.len() as f64;
        rows.push(SweepRow {
            parameter: param.name(),
            value,
            mean_f1: mean,
            stddev_f1: var.sqrt(),
            f1s,
        });
    }

    let mut out = String::from("parameter,value,mean_f1,stddev_f1");
    for rep in 0..cfg.sweep_repeats {
        out.push_str(&format!(",f1_rep{}", rep));
    }
    out.push('\n');
    for row in &rows {
        out.push_str(&format!(
            "{},{},{},{}",
            row.parameter, row.value, row.mean_f1, row.stddev_f1
        ));
        for f in &row.f1s {
            out.push_str(&format!(",{}", f));
        }
        out.push('\n');
    }
    std::fs::write(out_dir.join("sweep.csv"), out)?;
    write_manifest(out_dir, "sweep", cfg)?;
    Ok(rows)
}

fn sweep_point(train: &RawSeries, test: &RawSeries, cfg: &RunConfig) -> Result<f64> {
    let trained = train_series(train, cfg)?;
    let test_ds = make_windows(test, cfg.model.window)?;
    let (_, report) = detect_in_memory(&trained.model, &trained.robust, &test_ds, cfg)?;
    Ok(report.f1)
}

/// Generates a synthetic dataset from a JSON spec into `out_dir`.
pub fn cmd_synth(spec_path: &Path, cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let spec = crate::synth::SynthSpec::from_json_file(spec_path)?;
    crate::synth::write_dataset(&spec, out_dir)?;
    write_manifest(out_dir, "synth", cfg)?;
    Ok(())
}
