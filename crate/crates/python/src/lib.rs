//! Python bindings: train, score, and explain the detector from Python.
//!
//! The module exposes a `Detector` class wrapping a trained model plus
//! its scoring statistics, and helpers for generating synthetic data and
//! preprocessing CSVs. Build as a cdylib and import the resulting
//! shared object as `ecnu_gnn_py` (see python/smoke_test.py).

use std::path::Path;

use pyo3::exceptions::{PyIOError, PyIndexError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ecnu_gnn::config::{PartialConfig, RunConfig};
use ecnu_gnn::data::{load_csv, make_windows};
use ecnu_gnn::error::Error;
use ecnu_gnn::explain::explain_sensor;
use ecnu_gnn::model::Model;
use ecnu_gnn::pipeline::{self, predict_series, resolve_sensor, train_series};
use ecnu_gnn::score::{self, RobustStats};
use ecnu_gnn::synth::SynthSpec;
use ecnu_gnn::tensor::Tensor;
use ecnu_gnn::train::{load_checkpoint, save_checkpoint, Checkpoint};

fn to_py(e: Error) -> PyErr {
    match &e {
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        Error::Config(_) | Error::Parse { .. } | Error::Data(_) => {
            PyValueError::new_err(e.to_string())
        }
        Error::Index(_) => PyIndexError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// A trained anomaly detector: model weights, the learned sensor graph,
/// and the robust scoring statistics fitted on validation errors.
#[pyclass]
pub struct Detector {
    model: Model,
    robust: Option<RobustStats>,
    sensor_names: Vec<String>,
    seed: u64,
}

#[pymethods]
impl Detector {
    /// Trains a fresh model on a CSV of sensor columns (plus an optional
    /// trailing label column, which is ignored for training).
    #[staticmethod]
    #[pyo3(signature = (train_csv, *, window=5, top_k=5, embed_dim=8, hidden_dim=32,
        update_layers=2, readout_layers=2, learning_rate=1e-3, max_epochs=20,
        patience=5, batch_size=32, val_fraction=0.1, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        train_csv: &str,
        window: usize,
        top_k: usize,
        embed_dim: usize,
        hidden_dim: usize,
        update_layers: usize,
        readout_layers: usize,
        learning_rate: f64,
        max_epochs: usize,
        patience: usize,
        batch_size: usize,
        val_fraction: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let cfg = RunConfig::resolve(
            None,
            PartialConfig {
                window: Some(window),
                top_k: Some(top_k),
                embed_dim: Some(embed_dim),
                hidden_dim: Some(hidden_dim),
                n_update_layers: Some(update_layers),
                n_readout_layers: Some(readout_layers),
                learning_rate: Some(learning_rate),
                max_epochs: Some(max_epochs),
                patience: Some(patience),
                batch_size: Some(batch_size),
                val_fraction: Some(val_fraction),
                seed: Some(seed),
                ..PartialConfig::default()
            },
        )
        .map_err(to_py)?;
        let series = load_csv(Path::new(train_csv)).map_err(to_py)?;
        let trained = train_series(&series, &cfg).map_err(to_py)?;
        Ok(Detector {
            model: trained.model,
            robust: Some(trained.robust),
            sensor_names: series.sensor_names,
            seed,
        })
    }

    /// Loads a detector from a checkpoint written by `save` (or by the
    /// command-line `train`).
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let ckpt = load_checkpoint(Path::new(path)).map_err(to_py)?;
        let model = ckpt.build_model().map_err(to_py)?;
        Ok(Detector {
            model,
            robust: ckpt.robust_stats,
            sensor_names: ckpt.sensor_names,
            seed: ckpt.seed,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let ckpt = Checkpoint::from_model(
            &self.model,
            self.sensor_names.clone(),
            self.seed,
            None,
            self.robust.clone(),
        )
        .map_err(to_py)?;
        save_checkpoint(&ckpt, Path::new(path)).map_err(to_py)
    }

    /// Next-value prediction per sensor from one window: a list of
    /// per-sensor rows, each holding the last `window` values.
    fn predict(&self, window: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let t = Tensor::from_rows(&window).map_err(to_py)?;
        self.model.forward(&t).map_err(to_py)
    }

    /// The learned graph: for each sensor, the sensors it attends to.
    fn adjacency(&self) -> PyResult<Vec<Vec<usize>>> {
        let adj = self.model.adjacency().map_err(to_py)?;
        Ok((0..self.model.n_sensors())
            .map(|i| adj.neighbors(i).to_vec())
            .collect())
    }

    /// Scores a test CSV. With a label column the threshold is searched
    /// for the best F1 and the returned dict carries the full report;
    /// without labels a fixed `threshold` must be given and the dict
    /// reports how many timesteps it flagged.
    #[pyo3(signature = (test_csv, *, sma_window=3, grid_size=400, threshold=None))]
    fn detect<'py>(
        &self,
        py: Python<'py>,
        test_csv: &str,
        sma_window: usize,
        grid_size: usize,
        threshold: Option<f64>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let series = load_csv(Path::new(test_csv)).map_err(to_py)?;
        if series.sensor_names != self.sensor_names {
            return Err(PyValueError::new_err(format!(
                "test data sensors {:?} do not match the detector's {:?}",
                series.sensor_names, self.sensor_names
            )));
        }
        let robust = self
            .robust
            .as_ref()
            .ok_or_else(|| PyRuntimeError::new_err("detector has no scoring statistics"))?;
        let ds = make_windows(&series, self.model.config().window).map_err(to_py)?;
        let preds = predict_series(&self.model, &ds, 32).map_err(to_py)?;
        let scored = score::score_series(&preds, &ds.targets, robust, sma_window).map_err(to_py)?;

        let out = PyDict::new(py);
        out.set_item("scores", &scored.smooth)?;
        out.set_item("argmax", &scored.argmax)?;
        out.set_item("timestamps", &ds.timestamps)?;
        match (&ds.labels, threshold) {
            (Some(labels), _) => {
                let report =
                    score::grid_search_threshold(&scored.smooth, labels, grid_size).map_err(to_py)?;
                out.set_item("threshold", report.threshold)?;
                out.set_item("precision", report.precision)?;
                out.set_item("recall", report.recall)?;
                out.set_item("f1", report.f1)?;
                out.set_item("true_positives", report.true_positives)?;
                out.set_item("false_positives", report.false_positives)?;
                out.set_item("false_negatives", report.false_negatives)?;
                out.set_item("true_negatives", report.true_negatives)?;
                out.set_item("warning", report.warning)?;
            }
            (None, Some(th)) => {
                let pred = score::apply_threshold(&scored.smooth, th);
                out.set_item("threshold", th)?;
                out.set_item("flagged", pred.iter().filter(|&&p| p == 1).count())?;
            }
            (None, None) => {
                return Err(PyValueError::new_err(
                    "test data has no label column; pass threshold= to score without labels",
                ))
            }
        }
        Ok(out)
    }

    /// Attributes one sensor's prediction at one timestep to the sensors
    /// feeding it. Returns (per-sensor relevance, edges as
    /// (target, source, relevance) triples, uniform_fallback flag).
    fn explain(
        &self,
        test_csv: &str,
        time: usize,
        sensor: &str,
    ) -> PyResult<(Vec<f64>, Vec<(usize, usize, f64)>, bool)> {
        let series = load_csv(Path::new(test_csv)).map_err(to_py)?;
        if series.sensor_names != self.sensor_names {
            return Err(PyValueError::new_err(
                "test data sensors do not match the detector's",
            ));
        }
        let target = resolve_sensor(&series.sensor_names, sensor).map_err(to_py)?;
        let ds = make_windows(&series, self.model.config().window).map_err(to_py)?;
        let idx = ds
            .timestamps
            .iter()
            .position(|&t| t == time)
            .ok_or_else(|| {
                PyIndexError::new_err(format!(
                    "no window predicts time {} (valid range {}..{})",
                    time,
                    ds.timestamps.first().copied().unwrap_or(0),
                    ds.timestamps.last().copied().unwrap_or(0)
                ))
            })?;
        let map = explain_sensor(&self.model, &ds.inputs[idx], target, time).map_err(to_py)?;
        let edges = map
            .edges
            .iter()
            .map(|e| (e.target, e.source, e.weight))
            .collect();
        Ok((map.node_relevance, edges, map.uniform_fallback))
    }

    #[getter]
    fn sensor_names(&self) -> Vec<String> {
        self.sensor_names.clone()
    }

    #[getter]
    fn n_sensors(&self) -> usize {
        self.model.n_sensors()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.seed
    }
}

/// Generates a synthetic labeled dataset (train.csv, test.csv,
/// truth_edges.txt) from a JSON spec file.
#[pyfunction]
fn generate_dataset(spec_path: &str, out_dir: &str) -> PyResult<()> {
    let spec = SynthSpec::from_json_file(Path::new(spec_path)).map_err(to_py)?;
    ecnu_gnn::synth::write_dataset(&spec, Path::new(out_dir)).map_err(to_py)
}

/// Cleans and scales a raw CSV; returns the path of the processed file.
/// Pass `stats_from` (a sidecar.json from a training run) to reuse its
/// scaling statistics for test data.
#[pyfunction]
#[pyo3(signature = (input_csv, out_dir, *, stats_from=None, trim_head=0, downsample=1))]
fn preprocess(
    input_csv: &str,
    out_dir: &str,
    stats_from: Option<&str>,
    trim_head: usize,
    downsample: usize,
) -> PyResult<String> {
    let cfg = RunConfig::resolve(
        None,
        PartialConfig {
            trim_head: Some(trim_head),
            downsample: Some(downsample),
            ..PartialConfig::default()
        },
    )
    .map_err(to_py)?;
    let out = pipeline::cmd_preprocess(
        Path::new(input_csv),
        stats_from.map(Path::new),
        &cfg,
        Path::new(out_dir),
    )
    .map_err(to_py)?;
    Ok(out.display().to_string())
}

#[pymodule]
fn ecnu_gnn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Detector>()?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(preprocess, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ecnu_gnn::synth::{Anomaly, InjectionKind, SynthEdge, SynthSpec};

    fn tiny_dataset(dir: &Path) -> (String, String) {
        let spec = SynthSpec {
            n_sensors: 3,
            t_train: 120,
            t_test: 60,
            edges: vec![SynthEdge {
                driver: 0,
                driven: 1,
                lag: 1,
                weight: 1.0,
            }],
            noise_sigma: 0.02,
            anomalies: vec![Anomaly {
                start: 20,
                len: 8,
                sensors: vec![1],
                kind: InjectionKind::Offset,
                magnitude: 2.0,
            }],
            seed: 3,
        };
        ecnu_gnn::synth::write_dataset(&spec, dir).unwrap();
        (
            dir.join("train.csv").display().to_string(),
            dir.join("test.csv").display().to_string(),
        )
    }

    fn tiny_detector(train_csv: &str) -> Detector {
        Detector::train(
            train_csv, 3, 1, 4, 8, 1, 1, 1e-3, 3, 5, 32, 0.2, 5,
        )
        .unwrap()
    }

    #[test]
    fn train_predict_save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (train_csv, _) = tiny_dataset(dir.path());
        let det = tiny_detector(&train_csv);
        assert_eq!(det.n_sensors(), 3);
        assert_eq!(det.sensor_names(), vec!["s0", "s1", "s2"]);

        let window = vec![vec![0.1, 0.2, 0.3]; 3];
        let pred = det.predict(window.clone()).unwrap();
        assert_eq!(pred.len(), 3);

        let path = dir.path().join("model.json").display().to_string();
        det.save(&path).unwrap();
        let loaded = Detector::load(&path).unwrap();
        let pred2 = loaded.predict(window).unwrap();
        let same = pred
            .iter()
            .zip(&pred2)
            .all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same);

        let adj = det.adjacency().unwrap();
        assert_eq!(adj.len(), 3);
        assert!(adj.iter().all(|n| n.len() == 1));
    }

    #[test]
    fn python_style_errors_map_to_exception_types() {
        // Rendering a PyErr touches interpreter state.
        Python::initialize();
        let dir = tempfile::tempdir().unwrap();
        let (train_csv, _) = tiny_dataset(dir.path());
        // Missing file surfaces as an IO error before any training.
        let err = Detector::train(
            "no_such.csv", 3, 1, 4, 8, 1, 1, 1e-3, 1, 5, 32, 0.2, 0,
        )
        .err()
        .unwrap();
        assert!(err.to_string().starts_with("OSError"), "{}", err);
        // Degenerate config is rejected up front.
        let err = Detector::train(&train_csv, 0, 1, 4, 8, 1, 1, 1e-3, 1, 5, 32, 0.2, 0)
            .err()
            .unwrap();
        assert!(err.to_string().starts_with("ValueError"), "{}", err);
    }
}
