//! Optimization loop and model persistence.
//!
//! Training minimizes one-step-ahead MSE with bias-corrected Adam,
//! shuffling windows each epoch from a seeded generator so reruns are
//! bit-identical. Validation loss drives early stopping: after `patience`
//! consecutive epochs without strict improvement the loop stops and the
//! weights roll back to the best epoch seen. Non-finite losses or
//! gradients abort training rather than poison the weights.

use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{NormStats, WindowedDataset};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::score::RobustStats;
use crate::tensor::{ParamStore, Tensor};

/// Persisted checkpoint format revision.
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Rebuild the similarity graph once per epoch instead of per batch.
    /// Embeddings only move between optimizer steps, so per-batch updates
    /// track them exactly; per-epoch is cheaper on large sensor counts.
    pub freeze_graph_per_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-8,
            max_epochs: 100,
            patience: 5,
            batch_size: 32,
            seed: 0,
            freeze_graph_per_epoch: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".to_string()));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::Config(format!("{} must be in [0, 1), got {}", name, beta)));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".to_string()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be positive".to_string()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be positive".to_string()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".to_string()));
        }
        Ok(())
    }
}

/// First and second moment estimates per parameter slot.
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let sizes: Vec<usize> = store
            .ids()
            .map(|id| store.value(id).numel())
            .collect();
        Adam {
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            step: 0,
        }
    }

    /// One bias-corrected update from the gradients currently accumulated
    /// in the store. Rejects non-finite gradients by name before touching
    /// any weight.
    pub fn step(&mut self, store: &mut ParamStore, cfg: &TrainConfig) -> Result<()> {
        for id in store.ids() {
            if store.grad(id).iter().any(|g| !g.is_finite()) {
                return Err(Error::Training(format!(
                    "non-finite gradient in parameter '{}'",
                    store.name(id)
                )));
            }
        }
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step as i32);
        let c2 = 1.0 - cfg.beta2.powi(self.step as i32);
        let ids: Vec<_> = store.ids().collect();
        for (slot, id) in ids.into_iter().enumerate() {
            let grads = store.grad(id).to_vec();
            let m = &mut self.m[slot];
            let v = &mut self.v[slot];
            let values = store.value_mut(id).data_mut();
            for (i, &g) in grads.iter().enumerate() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                values[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        }
        Ok(())
    }
}

/// One epoch's losses and wall time, as written to the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

/// What `fit` hands back alongside the updated model.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub history: Vec<EpochStats>,
    /// Epoch (1-based) whose weights the model now carries.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Set when training stopped on a non-finite loss or gradient; the
    /// model still carries the best weights seen before the blow-up.
    pub aborted: Option<String>,
}

fn snapshot(store: &ParamStore) -> Vec<Tensor> {
    store.ids().map(|id| store.value(id).clone()).collect()
}

fn restore(store: &mut ParamStore, saved: &[Tensor]) {
    for (id, tensor) in store.ids().collect::<Vec<_>>().into_iter().zip(saved) {
        *store.value_mut(id) = tensor.clone();
    }
}

/// Mean squared error of the model over a dataset, evaluated in batches
/// under one fixed adjacency. Returns the per-element mean.
pub fn evaluate(model: &Model, data: &WindowedDataset, batch_size: usize) -> Result<f64> {
    if data.inputs.is_empty() {
        return Err(Error::Contract("evaluation over an empty dataset".to_string()));
    }
    let adjacency = model.adjacency()?;
    let n = model.n_sensors();
    let mut total = 0.0;
    let mut consumed = 0usize;
    for chunk in data.inputs.chunks(batch_size.max(1)) {
        let trace = model.trace(chunk, &adjacency)?;
        let preds = trace.tape.data(trace.output);
        for (i, &p) in preds.iter().enumerate() {
            let t = data.targets[consumed + i / n][i % n];
            total += (p - t) * (p - t);
        }
        consumed += chunk.len();
    }
    Ok(total / (data.inputs.len() * n) as f64)
}

/// Trains the model in place. Returns per-epoch history; the model ends
/// holding the weights of the epoch with the lowest validation loss.
pub fn fit(
    model: &mut Model,
    train: &WindowedDataset,
    val: &WindowedDataset,
    cfg: &TrainConfig,
) -> Result<FitReport> {
    cfg.validate()?;
    if train.inputs.is_empty() || val.inputs.is_empty() {
        return Err(Error::Contract("training and validation sets must be non-empty".to_string()));
    }
    for ds in [train, val] {
        let (n, w) = ds.inputs[0].dims2()?;
        if n != model.n_sensors() || w != model.config().window {
            return Err(Error::Dimension(format!(
                "dataset windows are {} sensors x {} steps, model expects {} x {}",
                n,
                w,
                model.n_sensors(),
                model.config().window
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.store());
    let mut best: Option<(usize, f64, Vec<Tensor>)> = None;
    let mut history = Vec::new();
    let mut bad_streak = 0usize;
    let mut aborted = None;

    'epochs: for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train.inputs.len()).collect();
        // Fisher-Yates from the run-long stream keeps epochs distinct but
        // reproducible.
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }

        let frozen = if cfg.freeze_graph_per_epoch {
            Some(model.adjacency()?)
        } else {
            None
        };

        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let adjacency = match &frozen {
                Some(a) => a.clone(),
                None => model.adjacency()?,
            };
            let windows: Vec<Tensor> = batch.iter().map(|&i| train.inputs[i].clone()).collect();
            let target_rows: Vec<f64> = batch
                .iter()
                .flat_map(|&i| train.targets[i].iter().copied())
                .collect();
            let targets = Tensor::new(vec![target_rows.len(), 1], target_rows)?;

            let mut trace = model.trace(&windows, &adjacency)?;
            let target_var = trace.tape.input(&targets);
            let loss = trace.tape.mse(trace.output, target_var)?;
            let loss_value = trace.tape.data(loss)[0];
            if !loss_value.is_finite() {
                aborted = Some(format!("non-finite loss at epoch {}", epoch));
                break 'epochs;
            }
            let elems = batch.len() * model.n_sensors();
            loss_sum += loss_value * elems as f64;
            loss_count += elems;

            trace.tape.backward(loss, model.store_mut())?;
            if let Err(e) = adam.step(model.store_mut(), cfg) {
                aborted = Some(format!("{} at epoch {}", e, epoch));
                break 'epochs;
            }
            model.store_mut().zero_grads();
        }

        let train_loss = loss_sum / loss_count as f64;
        let val_loss = evaluate(model, val, cfg.batch_size)?;
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            seconds: started.elapsed().as_secs_f64(),
        });

        let improved = best.as_ref().map(|(_, b, _)| val_loss < *b).unwrap_or(true);
        if improved {
            best = Some((epoch, val_loss, snapshot(model.store())));
            bad_streak = 0;
        } else {
            bad_streak += 1;
            if bad_streak >= cfg.patience {
                break;
            }
        }
    }

    match best {
        Some((best_epoch, best_val_loss, weights)) => {
            restore(model.store_mut(), &weights);
            Ok(FitReport {
                history,
                best_epoch,
                best_val_loss,
                aborted,
            })
        }
        None => Err(Error::Training(
            aborted.unwrap_or_else(|| "no epoch completed".to_string()),
        )),
    }
}

/// Validation loss of the constant predictor that always answers the
/// training targets' per-sensor mean. A trained model should beat this.
pub fn constant_baseline_val_loss(train: &WindowedDataset, val: &WindowedDataset) -> Result<f64> {
    if train.targets.is_empty() || val.targets.is_empty() {
        return Err(Error::Contract("baseline needs non-empty datasets".to_string()));
    }
    let n = train.targets[0].len();
    let mut mean = vec![0.0; n];
    for t in &train.targets {
        for (m, &v) in mean.iter_mut().zip(t) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= train.targets.len() as f64;
    }
    let mut total = 0.0;
    for t in &val.targets {
        for (m, &v) in mean.iter().zip(t) {
            total += (v - m) * (v - m);
        }
    }
    Ok(total / (val.targets.len() * n) as f64)
}

/// Self-contained model state: architecture, preprocessing statistics,
/// scoring statistics, and every learned tensor by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: ModelConfig,
    pub n_sensors: usize,
    pub sensor_names: Vec<String>,
    pub seed: u64,
    pub norm_stats: Option<NormStats>,
    pub robust_stats: Option<RobustStats>,
    pub params: Vec<NamedTensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

impl Checkpoint {
    pub fn from_model(
        model: &Model,
        sensor_names: Vec<String>,
        seed: u64,
        norm_stats: Option<NormStats>,
        robust_stats: Option<RobustStats>,
    ) -> Result<Self> {
        if sensor_names.len() != model.n_sensors() {
            return Err(Error::Checkpoint(format!(
                "{} sensor names for {} sensors",
                sensor_names.len(),
                model.n_sensors()
            )));
        }
        let store = model.store();
        let params = store
            .ids()
            .map(|id| NamedTensor {
                name: store.name(id).to_string(),
                tensor: store.value(id).clone(),
            })
            .collect();
        Ok(Checkpoint {
            format_version: CHECKPOINT_VERSION,
            config: model.config().clone(),
            n_sensors: model.n_sensors(),
            sensor_names,
            seed,
            norm_stats,
            robust_stats,
            params,
        })
    }

    /// Reconstructs the model. Every stored tensor must match a parameter
    /// by name and shape, and every model parameter must be covered.
    pub fn build_model(&self) -> Result<Model> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (this build reads {})",
                self.format_version, CHECKPOINT_VERSION
            )));
        }
        let mut model = Model::new(self.config.clone(), self.n_sensors, self.seed)?;
        if self.params.len() != model.store().ids().count() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, model has {} parameters",
                self.params.len(),
                model.store().ids().count()
            )));
        }
        for p in &self.params {
            model.set_param(&p.name, p.tensor.clone())?;
        }
        Ok(model)
    }
}

/// Serializes a checkpoint to JSON on disk. Non-finite values are
/// rejected up front: they do not survive the format.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    for p in &ckpt.params {
        if p.tensor.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint(format!(
                "parameter '{}' contains non-finite values",
                p.name
            )));
        }
    }
    let text = serde_json::to_string(ckpt)
        .map_err(|e| Error::Checkpoint(format!("serialization failed: {}", e)))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("unreadable checkpoint {}: {}", path.display(), e)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_windows, split_train_val, RawSeries};

    fn quadratic_store(start: f64) -> ParamStore {
        let mut store = ParamStore::new();
        store
            .insert("x", Tensor::new(vec![1, 1], vec![start]).unwrap())
            .unwrap();
        store
    }

    /// d/dx (x - 3)^2 via a real tape so gradients flow the normal path.
    fn quadratic_grad(store: &mut ParamStore) {
        let mut tape = crate::tensor::Tape::new();
        let id = store.id_by_name("x").unwrap();
        let x = tape.param(store, id);
        let target = tape.input(&Tensor::new(vec![1, 1], vec![3.0]).unwrap());
        let loss = tape.mse(x, target).unwrap();
        tape.backward(loss, store).unwrap();
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut store = quadratic_store(10.0);
        let mut adam = Adam::new(&store);
        let cfg = TrainConfig::default();
        quadratic_grad(&mut store);
        adam.step(&mut store, &cfg).unwrap();
        let x = store.value(store.id_by_name("x").unwrap()).data()[0];
        // Bias correction makes the first step lr * g / (|g| + eps).
        assert!((x - (10.0 - 1e-3)).abs() < 1e-6, "{}", x);
    }

    #[test]
    fn adam_ignores_parameters_with_zero_gradient() {
        let mut store = quadratic_store(10.0);
        store
            .insert("idle", Tensor::new(vec![1, 1], vec![7.0]).unwrap())
            .unwrap();
        let mut adam = Adam::new(&store);
        quadratic_grad(&mut store);
        adam.step(&mut store, &TrainConfig::default()).unwrap();
        let idle = store.value(store.id_by_name("idle").unwrap()).data()[0];
        assert_eq!(idle, 7.0);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let mut store = quadratic_store(10.0);
        let mut adam = Adam::new(&store);
        let cfg = TrainConfig {
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        for _ in 0..2000 {
            quadratic_grad(&mut store);
            adam.step(&mut store, &cfg).unwrap();
            store.zero_grads();
        }
        let x = store.value(store.id_by_name("x").unwrap()).data()[0];
        assert!((x - 3.0).abs() < 1e-2, "{}", x);
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let mut store = quadratic_store(f64::MAX);
        let mut adam = Adam::new(&store);
        quadratic_grad(&mut store);
        let err = adam.step(&mut store, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Training(_)), "{:?}", err);
        assert!(err.to_string().contains('x'));
    }

    /// Sensor 1 follows sensor 0 with one step of lag, so a conditioned
    /// one-step predictor has real signal to learn.
    fn lagged_dataset(t: usize) -> (WindowedDataset, WindowedDataset) {
        let a: Vec<f64> = (0..t).map(|i| (i as f64 * 0.37).sin() * 0.5 + 0.5).collect();
        let mut b = vec![0.5];
        b.extend_from_slice(&a[..t - 1]);
        let series = RawSeries {
            sensor_names: vec!["a".to_string(), "b".to_string()],
            values: vec![a, b],
            labels: Some(vec![0; t]),
        };
        let ds = make_windows(&series, 3).unwrap();
        split_train_val(&ds, 0.25).unwrap()
    }

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            window: 3,
            top_k: 1,
            embed_dim: 4,
            hidden_dim: 8,
            n_update_layers: 1,
            n_readout_layers: 1,
        }
    }

    #[test]
    fn fit_learns_lagged_series_beyond_constant_baseline() {
        let (train, val) = lagged_dataset(220);
        let mut model = Model::new(tiny_config(), 2, 11).unwrap();
        let cfg = TrainConfig {
            max_epochs: 30,
            seed: 11,
            ..TrainConfig::default()
        };
        let report = fit(&mut model, &train, &val, &cfg).unwrap();
        assert!(report.aborted.is_none());
        let baseline = constant_baseline_val_loss(&train, &val).unwrap();
        assert!(
            report.best_val_loss < baseline,
            "val {} vs baseline {}",
            report.best_val_loss,
            baseline
        );
        let first = report.history.first().unwrap().train_loss;
        let last = report.history.last().unwrap().train_loss;
        assert!(last < first, "first {} last {}", first, last);
    }

    #[test]
    fn fit_with_zero_learning_rate_stops_by_patience() {
        // Nothing moves, so epoch 1 sets the best and every later epoch
        // fails to improve strictly; patience 2 stops after epoch 3.
        let (train, val) = lagged_dataset(80);
        let mut model = Model::new(tiny_config(), 2, 3).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e-300, // positive but moves nothing measurably
            max_epochs: 50,
            patience: 2,
            seed: 3,
            ..TrainConfig::default()
        };
        let report = fit(&mut model, &train, &val, &cfg).unwrap();
        assert_eq!(report.history.len(), 3);
        assert_eq!(report.best_epoch, 1);
    }

    #[test]
    fn fit_restores_best_epoch_weights() {
        let (train, val) = lagged_dataset(160);
        let mut model = Model::new(tiny_config(), 2, 7).unwrap();
        let cfg = TrainConfig {
            max_epochs: 12,
            seed: 7,
            ..TrainConfig::default()
        };
        let report = fit(&mut model, &train, &val, &cfg).unwrap();
        let loss_now = evaluate(&model, &val, cfg.batch_size).unwrap();
        assert_eq!(loss_now, report.best_val_loss);
        let min_hist = report
            .history
            .iter()
            .map(|e| e.val_loss)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(report.best_val_loss, min_hist);
    }

    #[test]
    fn fit_is_deterministic() {
        let (train, val) = lagged_dataset(120);
        let cfg = TrainConfig {
            max_epochs: 4,
            seed: 5,
            ..TrainConfig::default()
        };
        let run = || {
            let mut model = Model::new(tiny_config(), 2, 5).unwrap();
            let report = fit(&mut model, &train, &val, &cfg).unwrap();
            let weights: Vec<Vec<u64>> = model
                .store()
                .ids()
                .map(|id| model.store().value(id).data().iter().map(|v| v.to_bits()).collect())
                .collect();
            (report.history, weights)
        };
        let (h1, w1) = run();
        let (h2, w2) = run();
        assert_eq!(w1, w2);
        let key = |h: &[EpochStats]| -> Vec<(u64, u64)> {
            h.iter()
                .map(|e| (e.train_loss.to_bits(), e.val_loss.to_bits()))
                .collect()
        };
        assert_eq!(key(&h1), key(&h2));
    }

    #[test]
    fn fit_rejects_mismatched_window_shape() {
        let (train, val) = lagged_dataset(80);
        let mut config = tiny_config();
        config.window = 4;
        let mut model = Model::new(config, 2, 0).unwrap();
        let err = fit(&mut model, &train, &val, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn constant_baseline_is_mean_predictor() {
        let (train, val) = lagged_dataset(60);
        let baseline = constant_baseline_val_loss(&train, &val).unwrap();
        // Straight-line recomputation.
        let n = 2;
        let mut mean = vec![0.0; n];
        for t in &train.targets {
            for (m, v) in mean.iter_mut().zip(t) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= train.targets.len() as f64;
        }
        let mut want = 0.0;
        for t in &val.targets {
            for (m, v) in mean.iter().zip(t) {
                want += (v - m) * (v - m);
            }
        }
        want /= (val.targets.len() * n) as f64;
        assert!((baseline - want).abs() < 1e-15);
    }

    #[test]
    fn checkpoint_roundtrip_is_byte_identical_and_preserves_outputs() {
        let (train, val) = lagged_dataset(100);
        let mut model = Model::new(tiny_config(), 2, 9).unwrap();
        let cfg = TrainConfig {
            max_epochs: 2,
            seed: 9,
            ..TrainConfig::default()
        };
        fit(&mut model, &train, &val, &cfg).unwrap();

        let names = vec!["a".to_string(), "b".to_string()];
        let stats = RobustStats {
            center: vec![0.1, 0.2],
            scale: vec![1.0, 2.0],
        };
        let ckpt = Checkpoint::from_model(&model, names, 9, None, Some(stats)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_checkpoint(&ckpt, &path).unwrap();
        let bytes1 = std::fs::read(&path).unwrap();

        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, ckpt);
        let path2 = dir.path().join("model2.json");
        save_checkpoint(&loaded, &path2).unwrap();
        assert_eq!(bytes1, std::fs::read(&path2).unwrap());

        let rebuilt = loaded.build_model().unwrap();
        let before = model.forward(&val.inputs[0]).unwrap();
        let after = rebuilt.forward(&val.inputs[0]).unwrap();
        let bits = |v: &[f64]| -> Vec<u64> { v.iter().map(|x| x.to_bits()).collect() };
        assert_eq!(bits(&before), bits(&after));
    }

    #[test]
    fn checkpoint_load_rejects_wrong_shapes_and_garbage() {
        let model = Model::new(tiny_config(), 2, 1).unwrap();
        let mut ckpt =
            Checkpoint::from_model(&model, vec!["a".into(), "b".into()], 1, None, None).unwrap();
        ckpt.params[0].tensor = Tensor::zeros(vec![1, 1]);
        let err = ckpt.build_model().unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "{:?}", err);
        assert!(err.to_string().contains(&ckpt.params[0].name));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.json");
        std::fs::write(&path, "{\"format_version\":1,\"config\"").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn checkpoint_version_and_count_checks_are_loud() {
        let model = Model::new(tiny_config(), 2, 1).unwrap();
        let mut ckpt =
            Checkpoint::from_model(&model, vec!["a".into(), "b".into()], 1, None, None).unwrap();
        ckpt.format_version = 99;
        assert!(matches!(ckpt.build_model(), Err(Error::Checkpoint(_))));
        ckpt.format_version = CHECKPOINT_VERSION;
        ckpt.params.pop();
        assert!(matches!(ckpt.build_model(), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn checkpoint_save_rejects_non_finite_parameters() {
        let model = Model::new(tiny_config(), 2, 1).unwrap();
        let mut ckpt =
            Checkpoint::from_model(&model, vec!["a".into(), "b".into()], 1, None, None).unwrap();
        ckpt.params[0].tensor.data_mut()[0] = f64::NAN;
        assert!(matches!(
            save_checkpoint(&ckpt, Path::new("/tmp/never-written.json")),
            Err(Error::Checkpoint(_))
        ));
    }
}
