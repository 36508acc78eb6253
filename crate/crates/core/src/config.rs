//! Run configuration: defaults, named profiles, config file, CLI flags.
//!
//! Every knob resolves through four layers, weakest first: built-in
//! defaults, a named profile (architecture presets for the datasets the
//! detector was tuned on), a TOML config file, and command-line flags.
//! The resolved configuration hashes into the run manifest so an
//! artifact directory records exactly what produced it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::PreprocessOptions;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

/// A partially specified configuration; `None` means "inherit".
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartialConfig {
    pub profile: Option<String>,
    pub window: Option<usize>,
    pub top_k: Option<usize>,
    pub embed_dim: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub n_update_layers: Option<usize>,
    pub n_readout_layers: Option<usize>,
    pub learning_rate: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub epsilon: Option<f64>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub batch_size: Option<usize>,
    pub freeze_graph_per_epoch: Option<bool>,
    pub val_fraction: Option<f64>,
    pub seed: Option<u64>,
    pub trim_head: Option<usize>,
    pub downsample: Option<usize>,
    pub sma_window: Option<usize>,
    pub grid_size: Option<usize>,
    pub threshold: Option<f64>,
    pub sweep_repeats: Option<usize>,
}

impl PartialConfig {
    pub fn from_toml_file(path: &Path) -> Result<PartialConfig> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!(
            "config file {}: {}",
            path.display(),
            e
        )))
    }

    /// Fills every unset field from `base`.
    fn or(self, base: PartialConfig) -> PartialConfig {
        PartialConfig {
            profile: self.profile.or(base.profile),
            window: self.window.or(base.window),
            top_k: self.top_k.or(base.top_k),
            embed_dim: self.embed_dim.or(base.embed_dim),
            hidden_dim: self.hidden_dim.or(base.hidden_dim),
            n_update_layers: self.n_update_layers.or(base.n_update_layers),
            n_readout_layers: self.n_readout_layers.or(base.n_readout_layers),
            learning_rate: self.learning_rate.or(base.learning_rate),
            beta1: self.beta1.or(base.beta1),
            beta2: self.beta2.or(base.beta2),
            epsilon: self.epsilon.or(base.epsilon),
            max_epochs: self.max_epochs.or(base.max_epochs),
            patience: self.patience.or(base.patience),
            batch_size: self.batch_size.or(base.batch_size),
            freeze_graph_per_epoch: self.freeze_graph_per_epoch.or(base.freeze_graph_per_epoch),
            val_fraction: self.val_fraction.or(base.val_fraction),
            seed: self.seed.or(base.seed),
            trim_head: self.trim_head.or(base.trim_head),
            downsample: self.downsample.or(base.downsample),
            sma_window: self.sma_window.or(base.sma_window),
            grid_size: self.grid_size.or(base.grid_size),
            threshold: self.threshold.or(base.threshold),
            sweep_repeats: self.sweep_repeats.or(base.sweep_repeats),
        }
    }
}

/// Architecture presets per dataset family.
pub fn profile(name: &str) -> Result<PartialConfig> {
    let (window, top_k, embed_dim, hidden_dim, n_update, n_readout) = match name {
        "swat" => (5, 30, 128, 256, 4, 4),
        "wadi" => (5, 30, 128, 256, 3, 4),
        "psm" => (3, 25, 128, 128, 1, 2),
        "synth" => (5, 5, 8, 32, 2, 2),
        other => {
            return Err(Error::Config(format!(
                "unknown profile '{}' (expected swat, wadi, psm, or synth)",
                other
            )))
        }
    };
    Ok(PartialConfig {
        window: Some(window),
        top_k: Some(top_k),
        embed_dim: Some(embed_dim),
        hidden_dim: Some(hidden_dim),
        n_update_layers: Some(n_update),
        n_readout_layers: Some(n_readout),
        ..PartialConfig::default()
    })
}

/// Fully resolved run settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub preprocess: PreprocessOptions,
    pub val_fraction: f64,
    pub sma_window: usize,
    pub grid_size: usize,
    /// Fixed decision threshold for detection without labels.
    pub threshold: Option<f64>,
    pub seed: u64,
    pub sweep_repeats: usize,
}

impl RunConfig {
    /// Applies precedence flags > file > profile > defaults. The profile
    /// is taken from the flags first, then the file.
    pub fn resolve(file: Option<PartialConfig>, flags: PartialConfig) -> Result<RunConfig> {
        let file = file.unwrap_or_default();
        let profile_name = flags
            .profile
            .clone()
            .or_else(|| file.profile.clone())
            .unwrap_or_else(|| "synth".to_string());
        let preset = profile(&profile_name)?;
        let merged = flags.or(file).or(preset);

        let seed = merged.seed.unwrap_or(0);
        let cfg = RunConfig {
            model: ModelConfig {
                window: merged.window.unwrap_or(5),
                top_k: merged.top_k.unwrap_or(5),
                embed_dim: merged.embed_dim.unwrap_or(8),
                hidden_dim: merged.hidden_dim.unwrap_or(32),
                n_update_layers: merged.n_update_layers.unwrap_or(2),
                n_readout_layers: merged.n_readout_layers.unwrap_or(2),
            },
            train: TrainConfig {
                learning_rate: merged.learning_rate.unwrap_or(1e-3),
                beta1: merged.beta1.unwrap_or(0.9),
                beta2: merged.beta2.unwrap_or(0.99),
                epsilon: merged.epsilon.unwrap_or(1e-8),
                max_epochs: merged.max_epochs.unwrap_or(100),
                patience: merged.patience.unwrap_or(5),
                batch_size: merged.batch_size.unwrap_or(32),
                seed,
                freeze_graph_per_epoch: merged.freeze_graph_per_epoch.unwrap_or(false),
            },
            preprocess: PreprocessOptions {
                trim_head: merged.trim_head.unwrap_or(0),
                downsample: merged.downsample.unwrap_or(1),
            },
            val_fraction: merged.val_fraction.unwrap_or(0.1),
            sma_window: merged.sma_window.unwrap_or(3),
            grid_size: merged.grid_size.unwrap_or(400),
            threshold: merged.threshold,
            seed,
            sweep_repeats: merged.sweep_repeats.unwrap_or(3),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.preprocess.downsample == 0 {
            return Err(Error::Config("downsample factor must be positive".to_string()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!(
                "val_fraction must be in (0, 1), got {}",
                self.val_fraction
            )));
        }
        if self.sma_window == 0 {
            return Err(Error::Config("sma_window must be positive".to_string()));
        }
        if self.grid_size < 2 {
            return Err(Error::Config("grid_size must be at least 2".to_string()));
        }
        if self.sweep_repeats == 0 {
            return Err(Error::Config("sweep_repeats must be positive".to_string()));
        }
        // Model shape limits that need n_sensors are checked at model
        // construction; the cheap ones fail fast here.
        if self.model.window == 0
            || self.model.top_k == 0
            || self.model.embed_dim == 0
            || self.model.hidden_dim == 0
            || self.model.n_update_layers == 0
            || self.model.n_readout_layers == 0
        {
            return Err(Error::Config("model dimensions must all be positive".to_string()));
        }
        Ok(())
    }

    /// Hash of the canonical JSON form, recorded in run manifests.
    pub fn sha256(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{:02x}", b)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve_to_the_synth_profile() {
        let cfg = RunConfig::resolve(None, PartialConfig::default()).unwrap();
        assert_eq!(cfg.model.window, 5);
        assert_eq!(cfg.model.top_k, 5);
        assert_eq!(cfg.model.embed_dim, 8);
        assert_eq!(cfg.model.hidden_dim, 32);
        assert_eq!(cfg.train.learning_rate, 1e-3);
        assert_eq!(cfg.train.max_epochs, 100);
        assert_eq!(cfg.train.patience, 5);
        assert_eq!(cfg.sma_window, 3);
        assert_eq!(cfg.grid_size, 400);
    }

    #[test]
    fn named_profiles_set_architecture() {
        let flags = PartialConfig {
            profile: Some("swat".to_string()),
            ..PartialConfig::default()
        };
        let cfg = RunConfig::resolve(None, flags).unwrap();
        assert_eq!(
            (
                cfg.model.window,
                cfg.model.top_k,
                cfg.model.embed_dim,
                cfg.model.hidden_dim,
                cfg.model.n_update_layers,
                cfg.model.n_readout_layers
            ),
            (5, 30, 128, 256, 4, 4)
        );
        let psm = RunConfig::resolve(
            None,
            PartialConfig {
                profile: Some("psm".to_string()),
                ..PartialConfig::default()
            },
        )
        .unwrap();
        assert_eq!((psm.model.window, psm.model.top_k), (3, 25));
        assert!(profile("nope").is_err());
    }

    #[test]
    fn precedence_is_flags_over_file_over_profile() {
        let file = PartialConfig {
            profile: Some("wadi".to_string()),
            window: Some(7),
            batch_size: Some(16),
            ..PartialConfig::default()
        };
        let flags = PartialConfig {
            window: Some(9),
            ..PartialConfig::default()
        };
        let cfg = RunConfig::resolve(Some(file), flags).unwrap();
        assert_eq!(cfg.model.window, 9); // flag wins
        assert_eq!(cfg.model.top_k, 30); // wadi profile
        assert_eq!(cfg.model.n_update_layers, 3); // wadi profile
        assert_eq!(cfg.train.batch_size, 16); // file wins over default
    }

    #[test]
    fn toml_file_parses_and_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "profile = \"psm\"\nseed = 7\nsma_window = 5\n").unwrap();
        let partial = PartialConfig::from_toml_file(&path).unwrap();
        let cfg = RunConfig::resolve(Some(partial), PartialConfig::default()).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.sma_window, 5);
        assert_eq!(cfg.model.top_k, 25);

        std::fs::write(&path, "not_a_knob = 1\n").unwrap();
        assert!(matches!(
            PartialConfig::from_toml_file(&path),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn validation_rejects_degenerate_settings() {
        let bad = |f: fn(&mut PartialConfig)| {
            let mut p = PartialConfig::default();
            f(&mut p);
            RunConfig::resolve(None, p)
        };
        assert!(bad(|p| p.val_fraction = Some(0.0)).is_err());
        assert!(bad(|p| p.val_fraction = Some(1.0)).is_err());
        assert!(bad(|p| p.sma_window = Some(0)).is_err());
        assert!(bad(|p| p.grid_size = Some(1)).is_err());
        assert!(bad(|p| p.learning_rate = Some(-1.0)).is_err());
        assert!(bad(|p| p.window = Some(0)).is_err());
        assert!(bad(|p| p.downsample = Some(0)).is_err());
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let a = RunConfig::resolve(None, PartialConfig::default()).unwrap();
        let b = RunConfig::resolve(None, PartialConfig::default()).unwrap();
        assert_eq!(a.sha256(), b.sha256());
        assert_eq!(a.sha256().len(), 64);
        let c = RunConfig::resolve(
            None,
            PartialConfig {
                seed: Some(1),
                ..PartialConfig::default()
            },
        )
        .unwrap();
        assert_ne!(a.sha256(), c.sha256());
    }
}
