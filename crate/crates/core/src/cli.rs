//! Batch command-line interface.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or
//! file error, 3 runtime or numeric error.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{PartialConfig, RunConfig};
use crate::error::Result;
use crate::pipeline;

#[derive(Debug, Parser)]
#[command(
    name = "ecnu-gnn",
    version,
    about = "Graph anomaly detector for multivariate sensor streams"
)]
pub struct Cli {
    /// TOML config file; command-line flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Base random seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Hyperparameter profile: swat, wadi, psm, or synth.
    #[arg(long, global = true, value_name = "NAME")]
    profile: Option<String>,

    #[command(subcommand)]
    command: Command,
}

/// Optional knobs shared by the pipeline commands; unset flags inherit
/// from the config file, then the profile, then built-in defaults.
#[derive(Debug, Default, Args)]
struct TuningFlags {
    /// Steps of history fed to the model per prediction.
    #[arg(long, value_name = "W")]
    window: Option<usize>,

    /// Neighbors kept per node in the learned graph.
    #[arg(long, value_name = "K")]
    top_k: Option<usize>,

    /// Node embedding width.
    #[arg(long, value_name = "D")]
    embed_dim: Option<usize>,

    /// Hidden layer width in the update and readout networks.
    #[arg(long, value_name = "D")]
    hidden_dim: Option<usize>,

    /// Hidden layers in the edge-conditional update network.
    #[arg(long, value_name = "N")]
    update_layers: Option<usize>,

    /// Hidden layers in the readout network.
    #[arg(long, value_name = "N")]
    readout_layers: Option<usize>,

    #[arg(long, value_name = "LR")]
    learning_rate: Option<f64>,

    #[arg(long, value_name = "N")]
    max_epochs: Option<usize>,

    /// Epochs without validation improvement before stopping.
    #[arg(long, value_name = "N")]
    patience: Option<usize>,

    #[arg(long, value_name = "B")]
    batch_size: Option<usize>,

    /// Rebuild the graph once per epoch instead of every step.
    #[arg(long)]
    freeze_graph_per_epoch: bool,

    /// Fraction of training windows held out for validation.
    #[arg(long, value_name = "F")]
    val_fraction: Option<f64>,

    /// Initial rows dropped before any other preprocessing.
    #[arg(long, value_name = "N")]
    trim_head: Option<usize>,

    /// Median-downsampling factor (1 keeps every row).
    #[arg(long, value_name = "N")]
    downsample: Option<usize>,

    /// Trailing moving-average width over anomaly scores.
    #[arg(long, value_name = "M")]
    sma_window: Option<usize>,

    /// Candidate thresholds tried during the grid search.
    #[arg(long, value_name = "N")]
    grid_size: Option<usize>,

    /// Fixed anomaly threshold (required when the data has no labels).
    #[arg(long, value_name = "T")]
    threshold: Option<f64>,

    /// Training repetitions per sweep value.
    #[arg(long, value_name = "R")]
    repeats: Option<usize>,
}

impl TuningFlags {
    fn into_partial(self, seed: Option<u64>, profile: Option<String>) -> PartialConfig {
        PartialConfig {
            profile,
            window: self.window,
            top_k: self.top_k,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            n_update_layers: self.update_layers,
            n_readout_layers: self.readout_layers,
            learning_rate: self.learning_rate,
            beta1: None,
            beta2: None,
            epsilon: None,
            max_epochs: self.max_epochs,
            patience: self.patience,
            batch_size: self.batch_size,
            freeze_graph_per_epoch: if self.freeze_graph_per_epoch {
                Some(true)
            } else {
                None
            },
            val_fraction: self.val_fraction,
            seed,
            trim_head: self.trim_head,
            downsample: self.downsample,
            sma_window: self.sma_window,
            grid_size: self.grid_size,
            threshold: self.threshold,
            sweep_repeats: self.repeats,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Clean and scale a raw CSV into a processed one plus a stats sidecar.
    Preprocess {
        /// Raw input CSV.
        input: PathBuf,
        /// Directory for processed.csv, sidecar.json, and the manifest.
        #[arg(long, short, default_value = "out", value_name = "DIR")]
        out_dir: PathBuf,
        /// Scale with statistics from this sidecar instead of fitting new ones.
        #[arg(long, value_name = "PATH")]
        stats_from: Option<PathBuf>,
        #[command(flatten)]
        tuning: TuningFlags,
    },
    /// Train a model and write a checkpoint plus a per-epoch metrics log.
    Train {
        /// Processed training CSV.
        input: PathBuf,
        #[arg(long, short, default_value = "out", value_name = "DIR")]
        out_dir: PathBuf,
        /// Sidecar whose scaling statistics get embedded in the checkpoint.
        #[arg(long, value_name = "PATH")]
        sidecar: Option<PathBuf>,
        #[command(flatten)]
        tuning: TuningFlags,
    },
    /// Score a test CSV against a checkpoint and report detections.
    Detect {
        /// Trained checkpoint JSON.
        checkpoint: PathBuf,
        /// Processed test CSV; a label column enables the threshold search.
        input: PathBuf,
        #[arg(long, short, default_value = "out", value_name = "DIR")]
        out_dir: PathBuf,
        /// Also write one deviation column per sensor into scores.csv.
        #[arg(long)]
        per_sensor: bool,
        #[command(flatten)]
        tuning: TuningFlags,
    },
    /// Attribute one sensor's prediction at one timestep to its inputs.
    Explain {
        /// Trained checkpoint JSON.
        checkpoint: PathBuf,
        /// Processed test CSV.
        input: PathBuf,
        /// Timestep to explain (row index into the CSV).
        #[arg(long, value_name = "T")]
        time: usize,
        /// Sensor name or index whose prediction gets explained.
        #[arg(long, value_name = "SENSOR")]
        sensor: String,
        /// Output relevance graph file.
        #[arg(long, short, default_value = "relevance.txt", value_name = "PATH")]
        out: PathBuf,
    },
    /// Train and score once per hyperparameter value; tabulate F1.
    Sweep {
        /// Processed training CSV.
        train: PathBuf,
        /// Processed, labeled test CSV.
        test: PathBuf,
        /// Hyperparameter to vary: window or topk.
        #[arg(long, value_name = "NAME")]
        parameter: String,
        /// Values to try.
        #[arg(long, value_name = "V,V,...", value_delimiter = ',', required = true)]
        values: Vec<usize>,
        #[arg(long, short, default_value = "out", value_name = "DIR")]
        out_dir: PathBuf,
        #[command(flatten)]
        tuning: TuningFlags,
    },
    /// Generate a synthetic labeled dataset from a JSON spec.
    Synth {
        /// Generation spec (JSON).
        spec: PathBuf,
        #[arg(long, short, default_value = "out", value_name = "DIR")]
        out_dir: PathBuf,
    },
}

/// Parses arguments, runs the selected command, and returns the process
/// exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version go to stdout with success; real usage
            // errors are exit code 1.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e);
            e.exit_code()
        }
    }
}

fn resolve(
    config: Option<&PathBuf>,
    flags: PartialConfig,
) -> Result<RunConfig> {
    let file = match config {
        Some(path) => Some(PartialConfig::from_toml_file(path)?),
        None => None,
    };
    RunConfig::resolve(file, flags)
}

fn execute(cli: Cli) -> Result<()> {
    let Cli {
        config,
        seed,
        profile,
        command,
    } = cli;
    match command {
        Command::Preprocess {
            input,
            out_dir,
            stats_from,
            tuning,
        } => {
            let cfg = resolve(config.as_ref(), tuning.into_partial(seed, profile))?;
            let out = pipeline::cmd_preprocess(&input, stats_from.as_deref(), &cfg, &out_dir)?;
            println!("wrote {}", out.display());
        }
        Command::Train {
            input,
            out_dir,
            sidecar,
            tuning,
        } => {
            let cfg = resolve(config.as_ref(), tuning.into_partial(seed, profile))?;
            let outcome = pipeline::cmd_train(&input, sidecar.as_deref(), &cfg, &out_dir)?;
            let r = &outcome.report;
            println!(
                "trained {} epochs on {} windows ({} validation); best epoch {} with val loss {:.6}",
                r.history.len(),
                outcome.n_windows_train,
                outcome.n_windows_val,
                r.best_epoch,
                r.best_val_loss
            );
            if let Some(reason) = &r.aborted {
                println!("stopped early: {}", reason);
            }
            println!("wrote {}", outcome.checkpoint_path.display());
        }
        Command::Detect {
            checkpoint,
            input,
            out_dir,
            per_sensor,
            tuning,
        } => {
            let cfg = resolve(config.as_ref(), tuning.into_partial(seed, profile))?;
            let outcome =
                pipeline::cmd_detect(&checkpoint, &input, &cfg, &out_dir, per_sensor)?;
            let r = &outcome.report;
            println!(
                "threshold {:.6}: precision {:.4} recall {:.4} f1 {:.4} over {} windows",
                r.threshold, r.precision, r.recall, r.f1, outcome.n_windows
            );
            if let Some(w) = &r.warning {
                println!("warning: {}", w);
            }
            println!("wrote {}", outcome.scores_path.display());
        }
        Command::Explain {
            checkpoint,
            input,
            time,
            sensor,
            out,
        } => {
            let path = pipeline::cmd_explain(&checkpoint, &input, time, &sensor, &out)?;
            println!("wrote {}", path.display());
        }
        Command::Sweep {
            train,
            test,
            parameter,
            values,
            out_dir,
            tuning,
        } => {
            let cfg = resolve(config.as_ref(), tuning.into_partial(seed, profile))?;
            let param = pipeline::SweepParam::parse(&parameter)?;
            let rows = pipeline::cmd_sweep(&train, &test, param, &values, &cfg, &out_dir)?;
            for row in &rows {
                println!(
                    "{} = {}: mean f1 {:.4} (stddev {:.4}, {} runs)",
                    row.parameter,
                    row.value,
                    row.mean_f1,
                    row.stddev_f1,
                    row.f1s.len()
                );
            }
            println!("wrote {}", out_dir.join("sweep.csv").display());
        }
        Command::Synth { spec, out_dir } => {
            let cfg = resolve(config.as_ref(), PartialConfig {
                seed,
                profile,
                ..PartialConfig::default()
            })?;
            pipeline::cmd_synth(&spec, &cfg, &out_dir)?;
            println!(
                "wrote train.csv, test.csv, truth_edges.txt under {}",
                out_dir.display()
            );
        }
    }
    Ok(())
}
