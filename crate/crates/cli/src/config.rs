//! Run configuration: a flat JSON object, overridden key by key by flags.

use std::path::PathBuf;

use c3rec::data::SynthConfig;
use c3rec::eval::Target;
use c3rec::train::{Grid, TrainConfig};
use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Dataset directory.
    pub data: Option<PathBuf>,
    /// Output directory.
    pub out: PathBuf,
    /// Checkpoint to evaluate; defaults to `<out>/best.ckpt`.
    pub checkpoint: Option<PathBuf>,
    pub target: Target,
    pub drift_ratio: f64,
    pub drift_trials: usize,
    pub grid_thresholds: Vec<usize>,
    pub grid_mask_ratios: Vec<f64>,
    pub grid_betas: Vec<f64>,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let grid = Grid::default();
        Self {
            data: None,
            out: PathBuf::from("run"),
            checkpoint: None,
            target: Target::Test,
            drift_ratio: 0.8,
            drift_trials: 1,
            grid_thresholds: grid.aug_thresholds,
            grid_mask_ratios: grid.mask_ratios,
            grid_betas: grid.betas,
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn grid(&self) -> Grid {
        Grid {
            aug_thresholds: self.grid_thresholds.clone(),
            mask_ratios: self.grid_mask_ratios.clone(),
            betas: self.grid_betas.clone(),
        }
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out.join("best.ckpt"))
    }

    pub fn data_dir(&self) -> Result<&PathBuf, CliError> {
        self.data
            .as_ref()
            .ok_or_else(|| CliError::Usage("no dataset given (use --data or \"data\" in the config)".into()))
    }
}

/// Flags shared by the run subcommands. Each one mirrors a config key.
#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct RunFlags {
    /// Flat JSON config file; flags override its values.
    #[arg(short = 'c', long = "config")]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[arg(short = 'o', long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// Held-out item to rank: validation or test.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drift_ratio: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drift_trials: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_thresholds: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_mask_ratios: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_betas: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layers: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heads: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dropout: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub neg_per_pos: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task_mix: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub no_margin: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub no_contrastive: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_eval_neg: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub contrastive_pool_includes_item: Option<bool>,
    /// sequential or parallel.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub execution: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask_ratio: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aug_threshold: Option<usize>,
}

/// Flags of the `synth` subcommand; each mirrors a generator config key.
#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct SynthFlags {
    /// Flat JSON generator config; flags override its values.
    #[arg(short = 'c', long = "config")]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(short = 'o', long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[arg(long = "users")]
    #[serde(rename = "num_users", skip_serializing_if = "Option::is_none")]
    pub num_users: Option<usize>,
    #[arg(long = "items")]
    #[serde(rename = "num_items", skip_serializing_if = "Option::is_none")]
    pub num_items: Option<usize>,
    #[arg(long = "groups")]
    #[serde(rename = "num_groups", skip_serializing_if = "Option::is_none")]
    pub num_groups: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clusters: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_group_size: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_group_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_user_items: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_group_items: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cross_affinity: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub member_leak: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub taste_strength: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub popularity_skew: Option<f64>,
}

fn read_object(path: &PathBuf) -> Result<Map<String, Value>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(CliError::Usage(format!("{}: config must be a JSON object", path.display()))),
        Err(e) => Err(CliError::Usage(format!("{}: {e}", path.display()))),
    }
}

/// Loads `file` (if any), checks its keys against `T`'s, applies `flags`
/// on top and deserializes.
fn resolve<T, F>(file: Option<&PathBuf>, flags: &F) -> Result<T, CliError>
where
    T: Default + Serialize + for<'de> Deserialize<'de>,
    F: Serialize,
{
    let Value::Object(known) = serde_json::to_value(T::default()).expect("config serializes") else {
        unreachable!("configs are JSON objects")
    };
    let mut merged = match file {
        Some(p) => read_object(p)?,
        None => Map::new(),
    };
    if let Some(k) = merged.keys().find(|k| !known.contains_key(*k)) {
        return Err(CliError::Usage(format!("unknown config key \"{k}\"")));
    }
    if let Value::Object(over) = serde_json::to_value(flags).expect("flags serialize") {
        merged.extend(over);
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Usage(format!("config: {e}")))
}

pub fn resolve_run(flags: &RunFlags) -> Result<RunConfig, CliError> {
    let cfg: RunConfig = resolve(flags.config.as_ref(), flags)?;
    cfg.train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

pub fn resolve_synth(flags: &SynthFlags) -> Result<SynthConfig, CliError> {
    resolve(flags.config.as_ref(), flags)
}
