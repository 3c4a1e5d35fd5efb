//! JSON run configuration for `train`. Unknown keys are rejected; flags
//! `--seed` and `--rounds` override the corresponding fields.

use serde::Deserialize;

use gramet::dataset::{gen_blobs, load_csv, Dataset};
use gramet::manifold::RiemannianOptConfig;
use gramet::net::SgdConfig;
use gramet::trainer::{TrainConfig, TrainMode};

use crate::Failure;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum DataSpec {
    /// Load from a CSV file.
    Csv { path: String },
    /// Generate Gaussian blobs.
    Synth {
        seed: u64,
        classes: usize,
        per_class: usize,
        dim: usize,
        spread: f64,
        label_fraction: f64,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSpec {
    /// Hidden layer widths (may be empty for a single linear layer).
    #[serde(default)]
    pub hidden: Vec<usize>,
    /// Output dimension d.
    pub embed_dim: usize,
}

fn default_gamma() -> f64 {
    0.99
}
fn default_k() -> usize {
    10
}
fn default_alpha() -> f64 {
    40.0
}
fn default_t_b() -> usize {
    100
}
fn default_n_p() -> usize {
    9000
}
fn default_rounds() -> usize {
    5
}
fn default_epochs() -> usize {
    10
}
fn default_eval_ks() -> Vec<usize> {
    vec![1, 2, 4, 8]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSpec,
    pub net: NetSpec,
    pub metric_rank: usize,
    /// Per-class fraction held out for validation (omit to disable).
    #[serde(default)]
    pub val_fraction: Option<f64>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_alpha")]
    pub alpha_deg: f64,
    #[serde(default = "default_t_b")]
    pub t_b: usize,
    #[serde(default = "default_n_p")]
    pub n_p: usize,
    #[serde(default = "default_rounds")]
    pub outer_rounds: usize,
    #[serde(default = "default_epochs")]
    pub epochs_per_partition: usize,
    #[serde(default)]
    pub riemann: RiemannianOptConfig,
    #[serde(default)]
    pub sgd: SgdConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: TrainMode,
    #[serde(default = "default_eval_ks")]
    pub eval_ks: Vec<usize>,
}

impl RunConfig {
    /// Field-level validation beyond what serde enforces.
    pub fn validate(&self) -> Result<(), String> {
        if self.metric_rank == 0 || self.metric_rank > self.net.embed_dim {
            return Err(format!(
                "metric_rank: must be in 1..={} (embed_dim), got {}",
                self.net.embed_dim, self.metric_rank
            ));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err("gamma: must be in (0, 1)".to_string());
        }
        if !(self.alpha_deg > 0.0 && self.alpha_deg < 90.0) {
            return Err("alpha_deg: must be in (0, 90)".to_string());
        }
        if self.k < 2 {
            return Err("k: must be >= 2".to_string());
        }
        if self.t_b < 1 {
            return Err("t_b: must be >= 1".to_string());
        }
        if let Some(f) = self.val_fraction {
            if !(f > 0.0 && f < 1.0) {
                return Err("val_fraction: must be in (0, 1)".to_string());
            }
        }
        if self.eval_ks.is_empty() || self.eval_ks.contains(&0) {
            return Err("eval_ks: need at least one K >= 1".to_string());
        }
        Ok(())
    }

    pub fn load_data(&self) -> Result<Dataset, Failure> {
        match &self.data {
            DataSpec::Csv { path } => Ok(load_csv(path)?),
            DataSpec::Synth {
                seed,
                classes,
                per_class,
                dim,
                spread,
                label_fraction,
            } => Ok(gen_blobs(
                *seed,
                *classes,
                *per_class,
                *dim,
                *spread,
                *label_fraction,
            )?),
        }
    }

    /// Layer widths including the data dimension.
    pub fn net_widths(&self, ds: &Dataset) -> Vec<usize> {
        let mut widths = vec![ds.dim()];
        widths.extend_from_slice(&self.net.hidden);
        widths.push(self.net.embed_dim);
        widths
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            gamma: self.gamma,
            k: self.k,
            alpha_deg: self.alpha_deg,
            metric_rank: self.metric_rank,
            t_b: self.t_b,
            n_p: self.n_p,
            outer_rounds: self.outer_rounds,
            epochs_per_partition: self.epochs_per_partition,
            riemann: self.riemann,
            sgd: self.sgd,
            seed: self.seed,
            mode: self.mode,
            eval_ks: self.eval_ks.clone(),
        }
    }
}
