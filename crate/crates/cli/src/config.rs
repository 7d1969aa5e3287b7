//! Flat `key = value` run configuration.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use umaea_core::cmmi::ReconLoss;
use umaea_core::model::ModelConfig;
use umaea_core::trainer::TrainConfig;

/// Every accepted key with its description. Order is the order of
/// [`RunConfig::to_text`].
pub const KEYS: &[(&str, &str)] = &[
    ("data", "prepared dataset directory"),
    (
        "split",
        "image-availability split manifest; empty keeps the raw masks",
    ),
    ("out", "output directory for checkpoints, logs and reports"),
    (
        "seed",
        "global seed; sub-seeds are split+1, imputation+2, init+3, training+4",
    ),
    ("dim", "hidden size of every modality embedding"),
    ("d_r", "width of the relation bag-of-words features"),
    ("d_a", "width of the attribute bag-of-words features"),
    ("gat_layers", "graph attention layers"),
    ("gat_heads", "graph attention heads"),
    ("leaky_relu_slope", "negative slope inside graph attention"),
    ("mhca_heads", "cross-modal attention heads"),
    ("tau", "contrastive temperature"),
    (
        "detach_phi",
        "stop gradients through the pairwise confidence",
    ),
    ("recon_loss", "imagination reconstruction loss: mae or mse"),
    ("epochs_stage1", "epochs of stage 1"),
    (
        "epochs_stage2_1",
        "epochs of stage 2-1 (imagination module only)",
    ),
    ("epochs_stage2_2", "epochs of stage 2-2 (main model only)"),
    ("batch_size", "seed pairs per optimizer step"),
    (
        "micro_batch",
        "pairs per accumulated forward pass; 0 uses the whole batch",
    ),
    ("learning_rate", "peak learning rate"),
    ("weight_decay", "decoupled weight decay"),
    ("beta1", "first-moment decay"),
    ("beta2", "second-moment decay"),
    ("adam_eps", "optimizer epsilon"),
    (
        "warmup_fraction",
        "fraction of steps spent in linear warm-up",
    ),
    (
        "iterative",
        "expand the seed set with probation during stage 1",
    ),
    ("k_e", "epochs between proposal rounds"),
    (
        "k_s",
        "consecutive proposals needed for promotion; `inf` never promotes",
    ),
    (
        "early_stopping",
        "stop stage 1 when held-out seed Hits@1 stalls",
    ),
    (
        "holdout_fraction",
        "fraction of seeds held out for early stopping",
    ),
    ("patience", "stalled checks tolerated before stopping"),
    ("use_cmmi", "run the two imagination stages"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: PathBuf,
    pub split: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    /// `d_v` is taken from the prepared data.
    pub model: ModelConfig,
    /// `seed` is derived from the global seed.
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::from("data"),
            split: None,
            out: PathBuf::from("runs/default"),
            seed: 0,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

fn parse_bool(v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => bail!("expected a boolean, got `{v}`"),
    }
}

fn parse_num<T: std::str::FromStr>(v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| anyhow!("`{v}`: {e}"))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`", i + 1))?;
            cfg.set(key.trim(), value.trim())
                .with_context(|| format!("line {}", i + 1))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "data" => self.data = PathBuf::from(value),
            "split" => self.split = (!value.is_empty()).then(|| PathBuf::from(value)),
            "out" => self.out = PathBuf::from(value),
            "seed" => self.seed = parse_num(value)?,
            "dim" => {
                m.dim = parse_num(value)?;
                m.gat.dim = m.dim;
            }
            "d_r" => m.d_r = parse_num(value)?,
            "d_a" => m.d_a = parse_num(value)?,
            "gat_layers" => m.gat.layers = parse_num(value)?,
            "gat_heads" => m.gat.heads = parse_num(value)?,
            "leaky_relu_slope" => m.gat.leaky_relu_slope = parse_num(value)?,
            "mhca_heads" => m.mhca_heads = parse_num(value)?,
            "tau" => m.tau = parse_num(value)?,
            "detach_phi" => m.detach_phi = parse_bool(value)?,
            "recon_loss" => {
                m.recon_loss = match value {
                    "mae" => ReconLoss::Mae,
                    "mse" => ReconLoss::Mse,
                    _ => bail!("recon_loss must be `mae` or `mse`, got `{value}`"),
                }
            }
            "epochs_stage1" => t.epochs_stage1 = parse_num(value)?,
            "epochs_stage2_1" => t.epochs_stage2_1 = parse_num(value)?,
            "epochs_stage2_2" => t.epochs_stage2_2 = parse_num(value)?,
            "batch_size" => t.batch_size = parse_num(value)?,
            "micro_batch" => t.micro_batch = parse_num(value)?,
            "learning_rate" => t.learning_rate = parse_num(value)?,
            "weight_decay" => t.weight_decay = parse_num(value)?,
            "beta1" => t.beta1 = parse_num(value)?,
            "beta2" => t.beta2 = parse_num(value)?,
            "adam_eps" => t.adam_eps = parse_num(value)?,
            "warmup_fraction" => t.warmup_fraction = parse_num(value)?,
            "iterative" => t.iterative = parse_bool(value)?,
            "k_e" => t.k_e = parse_num(value)?,
            "k_s" => {
                t.k_s = match value {
                    "inf" | "none" => None,
                    v => Some(parse_num(v)?),
                }
            }
            "early_stopping" => t.early_stopping = parse_bool(value)?,
            "holdout_fraction" => t.holdout_fraction = parse_num(value)?,
            "patience" => t.patience = parse_num(value)?,
            "use_cmmi" => t.use_cmmi = parse_bool(value)?,
            _ => bail!("unknown key `{key}`"),
        }
        Ok(())
    }

    /// Applies `key=value` overrides.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| anyhow!("override `{o}` is not `key=value`"))?;
            self.set(k.trim(), v.trim())
                .with_context(|| format!("override `{o}`"))?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> String {
        let m = &self.model;
        let t = &self.train;
        match key {
            "data" => self.data.display().to_string(),
            "split" => self
                .split
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
            "out" => self.out.display().to_string(),
            "seed" => self.seed.to_string(),
            "dim" => m.dim.to_string(),
            "d_r" => m.d_r.to_string(),
            "d_a" => m.d_a.to_string(),
            "gat_layers" => m.gat.layers.to_string(),
            "gat_heads" => m.gat.heads.to_string(),
            "leaky_relu_slope" => m.gat.leaky_relu_slope.to_string(),
            "mhca_heads" => m.mhca_heads.to_string(),
            "tau" => m.tau.to_string(),
            "detach_phi" => m.detach_phi.to_string(),
            "recon_loss" => match m.recon_loss {
                ReconLoss::Mae => "mae".into(),
                ReconLoss::Mse => "mse".into(),
            },
            "epochs_stage1" => t.epochs_stage1.to_string(),
            "epochs_stage2_1" => t.epochs_stage2_1.to_string(),
            "epochs_stage2_2" => t.epochs_stage2_2.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "micro_batch" => t.micro_batch.to_string(),
            "learning_rate" => t.learning_rate.to_string(),
            "weight_decay" => t.weight_decay.to_string(),
            "beta1" => t.beta1.to_string(),
            "beta2" => t.beta2.to_string(),
            "adam_eps" => t.adam_eps.to_string(),
            "warmup_fraction" => t.warmup_fraction.to_string(),
            "iterative" => t.iterative.to_string(),
            "k_e" => t.k_e.to_string(),
            "k_s" => t.k_s.map_or("inf".into(), |k| k.to_string()),
            "early_stopping" => t.early_stopping.to_string(),
            "holdout_fraction" => t.holdout_fraction.to_string(),
            "patience" => t.patience.to_string(),
            "use_cmmi" => t.use_cmmi.to_string(),
            _ => unreachable!("unknown key `{key}`"),
        }
    }

    /// Renders every key, each preceded by its description.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (key, doc) in KEYS {
            out.push_str(&format!("# {doc}\n{key} = {}\n", self.get(key)));
        }
        out
    }

    pub fn init_seed(&self) -> u64 {
        self.seed.wrapping_add(3)
    }

    pub fn impute_seed(&self) -> u64 {
        self.seed.wrapping_add(2)
    }

    /// Training settings with the derived training seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed.wrapping_add(4),
            ..self.train.clone()
        }
    }
}
