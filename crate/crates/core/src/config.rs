//! Flat `key = value` configuration.
//!
//! One assignment per line; `#` starts a comment; blank lines are ignored.
//! Unknown keys are rejected. [`Config`]'s `Display` output is itself a valid
//! configuration file that reproduces the same values.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::gabor::OrientationSpacing;
use crate::model::{FusionMode, NetworkConfig, PriorMode};
use crate::nonlocal::{CoreKind, MsfmFusion};
use crate::optim::StopRule;
use crate::uarm::ProbNorm;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub patch_size: usize,
    pub num_patches: usize,
    pub batch_size: usize,
    /// Largest number of patches per forward pass; gradients of a batch
    /// are accumulated over micro-batches.
    pub micro_batch: usize,
    pub epochs: usize,
    pub early_stop_patience: usize,
    pub early_stop_rule: StopRule,
    pub lr: f64,
    pub lr_min: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub val_fraction: f64,
    pub tau_start: f64,
    pub tau_end: f64,
    pub tau_anneal_epochs: usize,
    /// Hard cap on optimizer steps; 0 means none.
    pub max_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            patch_size: 48,
            num_patches: 15000,
            batch_size: 32,
            micro_batch: 8,
            epochs: 50,
            early_stop_patience: 8,
            early_stop_rule: StopRule::Patience,
            lr: 1e-3,
            lr_min: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            val_fraction: 0.1,
            tau_start: 30.0,
            tau_end: 1.0,
            tau_anneal_epochs: 10,
            max_steps: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocessConfig {
    pub gamma: f64,
    pub clahe_clip: f64,
    pub clahe_tiles: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig { gamma: 1.2, clahe_clip: 2.0, clahe_tiles: 8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferConfig {
    pub stride: usize,
    pub threshold: f64,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig { stride: 24, threshold: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Config {
    pub seed: u64,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub preprocess: PreprocessConfig,
    pub infer: InferConfig,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

fn parse_enum<T>(key: &str, value: &str, table: &[(&str, T)]) -> Result<T>
where
    T: Copy,
{
    table.iter().find(|(n, _)| *n == value).map(|(_, v)| *v).ok_or_else(|| {
        let names: Vec<&str> = table.iter().map(|(n, _)| *n).collect();
        Error::Config(format!("invalid value `{value}` for `{key}`; expected one of {}", names.join(", ")))
    })
}

const SPACING: &[(&str, OrientationSpacing)] =
    &[("uniform", OrientationSpacing::Uniform), ("literal", OrientationSpacing::Literal)];
const PRIOR: &[(&str, PriorMode)] = &[("concat", PriorMode::Concat), ("add", PriorMode::Add)];
const PROB: &[(&str, ProbNorm)] = &[("sigmoid", ProbNorm::Sigmoid), ("spatial_softmax", ProbNorm::SpatialSoftmax)];
const MSFM_FUSION: &[(&str, MsfmFusion)] = &[("residual", MsfmFusion::Residual), ("gate", MsfmFusion::Gate)];
const STOP: &[(&str, StopRule)] = &[("patience", StopRule::Patience), ("hard_stop", StopRule::HardStop)];

fn name_of<T: PartialEq + Copy>(table: &[(&'static str, T)], v: T) -> &'static str {
    table.iter().find(|(_, x)| *x == v).map(|(n, _)| *n).expect("every variant is listed")
}

/// Splits configuration text into `(key, value, line)` triples.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String, usize)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(Error::Config(format!("line {}: empty key or value", i + 1)));
        }
        out.push((k.to_string(), v.to_string(), i + 1));
    }
    Ok(out)
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Config::default();
        for (k, v, line) in parse_pairs(text)? {
            c.set(&k, &v).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {line}: {m}")),
                other => other,
            })?;
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Sets one key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let n = &mut self.network;
        let t = &mut self.train;
        let p = &mut self.preprocess;
        match key {
            "seed" => self.seed = parse(key, value)?,
            "levels" => n.levels = parse(key, value)?,
            "base_channels" => n.base_channels = parse(key, value)?,
            "num_orientations" => n.num_orientations = parse(key, value)?,
            "use_dcoa" => n.use_dcoa = parse_bool(key, value)?,
            "use_safm" => n.use_safm = parse_bool(key, value)?,
            "use_glfm" => n.use_glfm = parse_bool(key, value)?,
            "use_msfm_ocednl" => n.use_msfm_ocednl = parse_bool(key, value)?,
            "use_uarm" => n.use_uarm = parse_bool(key, value)?,
            "fusion_mode" => n.fusion_mode = value.parse::<FusionMode>().map_err(Error::Config)?,
            "msfm_core" => n.msfm_core = value.parse::<CoreKind>().map_err(Error::Config)?,
            "msfm_width" => n.msfm_width = parse(key, value)?,
            "msfm_fusion" => n.msfm_fusion = parse_enum(key, value, MSFM_FUSION)?,
            "orientation_spacing" => n.orientation_spacing = parse_enum(key, value, SPACING)?,
            "orientation_prior" => n.orientation_prior = parse_enum(key, value, PRIOR)?,
            "prob_norm" => n.prob_norm = parse_enum(key, value, PROB)?,
            "patch_size" => t.patch_size = parse(key, value)?,
            "num_patches" => t.num_patches = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "micro_batch" => t.micro_batch = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "early_stop_patience" => t.early_stop_patience = parse(key, value)?,
            "early_stop_rule" => t.early_stop_rule = parse_enum(key, value, STOP)?,
            "lr" => t.lr = parse(key, value)?,
            "lr_min" => t.lr_min = parse(key, value)?,
            "beta1" => t.beta1 = parse(key, value)?,
            "beta2" => t.beta2 = parse(key, value)?,
            "adam_eps" => t.adam_eps = parse(key, value)?,
            "val_fraction" => t.val_fraction = parse(key, value)?,
            "tau_start" => t.tau_start = parse(key, value)?,
            "tau_end" => t.tau_end = parse(key, value)?,
            "tau_anneal_epochs" => t.tau_anneal_epochs = parse(key, value)?,
            "max_steps" => t.max_steps = parse(key, value)?,
            "gamma" => p.gamma = parse(key, value)?,
            "clahe_clip" => p.clahe_clip = parse(key, value)?,
            "clahe_tiles" => p.clahe_tiles = parse(key, value)?,
            "stride" => self.infer.stride = parse(key, value)?,
            "threshold" => self.infer.threshold = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Like [`Config::set`], except that `fusion_mode` also sets the module
    /// flags the mode implies.
    pub fn ablate(&mut self, key: &str, value: &str) -> Result<()> {
        if key == "fusion_mode" {
            let mode = value.parse::<FusionMode>().map_err(Error::Config)?;
            self.network.set_fusion_mode(mode);
            return Ok(());
        }
        self.set(key, value)
    }

    /// Checks ranges and flag combinations.
    pub fn validate(&self) -> Result<()> {
        self.network.resolve()?;
        let t = &self.train;
        let positive = [
            ("patch_size", t.patch_size),
            ("num_patches", t.num_patches),
            ("batch_size", t.batch_size),
            ("micro_batch", t.micro_batch),
            ("epochs", t.epochs),
            ("early_stop_patience", t.early_stop_patience),
            ("clahe_tiles", self.preprocess.clahe_tiles),
            ("stride", self.infer.stride),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("`{k}` must be positive")));
            }
        }
        let div = 1usize << (self.network.levels - 1);
        if t.patch_size % div != 0 {
            return Err(Error::Config(format!("patch_size must be divisible by {div}")));
        }
        if self.infer.stride > t.patch_size {
            return Err(Error::Config("stride must not exceed patch_size".into()));
        }
        let reals = [
            ("lr", t.lr),
            ("adam_eps", t.adam_eps),
            ("tau_start", t.tau_start),
            ("tau_end", t.tau_end),
            ("gamma", self.preprocess.gamma),
            ("clahe_clip", self.preprocess.clahe_clip),
        ];
        for (k, v) in reals {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("`{k}` must be positive and finite")));
            }
        }
        if !(t.lr_min >= 0.0 && t.lr_min < t.lr) {
            return Err(Error::Config("lr_min must lie in [0, lr)".into()));
        }
        if !(0.0..1.0).contains(&t.beta1) || !(0.0..1.0).contains(&t.beta2) {
            return Err(Error::Config("beta1 and beta2 must lie in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&t.val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.infer.threshold) {
            return Err(Error::Config("threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

impl fmt::Display for Config {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = &self.network;
        let t = &self.train;
        let p = &self.preprocess;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "\n# network")?;
        writeln!(f, "levels = {}", n.levels)?;
        writeln!(f, "base_channels = {}", n.base_channels)?;
        writeln!(f, "num_orientations = {}", n.num_orientations)?;
        writeln!(f, "use_dcoa = {}", n.use_dcoa)?;
        writeln!(f, "use_safm = {}", n.use_safm)?;
        writeln!(f, "use_glfm = {}", n.use_glfm)?;
        writeln!(f, "use_msfm_ocednl = {}", n.use_msfm_ocednl)?;
        writeln!(f, "use_uarm = {}", n.use_uarm)?;
        writeln!(f, "fusion_mode = {}", n.fusion_mode)?;
        writeln!(f, "msfm_core = {}", n.msfm_core)?;
        writeln!(f, "msfm_width = {}", n.msfm_width)?;
        writeln!(f, "msfm_fusion = {}", name_of(MSFM_FUSION, n.msfm_fusion))?;
        writeln!(f, "orientation_spacing = {}", name_of(SPACING, n.orientation_spacing))?;
        writeln!(f, "orientation_prior = {}", name_of(PRIOR, n.orientation_prior))?;
        writeln!(f, "prob_norm = {}", name_of(PROB, n.prob_norm))?;
        writeln!(f, "\n# training")?;
        writeln!(f, "patch_size = {}", t.patch_size)?;
        writeln!(f, "num_patches = {}", t.num_patches)?;
        writeln!(f, "batch_size = {}", t.batch_size)?;
        writeln!(f, "micro_batch = {}", t.micro_batch)?;
        writeln!(f, "epochs = {}", t.epochs)?;
        writeln!(f, "early_stop_patience = {}", t.early_stop_patience)?;
        writeln!(f, "early_stop_rule = {}", name_of(STOP, t.early_stop_rule))?;
        writeln!(f, "lr = {:?}", t.lr)?;
        writeln!(f, "lr_min = {:?}", t.lr_min)?;
        writeln!(f, "beta1 = {:?}", t.beta1)?;
        writeln!(f, "beta2 = {:?}", t.beta2)?;
        writeln!(f, "adam_eps = {:?}", t.adam_eps)?;
        writeln!(f, "val_fraction = {:?}", t.val_fraction)?;
        writeln!(f, "tau_start = {:?}", t.tau_start)?;
        writeln!(f, "tau_end = {:?}", t.tau_end)?;
        writeln!(f, "tau_anneal_epochs = {}", t.tau_anneal_epochs)?;
        writeln!(f, "max_steps = {}", t.max_steps)?;
        writeln!(f, "\n# preprocessing")?;
        writeln!(f, "gamma = {:?}", p.gamma)?;
        writeln!(f, "clahe_clip = {:?}", p.clahe_clip)?;
        writeln!(f, "clahe_tiles = {}", p.clahe_tiles)?;
        writeln!(f, "\n# inference")?;
        writeln!(f, "stride = {}", self.infer.stride)?;
        writeln!(f, "threshold = {:?}", self.infer.threshold)
    }
}
