//! Run configuration: one TOML file with `[data]`, `[bloom]`, `[transe]`,
//! `[model]`, `[train]` and `[footprint]` sections. Unknown keys are
//! rejected and every validation problem is reported together.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bloom::{BloomConfig, DEFAULT_EPSILON, DEFAULT_MAX_BITS, PRESET_BITS};
use crate::error::{Error, Result};
use crate::kge::{KgeOptimizer, TransEConfig};
use crate::seed;
use crate::trainer::{ModelConfig, Task, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train: PathBuf,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// `entity<TAB>class<TAB>split` lines for node classification.
    pub labels: Option<PathBuf>,
    /// Precomputed text embeddings in the GHFT layout.
    pub text_features: Option<PathBuf>,
    #[serde(default)]
    pub strict: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BloomSizing {
    /// `n` from the degree distribution, then `(m, k)` from `epsilon`.
    Derive,
    /// `m` and `k` as written.
    Explicit,
    /// Fixed 500-bit rows with `k` from the degree estimate.
    Preset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BloomSection {
    pub sizing: BloomSizing,
    pub epsilon: f64,
    pub max_bits: u32,
    pub m: Option<u32>,
    pub k: Option<u16>,
}

impl Default for BloomSection {
    fn default() -> Self {
        Self {
            sizing: BloomSizing::Derive,
            epsilon: DEFAULT_EPSILON,
            max_bits: DEFAULT_MAX_BITS,
            m: None,
            k: None,
        }
    }
}

impl BloomSection {
    fn errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            errs.push(format!("bloom.epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        if self.max_bits == 0 {
            errs.push("bloom.max_bits must be >= 1".into());
        }
        match self.sizing {
            BloomSizing::Explicit => {
                if self.m.is_none_or(|m| m == 0) {
                    errs.push("bloom.m must be set to >= 1 when sizing = \"explicit\"".into());
                }
                if self.k.is_none_or(|k| k == 0) {
                    errs.push("bloom.k must be set to >= 1 when sizing = \"explicit\"".into());
                }
            }
            _ => {
                if self.m.is_some() || self.k.is_some() {
                    errs.push("bloom.m and bloom.k are only read when sizing = \"explicit\"".into());
                }
            }
        }
        errs
    }

    /// Resolves `(m, k)` given the degree-based estimate of `n`.
    pub fn resolve(&self, n_estimate: u64, seed: u64) -> Result<BloomConfig> {
        let cfg = match self.sizing {
            BloomSizing::Explicit => BloomConfig::fixed(self.m.unwrap_or(0), self.k.unwrap_or(0))?,
            BloomSizing::Derive => BloomConfig::capped(n_estimate, self.epsilon, self.max_bits)?,
            BloomSizing::Preset => {
                let n = n_estimate.max(1) as f64;
                let k = (PRESET_BITS as f64 / n * std::f64::consts::LN_2).round().max(1.0);
                BloomConfig::fixed(PRESET_BITS, k.min(u16::MAX as f64) as u16)?
            }
        };
        Ok(cfg.with_seed(seed))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerName {
    Sgd,
    Adagrad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransESection {
    pub dim: usize,
    pub gamma: f32,
    pub p_norm: u8,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub optimizer: OptimizerName,
    pub normalize_entities: bool,
    pub eval_every: usize,
    pub patience: usize,
    pub eval_triples: Option<usize>,
}

impl Default for TransESection {
    fn default() -> Self {
        let d = TransEConfig::default();
        Self {
            dim: d.dim,
            gamma: d.gamma,
            p_norm: d.p_norm,
            epochs: d.epochs,
            batch_size: d.batch_size,
            lr: d.lr,
            optimizer: OptimizerName::Adagrad,
            normalize_entities: d.normalize_entities,
            eval_every: d.eval_every,
            patience: d.patience,
            eval_triples: d.eval_triples,
        }
    }
}

impl TransESection {
    pub fn to_config(&self, seed: u64) -> TransEConfig {
        TransEConfig {
            dim: self.dim,
            gamma: self.gamma,
            p_norm: self.p_norm,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            optimizer: match self.optimizer {
                OptimizerName::Sgd => KgeOptimizer::Sgd,
                OptimizerName::Adagrad => KgeOptimizer::Adagrad,
            },
            normalize_entities: self.normalize_entities,
            seed,
            eval_every: self.eval_every,
            patience: self.patience,
            eval_triples: self.eval_triples,
        }
    }
}

/// Sizes reported by the footprint command in addition to the configured run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FootprintSection {
    /// Entity count to size for; the loaded graph's count when unset.
    pub entities: Option<u64>,
    pub relations: Option<u64>,
    /// Encoder hidden width; `model.dim` when unset.
    pub hidden: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Root of all randomness; component seeds are derived from it by label.
    #[serde(default)]
    pub seed: u64,
    /// Artifact directory.
    pub output: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub bloom: BloomSection,
    #[serde(default)]
    pub transe: TransESection,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub footprint: FootprintSection,
}

impl PipelineConfig {
    /// Parses TOML text. Relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(vec![e.message().to_string()]))?;
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    /// Reads, parses and validates a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let cfg = Self::parse(&text, base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output);
        fix(&mut self.data.train);
        for p in [
            &mut self.data.valid,
            &mut self.data.test,
            &mut self.data.labels,
            &mut self.data.text_features,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    /// Every problem with the configuration, including missing input files.
    pub fn errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let mut exists = |field: &str, p: &Path| {
            if !p.is_file() {
                errs.push(format!("data.{field}: no such file {}", p.display()));
            }
        };
        exists("train", &self.data.train);
        for (field, p) in [
            ("valid", &self.data.valid),
            ("test", &self.data.test),
            ("labels", &self.data.labels),
            ("text_features", &self.data.text_features),
        ] {
            if let Some(p) = p {
                exists(field, p);
            }
        }
        if self.data.valid.is_none() {
            errs.push("data.valid is required for validation and early stopping".into());
        }
        if self.train.task == Task::Node && self.data.labels.is_none() {
            errs.push("data.labels is required when train.task = \"node\"".into());
        }
        if self.model.use_text && self.data.text_features.is_none() {
            errs.push("model.use_text needs data.text_features".into());
        }
        errs.extend(self.bloom.errors());
        if let Err(Error::Config(e)) = self.transe.to_config(0).validate() {
            errs.extend(e);
        }
        errs.extend(self.model.errors());
        errs.extend(self.train.errors());
        if self.train.patience == 0 {
            errs.push("train.patience must be >= 1".into());
        }
        errs
    }

    pub fn validate(&self) -> Result<()> {
        let errs = self.errors();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn seed_for(&self, label: &str) -> u64 {
        seed::derive(self.seed, label)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }
}
