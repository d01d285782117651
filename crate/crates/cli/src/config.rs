//! Run configuration: one TOML file plus `ENDORSE_` environment overrides.
//!
//! An override variable names a key path below the prefix, with `__`
//! separating nested tables: `ENDORSE_SEED=3` sets `seed` and
//! `ENDORSE_ENDORSEMENT__PATTERN=reciprocal` sets `endorsement.pattern`.
//! Values are read as TOML scalars, falling back to plain strings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use endorse_abstractor::{BeamConfig, ModelConfig, TrainConfig};
use endorse_core::endorsement::EndorsementConfig;
use endorse_core::rouge::Thresholds;
use endorse_core::segmentation::SegmentationConfig;
use endorse_core::EmbeddingProvider;

use crate::error::PipelineError;

pub const ENV_PREFIX: &str = "ENDORSE_";
pub const DEFAULT_SEED: u64 = 17;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EmbeddingSpec {
    Hashed { dimension: usize },
    File { path: PathBuf },
}

impl Default for EmbeddingSpec {
    fn default() -> Self {
        EmbeddingSpec::Hashed { dimension: 64 }
    }
}

/// Architecture settings; the vocabulary size comes from the training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub num_layers: usize,
    pub model_dim: usize,
    pub num_heads: usize,
    pub head_dim: usize,
    pub ffn_dim: usize,
    pub max_positions: usize,
    pub tau_max: usize,
    pub lambdas: Vec<f64>,
    pub dropout: f64,
    pub max_vocab: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let t = ModelConfig::tiny(1);
        ModelSection {
            num_layers: t.num_layers,
            model_dim: t.model_dim,
            num_heads: t.num_heads,
            head_dim: t.head_dim,
            ffn_dim: t.ffn_dim,
            max_positions: t.max_positions,
            tau_max: t.tau_max,
            lambdas: t.lambdas,
            dropout: 0.1,
            max_vocab: endorse_abstractor::vocab::DEFAULT_MAX_SIZE,
        }
    }
}

impl ModelSection {
    pub fn to_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            num_layers: self.num_layers,
            model_dim: self.model_dim,
            num_heads: self.num_heads,
            head_dim: self.head_dim,
            ffn_dim: self.ffn_dim,
            vocab_size,
            max_positions: self.max_positions,
            tau_max: self.tau_max,
            lambdas: self.lambdas.clone(),
            dropout: self.dropout,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub input: PathBuf,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Worker threads; 0 picks one per core.
    pub jobs: usize,
    pub endorsement: EndorsementConfig,
    /// Overrides `endorsement.segmentation`; when neither is given the
    /// defaults of the alignment mode apply.
    pub segmentation: Option<SegmentationConfig>,
    pub embedding: EmbeddingSpec,
    pub model: ModelSection,
    /// Use this checkpoint instead of `output_dir/train/checkpoint.json`.
    pub checkpoint: Option<PathBuf>,
    /// Summarize extractively even when a checkpoint exists.
    pub extractive: bool,
    pub beam: BeamConfig,
    pub train: TrainConfig,
    /// Summary length for the extractive fallback and for evaluation.
    pub summary_max_tokens: usize,
    pub thresholds: Thresholds,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: PathBuf::from("clusters.jsonl"),
            output_dir: PathBuf::from("out"),
            seed: DEFAULT_SEED,
            jobs: 1,
            endorsement: EndorsementConfig::default(),
            segmentation: None,
            embedding: EmbeddingSpec::default(),
            model: ModelSection::default(),
            checkpoint: None,
            extractive: false,
            beam: BeamConfig::default(),
            train: TrainConfig::default(),
            summary_max_tokens: 40,
            thresholds: Thresholds::default(),
        }
    }
}

fn parse_scalar(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(table: &mut toml::Table, path: &[String], value: toml::Value) -> Result<(), PipelineError> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for key in parents {
        let entry = cur
            .entry(key.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| PipelineError::Config(format!("override path crosses non-table key {key:?}")))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

impl RunConfig {
    /// Parse `text`, apply overrides, then resolve derived settings.
    pub fn from_toml_with_overrides(
        text: &str,
        overrides: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, PipelineError> {
        let mut table: toml::Table = text.parse().map_err(|e| PipelineError::Config(format!("{e}")))?;
        let mut vars: Vec<(String, String)> = overrides
            .into_iter()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX) && k.len() > ENV_PREFIX.len())
            .collect();
        vars.sort();
        for (key, raw) in vars {
            let path: Vec<String> = key[ENV_PREFIX.len()..]
                .split("__")
                .map(|p| p.to_lowercase())
                .collect();
            if path.iter().any(String::is_empty) {
                return Err(PipelineError::Config(format!("malformed override {key}")));
            }
            set_path(&mut table, &path, parse_scalar(&raw))?;
        }
        let explicit_segmentation = table
            .get("endorsement")
            .and_then(|e| e.get("segmentation"))
            .is_some();
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| PipelineError::Config(e.to_string()))?;
        if let Some(seg) = cfg.segmentation {
            cfg.endorsement.segmentation = seg;
        } else if !explicit_segmentation {
            cfg.endorsement.segmentation = SegmentationConfig::for_mode(cfg.endorsement.alignment_mode);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load a config file with overrides from the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, PipelineError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| PipelineError::io(p, e))?,
            None => String::new(),
        };
        let mut cfg = Self::from_toml_with_overrides(&text, std::env::vars())?;
        if let Some(p) = path {
            let base = p.parent().unwrap_or(Path::new(""));
            cfg.resolve_relative(base);
        }
        Ok(cfg)
    }

    /// Interpret relative input paths against `base`.
    pub fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.input);
        if let Some(c) = &mut self.checkpoint {
            fix(c);
        }
        if let EmbeddingSpec::File { path } = &mut self.embedding {
            fix(path);
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.endorsement
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.endorsement.tau_max != self.model.tau_max {
            return Err(PipelineError::Config(format!(
                "endorsement.tau_max {} differs from model.tau_max {}",
                self.endorsement.tau_max, self.model.tau_max
            )));
        }
        self.model.to_config(8).validate()?;
        self.beam.validate()?;
        if let EmbeddingSpec::Hashed { dimension: 0 } = self.embedding {
            return Err(PipelineError::Config("embedding dimension must be positive".into()));
        }
        if self.summary_max_tokens == 0 {
            return Err(PipelineError::Config("summary_max_tokens must be positive".into()));
        }
        Ok(())
    }

    pub fn embedding_provider(&self) -> Result<EmbeddingProvider, PipelineError> {
        match &self.embedding {
            EmbeddingSpec::Hashed { dimension } => Ok(EmbeddingProvider::hashed(*dimension, self.seed)),
            EmbeddingSpec::File { path } => Ok(EmbeddingProvider::from_file(path, self.seed)?),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
