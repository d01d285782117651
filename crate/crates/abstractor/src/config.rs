use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Default companion coefficients for endorsement levels 0, 1 and 2.
pub const DEFAULT_LAMBDAS: [f64; 3] = [0.8, 0.1, 0.1];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub model_dim: usize,
    pub num_heads: usize,
    pub head_dim: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    /// Highest endorsement level with its own companion heads.
    pub tau_max: usize,
    /// Coefficient of each level's output projection at initialization.
    pub lambdas: Vec<f64>,
    pub dropout: f64,
}

impl ModelConfig {
    /// A small configuration with default companion levels.
    pub fn tiny(vocab_size: usize) -> Self {
        ModelConfig {
            num_layers: 2,
            model_dim: 64,
            num_heads: 4,
            head_dim: 16,
            ffn_dim: 128,
            vocab_size,
            max_positions: 128,
            tau_max: 2,
            lambdas: DEFAULT_LAMBDAS.to_vec(),
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Config(msg));
        if self.head_dim * self.num_heads != self.model_dim {
            return bad(format!(
                "head_dim {} x num_heads {} != model_dim {}",
                self.head_dim, self.num_heads, self.model_dim
            ));
        }
        if self.num_heads == 0 || self.vocab_size == 0 || self.max_positions == 0 || self.ffn_dim == 0 {
            return bad("num_heads, ffn_dim, vocab_size and max_positions must be positive".into());
        }
        if self.lambdas.len() != self.tau_max + 1 {
            return bad(format!(
                "expected {} lambdas for tau_max {}, found {}",
                self.tau_max + 1,
                self.tau_max,
                self.lambdas.len()
            ));
        }
        if self.lambdas.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return bad("every lambda must lie in [0, 1]".into());
        }
        let total: f64 = self.lambdas.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("lambdas sum to {total}, expected 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)".into());
        }
        Ok(())
    }

    /// Companion levels whose coefficient is zero are pruned: their output
    /// projections start at zero and receive no updates.
    pub fn pruned_levels(&self) -> Vec<usize> {
        (1..=self.tau_max).filter(|&t| self.lambdas[t] == 0.0).collect()
    }

    /// The same architecture with only the original heads.
    pub fn without_companions(&self) -> Self {
        ModelConfig {
            tau_max: 0,
            lambdas: vec![1.0],
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub min_decode_len: usize,
    pub max_decode_len: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            beam_size: 4,
            min_decode_len: 10,
            max_decode_len: 50,
        }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.beam_size == 0 {
            return Err(ModelError::Config("beam_size must be at least 1".into()));
        }
        if self.min_decode_len > self.max_decode_len || self.max_decode_len == 0 {
            return Err(ModelError::Config(format!(
                "decode length bounds [{}, {}] are invalid",
                self.min_decode_len, self.max_decode_len
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Fraction of all steps spent on linear warm-up.
    pub warmup_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_grad_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 16,
            learning_rate: 3e-5,
            warmup_fraction: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_grad_norm: Some(1.0),
            seed: 17,
        }
    }
}
