//! Endorsement masks and companion cross-attention.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::layers;
use crate::params::Parameters;

/// One {0,1} mask per endorsement level over source positions.
///
/// Level `t` keeps position `i` when its endorsement count is at least `t`,
/// so level 0 keeps everything and higher levels are nested subsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndorsementMasks(Vec<Vec<f64>>);

impl EndorsementMasks {
    pub fn from_counts(counts: &[u32], tau_max: usize) -> Self {
        EndorsementMasks(
            (0..=tau_max)
                .map(|t| counts.iter().map(|&c| if c as usize >= t { 1.0 } else { 0.0 }).collect())
                .collect(),
        )
    }

    /// Every level keeps every position.
    pub fn ones(len: usize, tau_max: usize) -> Self {
        EndorsementMasks(vec![vec![1.0; len]; tau_max + 1])
    }

    pub fn levels(&self) -> &[Vec<f64>] {
        &self.0
    }

    pub fn tau_max(&self) -> usize {
        self.0.len() - 1
    }

    pub fn source_len(&self) -> usize {
        self.0[0].len()
    }

    /// Level `tau` as booleans.
    pub fn level(&self, tau: usize) -> Vec<bool> {
        self.0[tau].iter().map(|&m| m != 0.0).collect()
    }
}

pub fn build_endorsement_masks(counts: &[u32], tau_max: usize) -> EndorsementMasks {
    EndorsementMasks::from_counts(counts, tau_max)
}

/// Per-head, per-level outputs before the output projections:
/// `.0[z][t]` is the `queries x head_dim` output of head `z` at level `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs(pub Vec<Vec<Array2<f64>>>);

#[derive(Debug, Clone)]
pub struct CrossAttentionOutput {
    /// Pooled output, `queries x model_dim`.
    pub pooled: Array2<f64>,
    pub heads: HeadOutputs,
}

fn check(params: &Parameters, layer: usize, queries: ArrayView2<f64>, src: ArrayView2<f64>, masks: &EndorsementMasks) -> Result<(), ModelError> {
    let cfg = &params.config;
    if layer >= cfg.num_layers {
        return Err(ModelError::Shape(format!("decoder layer {layer} of {}", cfg.num_layers)));
    }
    if queries.ncols() != cfg.model_dim || src.ncols() != cfg.model_dim {
        return Err(ModelError::Shape(format!(
            "state width {} / {} != model_dim {}",
            queries.ncols(),
            src.ncols(),
            cfg.model_dim
        )));
    }
    if masks.tau_max() != cfg.tau_max || masks.source_len() != src.nrows() {
        return Err(ModelError::Shape(format!(
            "masks cover tau_max {} over {} positions, expected {} over {}",
            masks.tau_max(),
            masks.source_len(),
            cfg.tau_max,
            src.nrows()
        )));
    }
    Ok(())
}

/// Cross-attention of decoder layer `layer` from `decoder_states` over the
/// encoder output, with companion heads gated by `masks`.
///
/// The input states are used as given; the layer's pre-attention
/// normalization is not applied here.
pub fn companion_cross_attention(
    params: &Parameters,
    layer: usize,
    decoder_states: ArrayView2<f64>,
    encoder_states: ArrayView2<f64>,
    masks: &EndorsementMasks,
) -> Result<CrossAttentionOutput, ModelError> {
    companion_cross_attention_split(params, layer, decoder_states, encoder_states, encoder_states, masks)
}

/// Like [`companion_cross_attention`], with keys and values projected from
/// separate source states.
pub fn companion_cross_attention_split(
    params: &Parameters,
    layer: usize,
    decoder_states: ArrayView2<f64>,
    key_states: ArrayView2<f64>,
    value_states: ArrayView2<f64>,
    masks: &EndorsementMasks,
) -> Result<CrossAttentionOutput, ModelError> {
    check(params, layer, decoder_states, key_states, masks)?;
    if value_states.dim() != key_states.dim() {
        return Err(ModelError::Shape("key and value states differ in shape".into()));
    }
    let idx = &params.layout.index.decoder[layer].cross_attn;
    let (pooled, cache) = layers::attention(params, idx, decoder_states, key_states, Some(value_states), masks, false);
    Ok(CrossAttentionOutput {
        pooled,
        heads: cache.head_outputs(params.config.num_heads),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use ndarray::array;

    #[test]
    fn masks_follow_counts() {
        let m = build_endorsement_masks(&[0, 1, 2], 2);
        assert_eq!(m.levels(), &[vec![1.0, 1.0, 1.0], vec![0.0, 1.0, 1.0], vec![0.0, 0.0, 1.0]]);
        let m = build_endorsement_masks(&[0, 0, 0, 0], 2);
        assert!(m.levels()[1..].iter().all(|l| l.iter().all(|&v| v == 0.0)));
        let m = build_endorsement_masks(&[2, 5, 3], 2);
        assert!(m.levels().iter().all(|l| l.iter().all(|&v| v == 1.0)));
    }

    #[test]
    fn masks_are_nested() {
        let counts: Vec<u32> = (0..40).map(|i| (i * 7 % 5) as u32).collect();
        let m = build_endorsement_masks(&counts, 4);
        for t in 0..4 {
            for (hi, lo) in m.levels()[t + 1].iter().zip(&m.levels()[t]) {
                assert!(hi <= lo);
            }
        }
    }

    fn scalar_config() -> ModelConfig {
        ModelConfig {
            num_layers: 1,
            model_dim: 1,
            num_heads: 1,
            head_dim: 1,
            ffn_dim: 1,
            vocab_size: 3,
            max_positions: 4,
            tau_max: 1,
            lambdas: vec![0.5, 0.5],
            dropout: 0.0,
        }
    }

    #[test]
    fn two_token_closed_form() {
        let mut p = Parameters::zeros(&scalar_config()).unwrap();
        let names = ["query", "key", "value", "output.0", "output.1"];
        for (n, v) in names.iter().zip([1.0, 1.0, 1.0, 1.0, 1.0]) {
            let id = p.layout.slot_named(&format!("decoder.0.cross_attn.{n}")).unwrap();
            p.mat_mut(id).fill(v);
        }
        // q = 0.5; keys 1.0 and -1.0; values 3.0 and -2.0
        let dec = array![[0.5]];
        let keys = array![[1.0], [-1.0]];
        let values = array![[3.0], [-2.0]];
        let masks = EndorsementMasks::from_counts(&[1, 0], 1);
        let out = companion_cross_attention_split(&p, 0, dec.view(), keys.view(), values.view(), &masks).unwrap();
        let s0 = (0.5f64 * 1.0).exp();
        let s1 = (-0.5f64).exp();
        let a0 = s0 / (s0 + s1);
        let a1 = s1 / (s0 + s1);
        let level1 = out.heads.0[0][1][[0, 0]];
        assert!((level1 - a0 * 3.0).abs() < 1e-15);
        let level0 = out.heads.0[0][0][[0, 0]];
        assert!((level0 - (a0 * 3.0 + a1 * -2.0)).abs() < 1e-15);
        assert!((out.pooled[[0, 0]] - (level0 + level1)).abs() < 1e-15);
    }
}
