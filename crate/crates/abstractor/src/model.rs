//! Encoder-decoder forward and backward passes.
//!
//! Both stacks use pre-norm residual blocks and share the token and
//! position embedding tables. Each decoder block runs causal
//! self-attention, companion cross-attention over the encoder states and a
//! feed-forward layer. A final normalization closes each non-empty stack.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::attention::EndorsementMasks;
use crate::error::ModelError;
use crate::layers::{self, AttnCache, FfnCache, NormCache};
use crate::params::{view_mut, Parameters};
use crate::vocab::BOS;

/// Source tokens with their endorsement counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndorsedInput {
    pub token_ids: Vec<u32>,
    pub endorse_counts: Vec<u32>,
}

impl EndorsedInput {
    pub fn new(token_ids: Vec<u32>, endorse_counts: Vec<u32>) -> Result<Self, ModelError> {
        if token_ids.len() != endorse_counts.len() {
            return Err(ModelError::Shape(format!(
                "{} tokens but {} endorsement counts",
                token_ids.len(),
                endorse_counts.len()
            )));
        }
        Ok(EndorsedInput {
            token_ids,
            endorse_counts,
        })
    }

    pub fn masks(&self, tau_max: usize) -> EndorsementMasks {
        EndorsementMasks::from_counts(&self.endorse_counts, tau_max)
    }
}

/// A training pair. `target` excludes the beginning-of-sequence token and
/// normally ends with end-of-sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub input: EndorsedInput,
    pub target: Vec<u32>,
}

impl Example {
    /// Teacher-forced decoder input: BOS followed by all but the last target token.
    pub fn decoder_input(&self) -> Vec<u32> {
        let mut ids = Vec::with_capacity(self.target.len());
        ids.push(BOS);
        ids.extend_from_slice(&self.target[..self.target.len().saturating_sub(1)]);
        ids
    }
}

fn check_ids(params: &Parameters, ids: &[u32], what: &'static str) -> Result<(), ModelError> {
    let cfg = &params.config;
    if ids.is_empty() {
        return Err(ModelError::Empty(what));
    }
    if ids.len() > cfg.max_positions {
        return Err(ModelError::TooLong {
            len: ids.len(),
            max: cfg.max_positions,
        });
    }
    if let Some(&id) = ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
        return Err(ModelError::UnknownToken {
            id: id as usize,
            vocab: cfg.vocab_size,
        });
    }
    Ok(())
}

fn embed(params: &Parameters, ids: &[u32]) -> Array2<f64> {
    let idx = &params.layout.index;
    let e = params.mat(idx.token_embeddings);
    let p = params.mat(idx.position_embeddings);
    let mut x = Array2::zeros((ids.len(), params.config.model_dim));
    for (i, &id) in ids.iter().enumerate() {
        let mut row = x.row_mut(i);
        row.assign(&e.row(id as usize));
        row += &p.row(i);
    }
    x
}

fn embed_backward(params: &Parameters, grads: &mut [f64], ids: &[u32], dx: &Array2<f64>) {
    let idx = &params.layout.index;
    let slots = &params.layout.slots;
    {
        let mut de = view_mut(grads, &slots[idx.token_embeddings]);
        for (i, &id) in ids.iter().enumerate() {
            let mut row = de.row_mut(id as usize);
            row += &dx.row(i);
        }
    }
    let mut dp = view_mut(grads, &slots[idx.position_embeddings]);
    let mut rows = dp.slice_mut(s![..ids.len(), ..]);
    rows += dx;
}

type Rng<'a> = Option<&'a mut dyn RngCore>;

fn apply_dropout(x: &mut Array2<f64>, rate: f64, rng: &mut Rng) -> Option<Array2<f64>> {
    let mask = layers::dropout_mask(rng.as_deref_mut(), rate, x.dim())?;
    *x *= &mask;
    Some(mask)
}

fn undo_dropout(dy: &Array2<f64>, mask: &Option<Array2<f64>>) -> Array2<f64> {
    match mask {
        Some(m) => dy * m,
        None => dy.clone(),
    }
}

struct EncoderLayerTrace {
    norm1: NormCache,
    attn: AttnCache,
    drop1: Option<Array2<f64>>,
    norm2: NormCache,
    ffn: FfnCache,
    drop2: Option<Array2<f64>>,
}

struct EncoderTrace {
    ids: Vec<u32>,
    embed_drop: Option<Array2<f64>>,
    layers: Vec<EncoderLayerTrace>,
    norm: Option<NormCache>,
}

fn encoder_forward(params: &Parameters, ids: &[u32], rng: &mut Rng) -> (Array2<f64>, EncoderTrace) {
    let cfg = &params.config;
    let idx = &params.layout.index;
    let mut x = embed(params, ids);
    let embed_drop = apply_dropout(&mut x, cfg.dropout, rng);
    let self_masks = EndorsementMasks::ones(ids.len(), 0);
    let mut traces = Vec::with_capacity(cfg.num_layers);
    for layer in &idx.encoder {
        let (n1, norm1) = layers::layer_norm(params, layer.norm1, x.view());
        let (mut a, attn) = layers::attention(params, &layer.self_attn, n1.view(), n1.view(), None, &self_masks, false);
        let drop1 = apply_dropout(&mut a, cfg.dropout, rng);
        x += &a;
        let (n2, norm2) = layers::layer_norm(params, layer.norm2, x.view());
        let (mut f, ffn) = layers::feed_forward(params, layer.ffn, n2.view());
        let drop2 = apply_dropout(&mut f, cfg.dropout, rng);
        x += &f;
        traces.push(EncoderLayerTrace {
            norm1,
            attn,
            drop1,
            norm2,
            ffn,
            drop2,
        });
    }
    let norm = idx.encoder_norm.map(|n| {
        let (y, cache) = layers::layer_norm(params, n, x.view());
        x = y;
        cache
    });
    (
        x,
        EncoderTrace {
            ids: ids.to_vec(),
            embed_drop,
            layers: traces,
            norm,
        },
    )
}

fn encoder_backward(params: &Parameters, grads: &mut [f64], trace: &EncoderTrace, dh: Array2<f64>) {
    let idx = &params.layout.index;
    let mut dx = match (&trace.norm, idx.encoder_norm) {
        (Some(cache), Some(n)) => layers::layer_norm_backward(params, grads, n, cache, &dh),
        _ => dh,
    };
    for (layer, t) in idx.encoder.iter().zip(&trace.layers).rev() {
        let df = undo_dropout(&dx, &t.drop2);
        let dn2 = layers::feed_forward_backward(params, grads, layer.ffn, &t.ffn, &df);
        dx += &layers::layer_norm_backward(params, grads, layer.norm2, &t.norm2, &dn2);
        let da = undo_dropout(&dx, &t.drop1);
        let g = layers::attention_backward(params, grads, &layer.self_attn, &t.attn, &da);
        let dn1 = g.query_input + g.key_input;
        dx += &layers::layer_norm_backward(params, grads, layer.norm1, &t.norm1, &dn1);
    }
    let dx = undo_dropout(&dx, &trace.embed_drop);
    embed_backward(params, grads, &trace.ids, &dx);
}

struct DecoderLayerTrace {
    norm1: NormCache,
    self_attn: AttnCache,
    drop1: Option<Array2<f64>>,
    norm2: NormCache,
    cross_attn: AttnCache,
    drop2: Option<Array2<f64>>,
    norm3: NormCache,
    ffn: FfnCache,
    drop3: Option<Array2<f64>>,
}

struct DecoderTrace {
    ids: Vec<u32>,
    embed_drop: Option<Array2<f64>>,
    layers: Vec<DecoderLayerTrace>,
    norm: Option<NormCache>,
    hidden: Array2<f64>,
}

fn decoder_forward(
    params: &Parameters,
    encoder_states: ArrayView2<f64>,
    masks: &EndorsementMasks,
    ids: &[u32],
    rng: &mut Rng,
) -> (Array2<f64>, DecoderTrace) {
    let cfg = &params.config;
    let idx = &params.layout.index;
    let mut x = embed(params, ids);
    let embed_drop = apply_dropout(&mut x, cfg.dropout, rng);
    let self_masks = EndorsementMasks::ones(ids.len(), 0);
    let mut traces = Vec::with_capacity(cfg.num_layers);
    for layer in &idx.decoder {
        let (n1, norm1) = layers::layer_norm(params, layer.norm1, x.view());
        let (mut a, self_attn) = layers::attention(params, &layer.self_attn, n1.view(), n1.view(), None, &self_masks, true);
        let drop1 = apply_dropout(&mut a, cfg.dropout, rng);
        x += &a;
        let (n2, norm2) = layers::layer_norm(params, layer.norm2, x.view());
        let (mut c, cross_attn) = layers::attention(params, &layer.cross_attn, n2.view(), encoder_states, None, masks, false);
        let drop2 = apply_dropout(&mut c, cfg.dropout, rng);
        x += &c;
        let (n3, norm3) = layers::layer_norm(params, layer.norm3, x.view());
        let (mut f, ffn) = layers::feed_forward(params, layer.ffn, n3.view());
        let drop3 = apply_dropout(&mut f, cfg.dropout, rng);
        x += &f;
        traces.push(DecoderLayerTrace {
            norm1,
            self_attn,
            drop1,
            norm2,
            cross_attn,
            drop2,
            norm3,
            ffn,
            drop3,
        });
    }
    let norm = idx.decoder_norm.map(|n| {
        let (y, cache) = layers::layer_norm(params, n, x.view());
        x = y;
        cache
    });
    let logits = x.dot(&params.mat(idx.output_weight)) + params.mat(idx.output_bias);
    (
        logits,
        DecoderTrace {
            ids: ids.to_vec(),
            embed_drop,
            layers: traces,
            norm,
            hidden: x,
        },
    )
}

/// Returns the gradient with respect to the encoder states.
fn decoder_backward(params: &Parameters, grads: &mut [f64], trace: &DecoderTrace, dlogits: &Array2<f64>) -> Array2<f64> {
    let idx = &params.layout.index;
    let slots = &params.layout.slots;
    view_mut(grads, &slots[idx.output_weight]).scaled_add(1.0, &trace.hidden.t().dot(dlogits));
    view_mut(grads, &slots[idx.output_bias]).scaled_add(1.0, &dlogits.sum_axis(Axis(0)).insert_axis(Axis(0)));
    let dh = dlogits.dot(&params.mat(idx.output_weight).t());
    let mut dx = match (&trace.norm, idx.decoder_norm) {
        (Some(cache), Some(n)) => layers::layer_norm_backward(params, grads, n, cache, &dh),
        _ => dh,
    };
    let mut d_enc: Option<Array2<f64>> = None;
    for (layer, t) in idx.decoder.iter().zip(&trace.layers).rev() {
        let df = undo_dropout(&dx, &t.drop3);
        let dn3 = layers::feed_forward_backward(params, grads, layer.ffn, &t.ffn, &df);
        dx += &layers::layer_norm_backward(params, grads, layer.norm3, &t.norm3, &dn3);

        let dc = undo_dropout(&dx, &t.drop2);
        let g = layers::attention_backward(params, grads, &layer.cross_attn, &t.cross_attn, &dc);
        dx += &layers::layer_norm_backward(params, grads, layer.norm2, &t.norm2, &g.query_input);
        match &mut d_enc {
            Some(d) => *d += &g.key_input,
            None => d_enc = Some(g.key_input),
        }

        let da = undo_dropout(&dx, &t.drop1);
        let g = layers::attention_backward(params, grads, &layer.self_attn, &t.self_attn, &da);
        let dn1 = g.query_input + g.key_input;
        dx += &layers::layer_norm_backward(params, grads, layer.norm1, &t.norm1, &dn1);
    }
    let dx = undo_dropout(&dx, &trace.embed_drop);
    embed_backward(params, grads, &trace.ids, &dx);
    d_enc.unwrap_or_else(|| Array2::zeros((0, params.config.model_dim)))
}

/// Encoder output `H` for a source sequence.
pub fn encode(params: &Parameters, token_ids: &[u32]) -> Result<Array2<f64>, ModelError> {
    check_ids(params, token_ids, "source sequence")?;
    Ok(encoder_forward(params, token_ids, &mut None).0)
}

fn check_masks(params: &Parameters, encoder_states: ArrayView2<f64>, masks: &EndorsementMasks) -> Result<(), ModelError> {
    if masks.tau_max() != params.config.tau_max || masks.source_len() != encoder_states.nrows() {
        return Err(ModelError::Shape(format!(
            "masks cover tau_max {} over {} positions; model has tau_max {} and source length {}",
            masks.tau_max(),
            masks.source_len(),
            params.config.tau_max,
            encoder_states.nrows()
        )));
    }
    if encoder_states.ncols() != params.config.model_dim {
        return Err(ModelError::Shape("encoder states do not match model_dim".into()));
    }
    Ok(())
}

/// Final decoder hidden states for every prefix position.
pub fn decoder_states(
    params: &Parameters,
    encoder_states: ArrayView2<f64>,
    masks: &EndorsementMasks,
    prefix: &[u32],
) -> Result<Array2<f64>, ModelError> {
    check_masks(params, encoder_states, masks)?;
    check_ids(params, prefix, "decoder prefix")?;
    Ok(decoder_forward(params, encoder_states, masks, prefix, &mut None).1.hidden)
}

/// Next-token logits at every prefix position.
pub fn decoder_logits(
    params: &Parameters,
    encoder_states: ArrayView2<f64>,
    masks: &EndorsementMasks,
    prefix: &[u32],
) -> Result<Array2<f64>, ModelError> {
    check_masks(params, encoder_states, masks)?;
    check_ids(params, prefix, "decoder prefix")?;
    Ok(decoder_forward(params, encoder_states, masks, prefix, &mut None).0)
}

/// Logits for the token following `prefix`.
pub fn decode_step(
    params: &Parameters,
    encoder_states: ArrayView2<f64>,
    masks: &EndorsementMasks,
    prefix: &[u32],
) -> Result<Array1<f64>, ModelError> {
    let logits = decoder_logits(params, encoder_states, masks, prefix)?;
    Ok(logits.row(logits.nrows() - 1).to_owned())
}

pub fn log_softmax(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        row -= lse;
    }
    out
}

fn check_example(params: &Parameters, example: &Example) -> Result<(), ModelError> {
    check_ids(params, &example.input.token_ids, "source sequence")?;
    if example.input.endorse_counts.len() != example.input.token_ids.len() {
        return Err(ModelError::Shape("token and count lengths differ".into()));
    }
    check_ids(params, &example.target, "target sequence")
}

/// Mean token cross-entropy of `example` under teacher forcing.
pub fn loss(params: &Parameters, example: &Example) -> Result<f64, ModelError> {
    check_example(params, example)?;
    let (enc, _) = encoder_forward(params, &example.input.token_ids, &mut None);
    let masks = example.input.masks(params.config.tau_max);
    let (logits, _) = decoder_forward(params, enc.view(), &masks, &example.decoder_input(), &mut None);
    let lp = log_softmax(logits.view());
    let total: f64 = example.target.iter().enumerate().map(|(j, &y)| -lp[[j, y as usize]]).sum();
    Ok(total / example.target.len() as f64)
}

/// Mean token cross-entropy and its gradient with respect to every
/// parameter. Dropout is active when `dropout_rng` is given.
pub fn loss_and_grad(
    params: &Parameters,
    example: &Example,
    mut dropout_rng: Option<&mut dyn RngCore>,
) -> Result<(f64, Vec<f64>), ModelError> {
    check_example(params, example)?;
    let (enc, enc_trace) = encoder_forward(params, &example.input.token_ids, &mut dropout_rng);
    let masks = example.input.masks(params.config.tau_max);
    let (logits, dec_trace) = decoder_forward(params, enc.view(), &masks, &example.decoder_input(), &mut dropout_rng);
    let lp = log_softmax(logits.view());
    let n = example.target.len() as f64;
    let mut total = 0.0;
    let mut dlogits = lp.mapv(f64::exp);
    for (j, &y) in example.target.iter().enumerate() {
        total -= lp[[j, y as usize]];
        dlogits[[j, y as usize]] -= 1.0;
    }
    dlogits /= n;
    let mut grads = vec![0.0; params.values.len()];
    let d_enc = decoder_backward(params, &mut grads, &dec_trace, &dlogits);
    if d_enc.nrows() > 0 {
        encoder_backward(params, &mut grads, &enc_trace, d_enc);
    }
    Ok((total / n, grads))
}

/// Teacher-forced predictions: the argmax token at each target position.
pub fn predict_teacher_forced(params: &Parameters, example: &Example) -> Result<Vec<u32>, ModelError> {
    check_example(params, example)?;
    let enc = encode(params, &example.input.token_ids)?;
    let masks = example.input.masks(params.config.tau_max);
    let logits = decoder_logits(params, enc.view(), &masks, &example.decoder_input())?;
    Ok(logits.rows().into_iter().map(|r| argmax(r.iter().copied()) as u32).collect())
}

/// Index of the largest value; the first one on ties.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}
