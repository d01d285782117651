//! Differentiable building blocks with explicit backward passes.
//!
//! Each forward function returns its output together with a cache; the
//! matching backward function takes that cache and the output gradient,
//! accumulates parameter gradients into a flat buffer laid out like the
//! parameters, and returns the input gradient.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::attention::{EndorsementMasks, HeadOutputs};
use crate::params::{view_mut, AttnIdx, FfnIdx, NormIdx, Parameters};

pub const LAYER_NORM_EPS: f64 = 1e-5;

pub struct NormCache {
    normalized: Array2<f64>,
    inv_std: Array1<f64>,
}

pub fn layer_norm(params: &Parameters, idx: NormIdx, x: ArrayView2<f64>) -> (Array2<f64>, NormCache) {
    let gain = params.mat(idx.gain);
    let bias = params.mat(idx.bias);
    let d = x.ncols() as f64;
    let mut normalized = x.to_owned();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, s) in normalized.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row -= mean;
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        row *= *s;
    }
    let out = &normalized * &gain + bias;
    (out, NormCache { normalized, inv_std })
}

pub fn layer_norm_backward(
    params: &Parameters,
    grads: &mut [f64],
    idx: NormIdx,
    cache: &NormCache,
    dy: &Array2<f64>,
) -> Array2<f64> {
    let slots = &params.layout.slots;
    let gain = params.mat(idx.gain);
    {
        let mut dg = view_mut(grads, &slots[idx.gain]);
        dg += &(dy * &cache.normalized).sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    {
        let mut db = view_mut(grads, &slots[idx.bias]);
        db += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    let dxhat = dy * &gain;
    let d = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.raw_dim());
    for (((mut out, g), xh), &s) in dx
        .rows_mut()
        .into_iter()
        .zip(dxhat.rows())
        .zip(cache.normalized.rows())
        .zip(cache.inv_std.iter())
    {
        let mean_g = g.sum() / d;
        let mean_gx = g.dot(&xh) / d;
        Zip::from(&mut out).and(&g).and(&xh).for_each(|o, &gi, &xi| {
            *o = s * (gi - mean_g - xi * mean_gx);
        });
    }
    dx
}

/// Inverted dropout mask; `None` when inactive.
pub fn dropout_mask<R: rand::RngCore + ?Sized>(rng: Option<&mut R>, rate: f64, shape: (usize, usize)) -> Option<Array2<f64>> {
    let rng = rng?;
    if rate == 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - rate);
    Some(Array2::from_shape_fn(shape, |_| if rng.gen::<f64>() < rate { 0.0 } else { keep }))
}

pub struct FfnCache {
    input: Array2<f64>,
    hidden: Array2<f64>,
}

pub fn feed_forward(params: &Parameters, idx: FfnIdx, x: ArrayView2<f64>) -> (Array2<f64>, FfnCache) {
    let mut hidden = x.dot(&params.mat(idx.w1)) + params.mat(idx.b1);
    hidden.mapv_inplace(|v| v.max(0.0));
    let out = hidden.dot(&params.mat(idx.w2)) + params.mat(idx.b2);
    (
        out,
        FfnCache {
            input: x.to_owned(),
            hidden,
        },
    )
}

pub fn feed_forward_backward(
    params: &Parameters,
    grads: &mut [f64],
    idx: FfnIdx,
    cache: &FfnCache,
    dy: &Array2<f64>,
) -> Array2<f64> {
    let slots = &params.layout.slots;
    view_mut(grads, &slots[idx.w2]).scaled_add(1.0, &cache.hidden.t().dot(dy));
    view_mut(grads, &slots[idx.b2]).scaled_add(1.0, &dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
    let mut dh = dy.dot(&params.mat(idx.w2).t());
    Zip::from(&mut dh).and(&cache.hidden).for_each(|g, &h| {
        if h <= 0.0 {
            *g = 0.0;
        }
    });
    view_mut(grads, &slots[idx.w1]).scaled_add(1.0, &cache.input.t().dot(&dh));
    view_mut(grads, &slots[idx.b1]).scaled_add(1.0, &dh.sum_axis(Axis(0)).insert_axis(Axis(0)));
    dh.dot(&params.mat(idx.w1).t())
}

pub struct AttnCache {
    query_input: Array2<f64>,
    kv_input: Array2<f64>,
    /// Separate value source, when keys and values come from different states.
    value_input: Option<Array2<f64>>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Attention weights per head, `nq x nk`.
    weights: Vec<Array2<f64>>,
    /// Level outputs with heads concatenated, `nq x (heads * head_dim)`.
    levels: Vec<Array2<f64>>,
    level_masks: Vec<Array1<f64>>,
}

impl AttnCache {
    pub fn head_outputs(&self, num_heads: usize) -> HeadOutputs {
        let dh = self.q.ncols() / num_heads;
        HeadOutputs(
            (0..num_heads)
                .map(|z| {
                    self.levels
                        .iter()
                        .map(|o| o.slice(s![.., z * dh..(z + 1) * dh]).to_owned())
                        .collect()
                })
                .collect(),
        )
    }
}

/// Softmax rows in place; entries set to `-inf` get zero weight.
fn softmax_rows(scores: &mut Array2<f64>) {
    for mut row in scores.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Multi-head attention whose value contributions are gated per level.
///
/// Every level shares one set of attention weights per head, normalized
/// over all key positions; level `t` multiplies value row `i` by
/// `masks[t][i]` after normalization and projects through its own output
/// matrix. The outputs of all heads and levels are summed. A causal layer
/// hides keys after each query position before the softmax.
#[allow(clippy::too_many_arguments)]
pub fn attention(
    params: &Parameters,
    idx: &AttnIdx,
    query_input: ArrayView2<f64>,
    key_input: ArrayView2<f64>,
    value_input: Option<ArrayView2<f64>>,
    masks: &EndorsementMasks,
    causal: bool,
) -> (Array2<f64>, AttnCache) {
    let cfg = &params.config;
    let (h, dh) = (cfg.num_heads, cfg.head_dim);
    let scale = 1.0 / (dh as f64).sqrt();
    let q = query_input.dot(&params.mat(idx.query));
    let k = key_input.dot(&params.mat(idx.key));
    let v = value_input.unwrap_or(key_input).dot(&params.mat(idx.value));
    let (nq, nk) = (q.nrows(), k.nrows());
    let level_masks: Vec<Array1<f64>> = masks.levels().iter().map(|m| Array1::from(m.clone())).collect();
    debug_assert_eq!(level_masks.len(), idx.output.len());

    let mut weights = Vec::with_capacity(h);
    let mut levels = vec![Array2::zeros((nq, h * dh)); level_masks.len()];
    for z in 0..h {
        let cols = s![.., z * dh..(z + 1) * dh];
        let qz = q.slice(cols);
        let kz = k.slice(cols);
        let vz = v.slice(cols);
        let mut a = qz.dot(&kz.t()) * scale;
        if causal {
            for j in 0..nq {
                for i in (j + 1)..nk {
                    a[[j, i]] = f64::NEG_INFINITY;
                }
            }
        }
        softmax_rows(&mut a);
        for (level, mask) in level_masks.iter().enumerate() {
            let gated = &vz * &mask.view().insert_axis(Axis(1));
            levels[level].slice_mut(cols).assign(&a.dot(&gated));
        }
        weights.push(a);
    }
    let mut out = Array2::zeros((nq, cfg.model_dim));
    for (o, &w) in levels.iter().zip(&idx.output) {
        out += &o.dot(&params.mat(w));
    }
    let cache = AttnCache {
        query_input: query_input.to_owned(),
        kv_input: key_input.to_owned(),
        value_input: value_input.map(|v| v.to_owned()),
        q,
        k,
        v,
        weights,
        levels,
        level_masks,
    };
    (out, cache)
}

pub struct AttnGrads {
    pub query_input: Array2<f64>,
    pub key_input: Array2<f64>,
    /// Present when a separate value source was used.
    pub value_input: Option<Array2<f64>>,
}

pub fn attention_backward(
    params: &Parameters,
    grads: &mut [f64],
    idx: &AttnIdx,
    cache: &AttnCache,
    dy: &Array2<f64>,
) -> AttnGrads {
    let cfg = &params.config;
    let slots = &params.layout.slots;
    let (h, dh) = (cfg.num_heads, cfg.head_dim);
    let scale = 1.0 / (dh as f64).sqrt();

    let mut d_levels = Vec::with_capacity(cache.levels.len());
    for (o, &w) in cache.levels.iter().zip(&idx.output) {
        view_mut(grads, &slots[w]).scaled_add(1.0, &o.t().dot(dy));
        d_levels.push(dy.dot(&params.mat(w).t()));
    }

    let mut dq = Array2::zeros(cache.q.raw_dim());
    let mut dk = Array2::zeros(cache.k.raw_dim());
    let mut dv = Array2::zeros(cache.v.raw_dim());
    for z in 0..h {
        let cols = s![.., z * dh..(z + 1) * dh];
        let a = &cache.weights[z];
        let vz = cache.v.slice(cols);
        let mut da = Array2::<f64>::zeros(a.raw_dim());
        let mut dvz = Array2::<f64>::zeros(vz.raw_dim());
        for (d_level, mask) in d_levels.iter().zip(&cache.level_masks) {
            let doz = d_level.slice(cols);
            let m = mask.view().insert_axis(Axis(1));
            let gated = &vz * &m;
            da += &doz.dot(&gated.t());
            dvz += &(a.t().dot(&doz) * m);
        }
        dv.slice_mut(cols).assign(&dvz);
        // softmax backward, row by row
        let mut ds = da;
        for (mut drow, arow) in ds.rows_mut().into_iter().zip(a.rows()) {
            let dot = drow.dot(&arow);
            Zip::from(&mut drow).and(&arow).for_each(|g, &p| *g = p * (*g - dot) * scale);
        }
        dq.slice_mut(cols).assign(&ds.dot(&cache.k.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&cache.q.slice(cols)));
    }

    let value_src = cache.value_input.as_ref().unwrap_or(&cache.kv_input);
    view_mut(grads, &slots[idx.query]).scaled_add(1.0, &cache.query_input.t().dot(&dq));
    view_mut(grads, &slots[idx.key]).scaled_add(1.0, &cache.kv_input.t().dot(&dk));
    view_mut(grads, &slots[idx.value]).scaled_add(1.0, &value_src.t().dot(&dv));
    let d_query_input = dq.dot(&params.mat(idx.query).t());
    let d_key = dk.dot(&params.mat(idx.key).t());
    let d_value = dv.dot(&params.mat(idx.value).t());
    match cache.value_input {
        Some(_) => AttnGrads {
            query_input: d_query_input,
            key_input: d_key,
            value_input: Some(d_value),
        },
        None => AttnGrads {
            query_input: d_query_input,
            key_input: d_key + d_value,
            value_input: None,
        },
    }
}
