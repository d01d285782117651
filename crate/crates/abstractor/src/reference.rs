//! A slow, loop-based forward pass used to cross-check the model.
//!
//! It reads weights by slot name and shares no code with the ndarray
//! implementation. With `tau_max = 0` it is a plain pre-norm transformer.

use crate::params::Parameters;

type Mat = Vec<Vec<f64>>;

struct Weights<'a> {
    p: &'a Parameters,
}

impl Weights<'_> {
    fn get(&self, name: &str) -> Mat {
        let id = self.p.layout.slot_named(name).unwrap_or_else(|| panic!("missing slot {name}"));
        let s = &self.p.layout.slots[id];
        (0..s.rows)
            .map(|r| (0..s.cols).map(|c| self.p.values[s.offset + r * s.cols + c]).collect())
            .collect()
    }
}

fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut acc = 0.0;
            for t in 0..k {
                acc += a[i][t] * b[t][j];
            }
            out[i][j] = acc;
        }
    }
    out
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(u, v)| u + v).collect()).collect()
}

fn add_row(a: &Mat, row: &[f64]) -> Mat {
    a.iter().map(|x| x.iter().zip(row).map(|(u, v)| u + v).collect()).collect()
}

fn norm(w: &Weights, prefix: &str, x: &Mat) -> Mat {
    let g = &w.get(&format!("{prefix}.gain"))[0];
    let b = &w.get(&format!("{prefix}.bias"))[0];
    x.iter()
        .map(|row| {
            let d = row.len() as f64;
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let s = (var + crate::layers::LAYER_NORM_EPS).sqrt();
            row.iter().enumerate().map(|(i, v)| (v - mean) / s * g[i] + b[i]).collect()
        })
        .collect()
}

fn ffn(w: &Weights, prefix: &str, x: &Mat) -> Mat {
    let h = add_row(&matmul(x, &w.get(&format!("{prefix}.w1"))), &w.get(&format!("{prefix}.b1"))[0]);
    let h: Mat = h.into_iter().map(|r| r.into_iter().map(|v| v.max(0.0)).collect()).collect();
    add_row(&matmul(&h, &w.get(&format!("{prefix}.w2"))), &w.get(&format!("{prefix}.b2"))[0])
}

/// Attention with per-level value gates; `gates[t][i]` multiplies value `i`
/// for level `t` after the softmax.
fn attend(w: &Weights, prefix: &str, xq: &Mat, xkv: &Mat, gates: &[Vec<f64>], causal: bool) -> Mat {
    let cfg = &w.p.config;
    let (heads, dh) = (cfg.num_heads, cfg.head_dim);
    let q = matmul(xq, &w.get(&format!("{prefix}.query")));
    let k = matmul(xkv, &w.get(&format!("{prefix}.key")));
    let v = matmul(xkv, &w.get(&format!("{prefix}.value")));
    let outputs: Vec<Mat> = (0..gates.len()).map(|t| w.get(&format!("{prefix}.output.{t}"))).collect();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = vec![vec![0.0; cfg.model_dim]; xq.len()];
    for j in 0..xq.len() {
        for z in 0..heads {
            let visible = if causal { j + 1 } else { xkv.len() };
            let scores: Vec<f64> = (0..visible)
                .map(|i| (0..dh).map(|c| q[j][z * dh + c] * k[i][z * dh + c]).sum::<f64>() * scale)
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            for (t, gate) in gates.iter().enumerate() {
                let mut head = vec![0.0; dh];
                for i in 0..visible {
                    let a = exps[i] / total * gate[i];
                    for c in 0..dh {
                        head[c] += a * v[i][z * dh + c];
                    }
                }
                for (c, hv) in head.iter().enumerate() {
                    for (e, o) in out[j].iter_mut().enumerate() {
                        *o += hv * outputs[t][z * dh + c][e];
                    }
                }
            }
        }
    }
    out
}

fn embed(w: &Weights, ids: &[u32]) -> Mat {
    let e = w.get("token_embeddings");
    let p = w.get("position_embeddings");
    ids.iter()
        .enumerate()
        .map(|(i, &id)| e[id as usize].iter().zip(&p[i]).map(|(a, b)| a + b).collect())
        .collect()
}

pub fn encode(params: &Parameters, ids: &[u32]) -> Mat {
    let w = Weights { p: params };
    let mut x = embed(&w, ids);
    let ones = vec![vec![1.0; ids.len()]];
    for l in 0..params.config.num_layers {
        let p = format!("encoder.{l}");
        let n = norm(&w, &format!("{p}.norm1"), &x);
        x = add(&x, &attend(&w, &format!("{p}.self_attn"), &n, &n, &ones, false));
        let n = norm(&w, &format!("{p}.norm2"), &x);
        x = add(&x, &ffn(&w, &format!("{p}.ffn"), &n));
    }
    if params.config.num_layers > 0 {
        x = norm(&w, "encoder.norm", &x);
    }
    x
}

/// Logits at every position of `prefix`, with companion levels gated from `counts`.
pub fn decoder_logits(params: &Parameters, encoder_states: &Mat, counts: &[u32], prefix: &[u32]) -> Mat {
    let w = Weights { p: params };
    let gates: Vec<Vec<f64>> = (0..=params.config.tau_max)
        .map(|t| counts.iter().map(|&c| if c as usize >= t { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut x = embed(&w, prefix);
    let ones = vec![vec![1.0; prefix.len()]];
    for l in 0..params.config.num_layers {
        let p = format!("decoder.{l}");
        let n = norm(&w, &format!("{p}.norm1"), &x);
        x = add(&x, &attend(&w, &format!("{p}.self_attn"), &n, &n, &ones, true));
        let n = norm(&w, &format!("{p}.norm2"), &x);
        x = add(&x, &attend(&w, &format!("{p}.cross_attn"), &n, encoder_states, &gates, false));
        let n = norm(&w, &format!("{p}.norm3"), &x);
        x = add(&x, &ffn(&w, &format!("{p}.ffn"), &n));
    }
    if params.config.num_layers > 0 {
        x = norm(&w, "decoder.norm", &x);
    }
    add_row(&matmul(&x, &w.get("output.weight")), &w.get("output.bias")[0])
}
