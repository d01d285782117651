//! Flat parameter storage.
//!
//! All weights live in one `Vec<f64>`; a [`Layout`] names each matrix and
//! records its offset and shape. The optimizer, gradient checker and
//! checkpoint format all work on the flat vector, while the model reads
//! typed matrix views through a [`ParamIndex`].
//!
//! Projection matrices are stored input-major: a query projection is
//! `model_dim x (num_heads * head_dim)` and head `z` owns columns
//! `z * head_dim .. (z + 1) * head_dim`. An output projection is
//! `(num_heads * head_dim) x model_dim` and head `z` owns the matching rows.

use ndarray::{ArrayView2, ArrayViewMut2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use endorse_core::rng::{stream, Stream};

use crate::config::ModelConfig;
use crate::error::ModelError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NormIdx {
    pub gain: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttnIdx {
    pub query: usize,
    pub key: usize,
    pub value: usize,
    /// One output projection per endorsement level; self-attention has one.
    pub output: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FfnIdx {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderLayerIdx {
    pub norm1: NormIdx,
    pub self_attn: AttnIdx,
    pub norm2: NormIdx,
    pub ffn: FfnIdx,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecoderLayerIdx {
    pub norm1: NormIdx,
    pub self_attn: AttnIdx,
    pub norm2: NormIdx,
    pub cross_attn: AttnIdx,
    pub norm3: NormIdx,
    pub ffn: FfnIdx,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamIndex {
    pub token_embeddings: usize,
    pub position_embeddings: usize,
    pub encoder: Vec<EncoderLayerIdx>,
    pub encoder_norm: Option<NormIdx>,
    pub decoder: Vec<DecoderLayerIdx>,
    pub decoder_norm: Option<NormIdx>,
    pub output_weight: usize,
    pub output_bias: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub slots: Vec<Slot>,
    pub index: ParamIndex,
    pub total: usize,
}

struct Builder {
    slots: Vec<Slot>,
    total: usize,
}

impl Builder {
    fn add(&mut self, name: String, rows: usize, cols: usize) -> usize {
        self.slots.push(Slot {
            name,
            offset: self.total,
            rows,
            cols,
        });
        self.total += rows * cols;
        self.slots.len() - 1
    }

    fn norm(&mut self, prefix: &str, dim: usize) -> NormIdx {
        NormIdx {
            gain: self.add(format!("{prefix}.gain"), 1, dim),
            bias: self.add(format!("{prefix}.bias"), 1, dim),
        }
    }

    fn attn(&mut self, prefix: &str, cfg: &ModelConfig, levels: usize) -> AttnIdx {
        let inner = cfg.num_heads * cfg.head_dim;
        AttnIdx {
            query: self.add(format!("{prefix}.query"), cfg.model_dim, inner),
            key: self.add(format!("{prefix}.key"), cfg.model_dim, inner),
            value: self.add(format!("{prefix}.value"), cfg.model_dim, inner),
            output: (0..levels)
                .map(|t| self.add(format!("{prefix}.output.{t}"), inner, cfg.model_dim))
                .collect(),
        }
    }

    fn ffn(&mut self, prefix: &str, cfg: &ModelConfig) -> FfnIdx {
        FfnIdx {
            w1: self.add(format!("{prefix}.w1"), cfg.model_dim, cfg.ffn_dim),
            b1: self.add(format!("{prefix}.b1"), 1, cfg.ffn_dim),
            w2: self.add(format!("{prefix}.w2"), cfg.ffn_dim, cfg.model_dim),
            b2: self.add(format!("{prefix}.b2"), 1, cfg.model_dim),
        }
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.model_dim;
        let mut b = Builder {
            slots: Vec::new(),
            total: 0,
        };
        let token_embeddings = b.add("token_embeddings".into(), cfg.vocab_size, d);
        let position_embeddings = b.add("position_embeddings".into(), cfg.max_positions, d);
        let encoder = (0..cfg.num_layers)
            .map(|l| {
                let p = format!("encoder.{l}");
                EncoderLayerIdx {
                    norm1: b.norm(&format!("{p}.norm1"), d),
                    self_attn: b.attn(&format!("{p}.self_attn"), cfg, 1),
                    norm2: b.norm(&format!("{p}.norm2"), d),
                    ffn: b.ffn(&format!("{p}.ffn"), cfg),
                }
            })
            .collect();
        let encoder_norm = (cfg.num_layers > 0).then(|| b.norm("encoder.norm", d));
        let decoder = (0..cfg.num_layers)
            .map(|l| {
                let p = format!("decoder.{l}");
                DecoderLayerIdx {
                    norm1: b.norm(&format!("{p}.norm1"), d),
                    self_attn: b.attn(&format!("{p}.self_attn"), cfg, 1),
                    norm2: b.norm(&format!("{p}.norm2"), d),
                    cross_attn: b.attn(&format!("{p}.cross_attn"), cfg, cfg.tau_max + 1),
                    norm3: b.norm(&format!("{p}.norm3"), d),
                    ffn: b.ffn(&format!("{p}.ffn"), cfg),
                }
            })
            .collect();
        let decoder_norm = (cfg.num_layers > 0).then(|| b.norm("decoder.norm", d));
        let output_weight = b.add("output.weight".into(), d, cfg.vocab_size);
        let output_bias = b.add("output.bias".into(), 1, cfg.vocab_size);
        Layout {
            slots: b.slots,
            total: b.total,
            index: ParamIndex {
                token_embeddings,
                position_embeddings,
                encoder,
                encoder_norm,
                decoder,
                decoder_norm,
                output_weight,
                output_bias,
            },
        }
    }

    pub fn slot_named(&self, name: &str) -> Option<usize> {
        self.slots.iter().position(|s| s.name == name)
    }

    /// Slots holding companion output projections (levels >= 1).
    pub fn companion_slots(&self) -> Vec<usize> {
        self.index
            .decoder
            .iter()
            .flat_map(|l| l.cross_attn.output.iter().skip(1).copied())
            .collect()
    }

    /// Slots of one companion level across all decoder layers.
    pub fn level_slots(&self, tau: usize) -> Vec<usize> {
        self.index
            .decoder
            .iter()
            .filter_map(|l| l.cross_attn.output.get(tau).copied())
            .collect()
    }
}

pub fn view<'a>(values: &'a [f64], slot: &Slot) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((slot.rows, slot.cols), &values[slot.range()]).expect("slot shape")
}

pub fn view_mut<'a>(values: &'a mut [f64], slot: &Slot) -> ArrayViewMut2<'a, f64> {
    ArrayViewMut2::from_shape((slot.rows, slot.cols), &mut values[slot.range()]).expect("slot shape")
}

/// Model weights together with their configuration and layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub config: ModelConfig,
    pub layout: Layout,
    pub values: Vec<f64>,
}

impl Parameters {
    pub fn zeros(config: &ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = Layout::new(config);
        Ok(Parameters {
            config: config.clone(),
            values: vec![0.0; layout.total],
            layout,
        })
    }

    /// Random initialization from the seed's init stream.
    ///
    /// Norm gains start at one and biases at zero. Matrices draw uniformly
    /// with Glorot scaling; embeddings use a fixed small range and the
    /// vocabulary projection a tenth of its Glorot range so the initial
    /// predictive distribution is close to uniform. Every cross-attention
    /// head draws one output projection and splits it across levels by the
    /// configured coefficients, so the level projections sum to it.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let mut params = Parameters::zeros(config)?;
        let mut rng = stream(seed, Stream::Init);
        let idx = params.layout.index.clone();
        let slots = params.layout.slots.clone();

        let mut uniform = |values: &mut [f64], slot: &Slot, bound: f64| {
            for v in &mut values[slot.range()] {
                *v = rng.gen_range(-bound..bound);
            }
        };
        let glorot = |s: &Slot| (6.0 / (s.rows + s.cols) as f64).sqrt();
        let emb = 0.5;
        uniform(&mut params.values, &slots[idx.token_embeddings], emb);
        uniform(&mut params.values, &slots[idx.position_embeddings], emb);

        let mut norms = Vec::new();
        let mut matrices = Vec::new();
        let mut split_outputs = Vec::new();
        for l in &idx.encoder {
            norms.extend([l.norm1, l.norm2]);
            matrices.extend([l.self_attn.query, l.self_attn.key, l.self_attn.value, l.self_attn.output[0]]);
            matrices.extend([l.ffn.w1, l.ffn.w2]);
        }
        for l in &idx.decoder {
            norms.extend([l.norm1, l.norm2, l.norm3]);
            matrices.extend([l.self_attn.query, l.self_attn.key, l.self_attn.value, l.self_attn.output[0]]);
            matrices.extend([l.cross_attn.query, l.cross_attn.key, l.cross_attn.value]);
            matrices.extend([l.ffn.w1, l.ffn.w2]);
            split_outputs.push(l.cross_attn.output.clone());
        }
        norms.extend(idx.encoder_norm);
        norms.extend(idx.decoder_norm);
        for n in norms {
            params.values[slots[n.gain].range()].fill(1.0);
        }
        for m in matrices {
            uniform(&mut params.values, &slots[m], glorot(&slots[m]));
        }
        for levels in split_outputs {
            let base = &slots[levels[0]];
            uniform(&mut params.values, base, glorot(base));
            let shared: Vec<f64> = params.values[base.range()].to_vec();
            for (tau, &s) in levels.iter().enumerate() {
                let lambda = config.lambdas[tau];
                for (v, w) in params.values[slots[s].range()].iter_mut().zip(&shared) {
                    *v = lambda * w;
                }
            }
        }
        let out = &slots[idx.output_weight];
        uniform(&mut params.values, out, 0.1 * glorot(out));
        Ok(params)
    }

    pub fn slot(&self, id: usize) -> &Slot {
        &self.layout.slots[id]
    }

    pub fn mat(&self, id: usize) -> ArrayView2<'_, f64> {
        view(&self.values, &self.layout.slots[id])
    }

    pub fn mat_mut(&mut self, id: usize) -> ArrayViewMut2<'_, f64> {
        view_mut(&mut self.values, &self.layout.slots[id])
    }

    pub fn named(&self, name: &str) -> Option<ArrayView2<'_, f64>> {
        self.layout.slot_named(name).map(|id| self.mat(id))
    }

    /// Equivalent parameters with only the original heads, whose output
    /// projection is the sum of all level projections.
    pub fn collapse_companions(&self) -> Parameters {
        let cfg = self.config.without_companions();
        let mut out = Parameters::zeros(&cfg).expect("collapsed config is valid");
        for slot in &out.layout.slots.clone() {
            let src = self.layout.slot_named(&slot.name);
            if let Some(src) = src {
                let range = self.layout.slots[src].range();
                out.values[slot.range()].copy_from_slice(&self.values[range]);
            }
        }
        for (l, layer) in self.layout.index.decoder.iter().enumerate() {
            let target = out.layout.index.decoder[l].cross_attn.output[0];
            let mut sum = out.mat(target).to_owned();
            sum.fill(0.0);
            for &s in &layer.cross_attn.output {
                sum += &self.mat(s);
            }
            out.mat_mut(target).assign(&sum);
        }
        out
    }
}
