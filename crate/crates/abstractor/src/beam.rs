//! Beam search with length-normalized scores.

use ndarray::Array1;

use crate::attention::EndorsementMasks;
use crate::config::BeamConfig;
use crate::error::ModelError;
use crate::model::{self, EndorsedInput};
use crate::params::Parameters;
use crate::vocab::{BOS, EOS};

/// Source of next-token log-probabilities for a partial hypothesis.
pub trait StepScorer {
    fn vocab_size(&self) -> usize;
    /// Log-probabilities of the next token after `prefix` (which starts with BOS).
    fn log_probs(&self, prefix: &[u32]) -> Result<Vec<f64>, ModelError>;
}

/// A finished or partial decode. `tokens` excludes BOS and includes EOS
/// when the hypothesis finished by emitting it.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<u32>,
    pub log_prob: f64,
}

impl Hypothesis {
    pub fn score(&self) -> f64 {
        if self.tokens.is_empty() {
            self.log_prob
        } else {
            self.log_prob / self.tokens.len() as f64
        }
    }

    /// Tokens without the trailing EOS.
    pub fn content(&self) -> &[u32] {
        match self.tokens.last() {
            Some(&EOS) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

fn better(a: &Hypothesis, b: &Hypothesis) -> std::cmp::Ordering {
    b.score().total_cmp(&a.score()).then_with(|| a.tokens.cmp(&b.tokens))
}

/// Decode with `K = beam.beam_size` hypotheses.
///
/// Hypotheses are ranked by log-probability divided by generated length
/// (EOS included). EOS cannot be chosen before `min_decode_len` tokens and
/// every hypothesis stops at `max_decode_len`. An extension ending in EOS
/// is finished when it ranks among the top `K` candidates of its step;
/// search ends once `K` hypotheses have finished or no live ones remain.
/// The best finished hypothesis is returned.
pub fn beam_search(scorer: &dyn StepScorer, beam: &BeamConfig) -> Result<Hypothesis, ModelError> {
    beam.validate()?;
    let k = beam.beam_size;
    let vocab = scorer.vocab_size();
    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    while !live.is_empty() && finished.len() < k {
        let step = live[0].tokens.len();
        let mut candidates = Vec::with_capacity(live.len() * vocab);
        for hyp in &live {
            let mut prefix = Vec::with_capacity(step + 1);
            prefix.push(BOS);
            prefix.extend_from_slice(&hyp.tokens);
            let lp = scorer.log_probs(&prefix)?;
            for (tok, &l) in lp.iter().enumerate() {
                let tok = tok as u32;
                if tok == BOS || (tok == EOS && step + 1 < beam.min_decode_len.max(1)) || !l.is_finite() {
                    continue;
                }
                let mut tokens = hyp.tokens.clone();
                tokens.push(tok);
                candidates.push(Hypothesis {
                    tokens,
                    log_prob: hyp.log_prob + l,
                });
            }
        }
        candidates.sort_by(better);
        live.clear();
        for cand in candidates.into_iter().take(k) {
            if cand.tokens.last() == Some(&EOS) || cand.tokens.len() >= beam.max_decode_len {
                finished.push(cand);
            } else {
                live.push(cand);
            }
        }
    }
    finished.sort_by(better);
    finished
        .into_iter()
        .next()
        .ok_or(ModelError::Empty("beam search produced no hypothesis"))
}

/// Argmax decoding under the same length constraints.
pub fn greedy(scorer: &dyn StepScorer, beam: &BeamConfig) -> Result<Hypothesis, ModelError> {
    beam.validate()?;
    let mut hyp = Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
    };
    loop {
        let step = hyp.tokens.len();
        let mut prefix = vec![BOS];
        prefix.extend_from_slice(&hyp.tokens);
        let lp = scorer.log_probs(&prefix)?;
        let mut best: Option<(u32, f64)> = None;
        for (tok, &l) in lp.iter().enumerate() {
            let tok = tok as u32;
            if tok == BOS || (tok == EOS && step + 1 < beam.min_decode_len.max(1)) || !l.is_finite() {
                continue;
            }
            if best.is_none_or(|(_, b)| l > b) {
                best = Some((tok, l));
            }
        }
        let (tok, l) = best.ok_or(ModelError::Empty("no admissible token"))?;
        hyp.tokens.push(tok);
        hyp.log_prob += l;
        if tok == EOS || hyp.tokens.len() >= beam.max_decode_len {
            return Ok(hyp);
        }
    }
}

/// Scores continuations with a trained model over one encoded source.
pub struct ModelScorer<'a> {
    params: &'a Parameters,
    encoder_states: ndarray::Array2<f64>,
    masks: EndorsementMasks,
}

impl<'a> ModelScorer<'a> {
    pub fn new(params: &'a Parameters, input: &EndorsedInput) -> Result<Self, ModelError> {
        let encoder_states = model::encode(params, &input.token_ids)?;
        Ok(ModelScorer {
            params,
            encoder_states,
            masks: input.masks(params.config.tau_max),
        })
    }
}

impl StepScorer for ModelScorer<'_> {
    fn vocab_size(&self) -> usize {
        self.params.config.vocab_size
    }

    fn log_probs(&self, prefix: &[u32]) -> Result<Vec<f64>, ModelError> {
        let logits: Array1<f64> = model::decode_step(self.params, self.encoder_states.view(), &self.masks, prefix)?;
        let lp = model::log_softmax(logits.view().insert_axis(ndarray::Axis(0)));
        Ok(lp.row(0).to_vec())
    }
}

/// Beam-search decode of `input`; the prefix is limited by the model's
/// position table as well as `beam.max_decode_len`.
pub fn decode(params: &Parameters, beam: &BeamConfig, input: &EndorsedInput) -> Result<Hypothesis, ModelError> {
    let scorer = ModelScorer::new(params, input)?;
    let cap = params.config.max_positions;
    let mut beam = *beam;
    beam.max_decode_len = beam.max_decode_len.min(cap);
    beam.min_decode_len = beam.min_decode_len.min(beam.max_decode_len);
    beam_search(&scorer, &beam)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Fixed next-token table keyed by the previous token.
    struct Table {
        rows: Vec<Vec<f64>>,
    }

    impl StepScorer for Table {
        fn vocab_size(&self) -> usize {
            self.rows[0].len()
        }
        fn log_probs(&self, prefix: &[u32]) -> Result<Vec<f64>, ModelError> {
            let last = *prefix.last().unwrap() as usize;
            let row = &self.rows[last];
            let z: f64 = row.iter().sum();
            Ok(row.iter().map(|p| (p / z).ln()).collect())
        }
    }

    fn table() -> Table {
        // tokens: 0 unk, 1 bos, 2 eos, 3 a, 4 b
        Table {
            rows: vec![
                vec![1.0, 1.0, 1.0, 1.0, 1.0],
                vec![0.1, 0.0, 0.3, 0.4, 0.2],
                vec![1.0, 1.0, 1.0, 1.0, 1.0],
                vec![0.05, 0.0, 0.45, 0.1, 0.4],
                vec![0.1, 0.0, 0.2, 0.6, 0.1],
            ],
        }
    }

    #[test]
    fn respects_length_bounds() {
        let t = table();
        for (lo, hi) in [(1, 1), (1, 5), (3, 3), (4, 9)] {
            let beam = BeamConfig {
                beam_size: 3,
                min_decode_len: lo,
                max_decode_len: hi,
            };
            let h = beam_search(&t, &beam).unwrap();
            assert!(h.tokens.len() >= lo && h.tokens.len() <= hi, "{lo} {hi} {:?}", h.tokens);
            let g = greedy(&t, &beam).unwrap();
            assert!(g.tokens.len() >= lo && g.tokens.len() <= hi);
        }
    }

    #[test]
    fn width_one_is_greedy() {
        let t = table();
        for (lo, hi) in [(1, 6), (2, 4), (5, 5)] {
            let beam = BeamConfig {
                beam_size: 1,
                min_decode_len: lo,
                max_decode_len: hi,
            };
            assert_eq!(beam_search(&t, &beam).unwrap(), greedy(&t, &beam).unwrap());
        }
    }
}
