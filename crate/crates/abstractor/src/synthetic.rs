//! Copy-the-endorsed-span task.
//!
//! Each source is a sequence of distinct content tokens in which one
//! contiguous span carries positive endorsement counts. The target is that
//! span in order, followed by EOS. Nothing but the counts marks the span,
//! so a model can only solve the task by reading its endorsement masks.

use rand::seq::index::sample;
use rand::Rng;

use crate::model::{EndorsedInput, Example};
use crate::vocab::{Vocab, EOS, SPECIALS};

#[derive(Debug, Clone, PartialEq)]
pub struct CopyTaskSpec {
    pub content_tokens: usize,
    pub min_source_len: usize,
    pub max_source_len: usize,
    pub min_span: usize,
    pub max_span: usize,
    pub max_count: u32,
}

impl Default for CopyTaskSpec {
    fn default() -> Self {
        CopyTaskSpec {
            content_tokens: 40,
            min_source_len: 10,
            max_source_len: 14,
            min_span: 3,
            max_span: 5,
            max_count: 2,
        }
    }
}

impl CopyTaskSpec {
    pub fn vocab(&self) -> Vocab {
        Vocab::from_words((0..self.content_tokens).map(|i| format!("t{i}")))
    }

    pub fn vocab_size(&self) -> usize {
        self.content_tokens + SPECIALS.len()
    }

    pub fn example(&self, rng: &mut impl Rng) -> Example {
        let n = rng.gen_range(self.min_source_len..=self.max_source_len);
        let first = SPECIALS.len() as u32;
        let token_ids: Vec<u32> = sample(rng, self.content_tokens, n)
            .into_iter()
            .map(|i| first + i as u32)
            .collect();
        let len = rng.gen_range(self.min_span..=self.max_span.min(n));
        let start = rng.gen_range(0..=n - len);
        let mut counts = vec![0u32; n];
        for c in &mut counts[start..start + len] {
            *c = rng.gen_range(1..=self.max_count);
        }
        let mut target = token_ids[start..start + len].to_vec();
        target.push(EOS);
        Example {
            input: EndorsedInput {
                token_ids,
                endorse_counts: counts,
            },
            target,
        }
    }

    pub fn dataset(&self, rng: &mut impl Rng, size: usize) -> Vec<Example> {
        (0..size).map(|_| self.example(rng)).collect()
    }
}
