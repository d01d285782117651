//! Contiguous endorsed segments from token scores.
//!
//! Scores are offset by `delta` so that weak matches turn negative, then the
//! maximum-sum contiguous span of each sentence becomes that sentence's
//! endorsed segment.

use serde::{Deserialize, Serialize};

use crate::alignment::{AlignmentMode, ScoreVector};
use crate::corpus::TokenizedDocument;

pub const SOFT_DELTA: f64 = 0.85;
pub const HARD_DELTA: f64 = 0.8;
pub const MIN_SEGMENT_TOKENS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationConfig {
    pub delta: f64,
    pub min_segment_tokens: usize,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig::for_mode(AlignmentMode::Soft)
    }
}

impl SegmentationConfig {
    pub fn for_mode(mode: AlignmentMode) -> Self {
        let delta = match mode {
            AlignmentMode::Soft => SOFT_DELTA,
            AlignmentMode::Hard => HARD_DELTA,
        };
        SegmentationConfig {
            delta,
            min_segment_tokens: MIN_SEGMENT_TOKENS,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.min_segment_tokens == 0 {
            return Err("min_segment_tokens must be at least 1".into());
        }
        if !self.delta.is_finite() {
            return Err("delta must be finite".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub sentence_index: usize,
    /// Document token index, inclusive.
    pub start: usize,
    /// Document token index, exclusive.
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Endorsed tokens of one document under one endorser.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentMask {
    pub doc_id: String,
    pub endorser_id: String,
    pub bits: Vec<u8>,
    pub segments: Vec<Segment>,
}

#[derive(Debug, thiserror::Error)]
#[error("score vector for {sv_doc:?} has {sv_len} scores but document {doc:?} has {doc_len} tokens")]
pub struct LengthMismatch {
    pub doc: String,
    pub doc_len: usize,
    pub sv_doc: String,
    pub sv_len: usize,
}

/// Kadane's algorithm over `scores`, returning the half-open span with the
/// largest sum.
///
/// Ties go to the smallest start, then the largest end. Returns `None` when
/// no span has a strictly positive sum. Sums accumulate left to right from
/// the span start, so the reported span's sum is bit-identical to summing it
/// directly.
pub fn max_sum_subarray(scores: &[f64]) -> Option<(usize, usize)> {
    let mut best: Option<(f64, usize, usize)> = None;
    let mut running = 0.0;
    let mut start = 0;
    for (i, &x) in scores.iter().enumerate() {
        if i > start && running >= 0.0 {
            running += x;
        } else {
            start = i;
            running = x;
        }
        let end = i + 1;
        let better = match best {
            None => true,
            Some((sum, s, e)) => {
                running > sum || (running == sum && (start < s || (start == s && end > e)))
            }
        };
        if better {
            best = Some((running, start, end));
        }
    }
    best.filter(|&(sum, _, _)| sum > 0.0).map(|(_, s, e)| (s, e))
}

/// Best endorsed span of one sentence's raw scores, if long enough.
pub fn segment_sentence(scores: &[f64], cfg: &SegmentationConfig) -> Option<(usize, usize)> {
    let offset: Vec<f64> = scores.iter().map(|s| s - cfg.delta).collect();
    max_sum_subarray(&offset).filter(|&(s, e)| e - s >= cfg.min_segment_tokens)
}

pub fn build_segment_mask(
    doc: &TokenizedDocument,
    sv: &ScoreVector,
    cfg: &SegmentationConfig,
) -> Result<SegmentMask, LengthMismatch> {
    if sv.scores.len() != doc.tokens.len() {
        return Err(LengthMismatch {
            doc: doc.doc_id.clone(),
            doc_len: doc.tokens.len(),
            sv_doc: sv.doc_id.clone(),
            sv_len: sv.scores.len(),
        });
    }
    let mut bits = vec![0u8; doc.tokens.len()];
    let mut segments = Vec::new();
    for (sentence_index, span) in doc.sentence_spans().into_iter().enumerate() {
        if let Some((s, e)) = segment_sentence(&sv.scores[span.clone()], cfg) {
            let seg = Segment {
                sentence_index,
                start: span.start + s,
                end: span.start + e,
            };
            bits[seg.start..seg.end].fill(1);
            segments.push(seg);
        }
    }
    Ok(SegmentMask {
        doc_id: doc.doc_id.clone(),
        endorser_id: sv.endorser_id.clone(),
        bits,
        segments,
    })
}
