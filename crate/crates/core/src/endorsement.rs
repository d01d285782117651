//! Endorsement counting across a cluster and pseudo-document selection.
//!
//! Each document's synopsis endorses segments of the other documents it is
//! allowed to see under the configured [`EndorsementPattern`]. A token's
//! endorsement level is the number of endorsers whose segment covers it.
//! Sentences are ranked by the summed levels of their tokens and the best
//! ones are packed, in chronological order, into a [`PseudoDocument`].

use std::cmp::Ordering;
use std::collections::HashMap;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::{align, AlignmentError, AlignmentMode, ScoreVector, Synopsis};
use crate::corpus::{order_chronologically, tokenize, Cluster, TokenizedDocument};
use crate::embedding::EmbeddingProvider;
use crate::segmentation::{build_segment_mask, LengthMismatch, SegmentMask, SegmentationConfig};

pub const DEFAULT_TOKEN_BUDGET: usize = 1024;
pub const DEFAULT_TAU_MAX: usize = 2;
pub const LEAD_SYNOPSIS_SENTENCES: usize = 3;
pub const LEAD_SYNOPSIS_MAX_TOKENS: usize = 61;

#[derive(Debug, Error)]
pub enum EndorsementError {
    #[error("cluster {cluster:?}: no synopsis for document {doc_id:?}")]
    MissingSynopsis { cluster: String, doc_id: String },
    #[error("masks for {found:?} cannot be aggregated into profile of {expected:?}")]
    MixedDocuments { expected: String, found: String },
    #[error("mask for {doc_id:?} has {found} bits, document has {expected} tokens")]
    MaskLength {
        doc_id: String,
        expected: usize,
        found: usize,
    },
    #[error("invalid endorsement config: {0}")]
    Config(String),
    #[error(transparent)]
    Alignment(#[from] AlignmentError),
    #[error(transparent)]
    Length(#[from] LengthMismatch),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EndorsementPattern {
    /// Every synopsis endorses every other document.
    Reciprocal,
    /// Only synopses of chronologically later documents endorse earlier ones.
    Sequential,
}

/// What a sentence's selection score sums over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SentenceScoring {
    /// Integer endorsement counts.
    Counts,
    /// Raw alignment scores summed across all endorsers.
    RawScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndorsementConfig {
    pub pattern: EndorsementPattern,
    pub include_self: bool,
    pub alignment_mode: AlignmentMode,
    pub segmentation: SegmentationConfig,
    pub token_budget: usize,
    pub tau_max: usize,
    pub sentence_scoring: SentenceScoring,
    pub strict_exclude_unendorsed: bool,
    pub synopsis_sentences: usize,
    pub synopsis_max_tokens: usize,
}

impl Default for EndorsementConfig {
    fn default() -> Self {
        EndorsementConfig {
            pattern: EndorsementPattern::Sequential,
            include_self: false,
            alignment_mode: AlignmentMode::Soft,
            segmentation: SegmentationConfig::for_mode(AlignmentMode::Soft),
            token_budget: DEFAULT_TOKEN_BUDGET,
            tau_max: DEFAULT_TAU_MAX,
            sentence_scoring: SentenceScoring::Counts,
            strict_exclude_unendorsed: false,
            synopsis_sentences: LEAD_SYNOPSIS_SENTENCES,
            synopsis_max_tokens: LEAD_SYNOPSIS_MAX_TOKENS,
        }
    }
}

impl EndorsementConfig {
    /// Defaults for the given alignment mode, including its delta.
    pub fn for_mode(pattern: EndorsementPattern, mode: AlignmentMode) -> Self {
        EndorsementConfig {
            pattern,
            alignment_mode: mode,
            segmentation: SegmentationConfig::for_mode(mode),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), EndorsementError> {
        if self.token_budget == 0 {
            return Err(EndorsementError::Config("token_budget must be at least 1".into()));
        }
        if self.synopsis_sentences == 0 || self.synopsis_max_tokens == 0 {
            return Err(EndorsementError::Config("lead synopsis must keep at least one token".into()));
        }
        self.segmentation.validate().map_err(EndorsementError::Config)
    }
}

/// An (endorser, target) pair by cluster document index.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EndorsementPair {
    pub endorser_id: String,
    pub doc_id: String,
    pub endorser: usize,
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndorsementProfile {
    pub doc_id: String,
    pub counts: Vec<u32>,
    pub endorser_count: usize,
}

impl EndorsementProfile {
    /// Fraction of tokens with a count of at least `tau`.
    pub fn fraction_at_least(&self, tau: u32) -> f64 {
        if self.counts.is_empty() {
            return 0.0;
        }
        self.counts.iter().filter(|&&c| c >= tau).count() as f64 / self.counts.len() as f64
    }
}

/// The first sentences of a document, capped at `max_tokens`.
pub fn lead_synopsis(doc: &TokenizedDocument, sentences: usize, max_tokens: usize) -> Synopsis {
    let tokens = doc
        .tokens
        .iter()
        .take_while(|t| t.sentence_index < sentences)
        .take(max_tokens)
        .cloned()
        .collect();
    Synopsis {
        endorser_id: doc.doc_id.clone(),
        tokens,
    }
}

/// One synopsis per document, in document order: the supplied ones when the
/// cluster carries synopses, otherwise lead sentences.
pub fn cluster_synopses(
    cluster: &Cluster,
    docs: &[TokenizedDocument],
    cfg: &EndorsementConfig,
) -> Result<Vec<Synopsis>, EndorsementError> {
    match &cluster.synopses {
        None => Ok(docs
            .iter()
            .map(|d| lead_synopsis(d, cfg.synopsis_sentences, cfg.synopsis_max_tokens))
            .collect()),
        Some(supplied) => cluster
            .documents
            .iter()
            .map(|doc| {
                supplied
                    .iter()
                    .find(|s| s.doc_id == doc.doc_id)
                    .map(|s| Synopsis::from_text(doc.doc_id.clone(), &s.text))
                    .filter(|s| !s.tokens.is_empty())
                    .ok_or_else(|| EndorsementError::MissingSynopsis {
                        cluster: cluster.cluster_id.clone(),
                        doc_id: doc.doc_id.clone(),
                    })
            })
            .collect(),
    }
}

/// Which synopses endorse which documents.
///
/// Pairs are ordered by target document, then endorser, in cluster order.
pub fn endorser_targets(
    cluster: &Cluster,
    synopses: &[Synopsis],
    cfg: &EndorsementConfig,
) -> Result<Vec<EndorsementPair>, EndorsementError> {
    for doc in &cluster.documents {
        if !synopses.iter().any(|s| s.endorser_id == doc.doc_id && !s.tokens.is_empty()) {
            return Err(EndorsementError::MissingSynopsis {
                cluster: cluster.cluster_id.clone(),
                doc_id: doc.doc_id.clone(),
            });
        }
    }
    let n = cluster.documents.len();
    let mut position = vec![0; n];
    for (pos, &idx) in order_chronologically(cluster).iter().enumerate() {
        position[idx] = pos;
    }
    let mut pairs = Vec::new();
    for target in 0..n {
        for endorser in 0..n {
            let allowed = match cfg.pattern {
                EndorsementPattern::Reciprocal => endorser != target || cfg.include_self,
                EndorsementPattern::Sequential => position[endorser] > position[target],
            };
            if allowed {
                pairs.push(EndorsementPair {
                    endorser_id: cluster.documents[endorser].doc_id.clone(),
                    doc_id: cluster.documents[target].doc_id.clone(),
                    endorser,
                    target,
                });
            }
        }
    }
    Ok(pairs)
}

/// Counts, per token, how many masks endorse it.
pub fn aggregate_counts(
    doc: &TokenizedDocument,
    masks: &[SegmentMask],
) -> Result<EndorsementProfile, EndorsementError> {
    let mut counts = vec![0u32; doc.tokens.len()];
    for mask in masks {
        if mask.doc_id != doc.doc_id {
            return Err(EndorsementError::MixedDocuments {
                expected: doc.doc_id.clone(),
                found: mask.doc_id.clone(),
            });
        }
        if mask.bits.len() != counts.len() {
            return Err(EndorsementError::MaskLength {
                doc_id: doc.doc_id.clone(),
                expected: counts.len(),
                found: mask.bits.len(),
            });
        }
        for (c, &b) in counts.iter_mut().zip(&mask.bits) {
            *c += u32::from(b);
        }
    }
    Ok(EndorsementProfile {
        doc_id: doc.doc_id.clone(),
        counts,
        endorser_count: masks.len(),
    })
}

/// Sum of endorsement counts over each sentence.
pub fn score_sentences(doc: &TokenizedDocument, profile: &EndorsementProfile) -> Vec<(usize, f64)> {
    doc.sentence_spans()
        .into_iter()
        .enumerate()
        .map(|(s, span)| (s, profile.counts[span].iter().map(|&c| f64::from(c)).sum()))
        .collect()
}

/// Sum of raw alignment scores over each sentence and every endorser.
pub fn score_sentences_raw(doc: &TokenizedDocument, scores: &[&ScoreVector]) -> Vec<(usize, f64)> {
    doc.sentence_spans()
        .into_iter()
        .enumerate()
        .map(|(s, span)| {
            let total = scores
                .iter()
                .map(|sv| sv.scores[span.clone()].iter().sum::<f64>())
                .sum();
            (s, total)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudoToken {
    pub surface: String,
    pub normalized: String,
    pub endorse_count: u32,
    pub doc_id: String,
    pub sentence_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedSentence {
    pub doc_id: String,
    pub sentence_index: usize,
    pub score: f64,
    pub tokens: usize,
}

/// Budget-limited, chronologically ordered endorsed sentences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoDocument {
    pub tokens: Vec<PseudoToken>,
    /// Half-open token ranges of each admitted sentence.
    pub sentence_boundaries: Vec<(usize, usize)>,
    pub selected_sentences: Vec<SelectedSentence>,
    /// True when no sentence was endorsed and lead sentences were used.
    pub lead_fallback: bool,
    pub token_budget: usize,
}

impl PseudoDocument {
    pub fn text(&self) -> String {
        self.tokens
            .iter()
            .map(|t| t.surface.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn normalized(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.normalized.clone()).collect()
    }

    pub fn endorse_counts(&self) -> Vec<u32> {
        self.tokens.iter().map(|t| t.endorse_count).collect()
    }

    /// Whole sentences from the start while they fit in `max_tokens`. When
    /// even the first sentence is too long it is cut at `max_tokens`.
    pub fn lead_tokens(&self, max_tokens: usize) -> Vec<&PseudoToken> {
        let mut out = Vec::new();
        for &(s, e) in &self.sentence_boundaries {
            if out.len() + (e - s) > max_tokens {
                if out.is_empty() {
                    out.extend(self.tokens[s..e].iter().take(max_tokens));
                }
                break;
            }
            out.extend(&self.tokens[s..e]);
        }
        out
    }
}

/// Packs sentences into a pseudo-document.
///
/// `chronological` is the document order from [`order_chronologically`];
/// `sentence_scores[d]` scores document `d`'s sentences. Sentences are
/// admitted by descending score (ties: earlier document, then earlier
/// sentence); one that does not fit the remaining budget is skipped.
pub fn build_pseudo_document(
    docs: &[TokenizedDocument],
    chronological: &[usize],
    profiles: &[EndorsementProfile],
    sentence_scores: &[Vec<(usize, f64)>],
    cfg: &EndorsementConfig,
) -> PseudoDocument {
    let mut position = vec![0; docs.len()];
    for (pos, &idx) in chronological.iter().enumerate() {
        position[idx] = pos;
    }
    let spans: Vec<_> = docs.iter().map(|d| d.sentence_spans()).collect();

    // (doc, sentence, score)
    let mut candidates: Vec<(usize, usize, f64)> = sentence_scores
        .iter()
        .enumerate()
        .flat_map(|(d, scores)| scores.iter().map(move |&(s, score)| (d, s, score)))
        .collect();
    let any_endorsed = candidates.iter().any(|c| c.2 > 0.0);
    let lead_fallback = !any_endorsed;
    if lead_fallback {
        candidates.sort_by_key(|&(d, s, _)| (position[d], s));
    } else {
        if cfg.strict_exclude_unendorsed {
            candidates.retain(|c| c.2 > 0.0);
        }
        candidates.sort_by(|a, b| {
            b.2.partial_cmp(&a.2)
                .unwrap_or(Ordering::Equal)
                .then(position[a.0].cmp(&position[b.0]))
                .then(a.1.cmp(&b.1))
        });
    }

    let mut used = 0;
    let mut admitted = Vec::new();
    for (d, s, score) in candidates {
        let len = spans[d][s].len();
        if used + len <= cfg.token_budget {
            used += len;
            admitted.push((d, s, score));
        }
    }
    admitted.sort_by_key(|&(d, s, _)| (position[d], s));

    let mut tokens = Vec::with_capacity(used);
    let mut sentence_boundaries = Vec::with_capacity(admitted.len());
    let mut selected_sentences = Vec::with_capacity(admitted.len());
    for (d, s, score) in admitted {
        let span = spans[d][s].clone();
        let start = tokens.len();
        for i in span.clone() {
            let t = &docs[d].tokens[i];
            tokens.push(PseudoToken {
                surface: t.surface.clone(),
                normalized: t.normalized.clone(),
                endorse_count: profiles[d].counts[i],
                doc_id: docs[d].doc_id.clone(),
                sentence_index: s,
            });
        }
        sentence_boundaries.push((start, tokens.len()));
        selected_sentences.push(SelectedSentence {
            doc_id: docs[d].doc_id.clone(),
            sentence_index: s,
            score,
            tokens: span.len(),
        });
    }
    PseudoDocument {
        tokens,
        sentence_boundaries,
        selected_sentences,
        lead_fallback,
        token_budget: cfg.token_budget,
    }
}

/// Every intermediate result of endorsing one cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterEndorsement {
    pub cluster_id: String,
    pub chronological: Vec<usize>,
    pub documents: Vec<TokenizedDocument>,
    pub synopses: Vec<Synopsis>,
    pub pairs: Vec<EndorsementPair>,
    pub scores: Vec<ScoreVector>,
    pub masks: Vec<SegmentMask>,
    pub profiles: Vec<EndorsementProfile>,
    pub sentence_scores: Vec<Vec<(usize, f64)>>,
}

impl ClusterEndorsement {
    pub fn pseudo_document(&self, cfg: &EndorsementConfig) -> PseudoDocument {
        build_pseudo_document(
            &self.documents,
            &self.chronological,
            &self.profiles,
            &self.sentence_scores,
            cfg,
        )
    }
}

pub fn endorse_cluster(
    cluster: &Cluster,
    cfg: &EndorsementConfig,
    provider: &EmbeddingProvider,
) -> Result<ClusterEndorsement, EndorsementError> {
    cfg.validate()?;
    let documents: Vec<TokenizedDocument> = cluster.documents.iter().map(tokenize).collect();
    let synopses = cluster_synopses(cluster, &documents, cfg)?;
    let pairs = endorser_targets(cluster, &synopses, cfg)?;
    if cluster.documents.len() == 1 {
        warn!(
            "cluster {:?} has a single document; nothing can endorse it",
            cluster.cluster_id
        );
    }

    let mut scores = Vec::with_capacity(pairs.len());
    let mut masks = Vec::with_capacity(pairs.len());
    for pair in &pairs {
        let doc = &documents[pair.target];
        let sv = align(doc, &synopses[pair.endorser], cfg.alignment_mode, provider)?;
        masks.push(build_segment_mask(doc, &sv, &cfg.segmentation)?);
        scores.push(sv);
    }

    let mut by_target: HashMap<usize, Vec<usize>> = HashMap::new();
    for (k, pair) in pairs.iter().enumerate() {
        by_target.entry(pair.target).or_default().push(k);
    }
    let mut profiles = Vec::with_capacity(documents.len());
    let mut sentence_scores = Vec::with_capacity(documents.len());
    for (d, doc) in documents.iter().enumerate() {
        let idx = by_target.get(&d).map(Vec::as_slice).unwrap_or(&[]);
        let doc_masks: Vec<SegmentMask> = idx.iter().map(|&k| masks[k].clone()).collect();
        let profile = aggregate_counts(doc, &doc_masks)?;
        let ranked = match cfg.sentence_scoring {
            SentenceScoring::Counts => score_sentences(doc, &profile),
            SentenceScoring::RawScores => {
                let svs: Vec<&ScoreVector> = idx.iter().map(|&k| &scores[k]).collect();
                score_sentences_raw(doc, &svs)
            }
        };
        profiles.push(profile);
        sentence_scores.push(ranked);
    }

    Ok(ClusterEndorsement {
        cluster_id: cluster.cluster_id.clone(),
        chronological: order_chronologically(cluster),
        documents,
        synopses,
        pairs,
        scores,
        masks,
        profiles,
        sentence_scores,
    })
}

/// Running totals for corpus-level endorsement statistics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EndorsementStats {
    pub clusters: usize,
    pub pairs: usize,
    pub segments: usize,
    pub segment_tokens: usize,
    pub synopsis_tokens: usize,
    pub synopses: usize,
    pub tokens: usize,
    /// `tokens_at_least[t]` counts tokens endorsed `t` or more times.
    pub tokens_at_least: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub clusters: usize,
    pub mean_synopsis_length: f64,
    pub mean_segments_per_pair: f64,
    pub mean_segment_length: f64,
    /// Percentage of tokens with count >= tau, indexed by tau.
    pub percent_at_least: Vec<f64>,
}

impl EndorsementStats {
    pub fn new(tau_max: usize) -> Self {
        EndorsementStats {
            tokens_at_least: vec![0; tau_max + 1],
            ..Default::default()
        }
    }

    pub fn add(&mut self, ce: &ClusterEndorsement) {
        self.clusters += 1;
        self.pairs += ce.pairs.len();
        for mask in &ce.masks {
            self.segments += mask.segments.len();
            self.segment_tokens += mask.segments.iter().map(|s| s.len()).sum::<usize>();
        }
        self.synopses += ce.synopses.len();
        self.synopsis_tokens += ce.synopses.iter().map(|s| s.tokens.len()).sum::<usize>();
        for profile in &ce.profiles {
            self.tokens += profile.counts.len();
            for &c in &profile.counts {
                for (tau, slot) in self.tokens_at_least.iter_mut().enumerate() {
                    if c as usize >= tau {
                        *slot += 1;
                    }
                }
            }
        }
    }

    pub fn summary(&self) -> StatsSummary {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        StatsSummary {
            clusters: self.clusters,
            mean_synopsis_length: ratio(self.synopsis_tokens, self.synopses),
            mean_segments_per_pair: ratio(self.segments, self.pairs),
            mean_segment_length: ratio(self.segment_tokens, self.segments),
            percent_at_least: self
                .tokens_at_least
                .iter()
                .map(|&n| 100.0 * ratio(n, self.tokens))
                .collect(),
        }
    }
}
