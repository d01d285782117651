//! Cross-document endorsement for multi-document summarization.
//!
//! The pipeline runs in stages. Every document of a [`Cluster`] is
//! tokenized; a short synopsis of each document acts as an *endorser* that
//! aligns against the other documents ([`alignment`]); per-sentence maximum
//! sum subarray selection turns the alignment scores into endorsed segments
//! ([`segmentation`]); masks are counted into per-token endorsement levels
//! and the most endorsed sentences form a budget-limited pseudo-document
//! ([`endorsement`]). [`rouge`] scores the resulting summaries.

pub mod alignment;
pub mod corpus;
pub mod embedding;
pub mod endorsement;
pub mod rng;
pub mod rouge;
pub mod segmentation;
pub mod synthetic;

pub use alignment::{hard_align, soft_align, AlignmentError, AlignmentMode, ScoreVector, Synopsis};
pub use corpus::{
    load_clusters, order_chronologically, parse_clusters, tokenize, Cluster, CorpusError,
    Document, SynopsisText, Token, TokenizedDocument,
};
pub use embedding::{cosine, EmbeddingError, EmbeddingProvider, EmbeddingVector};
pub use endorsement::{
    EndorsementConfig, EndorsementError, EndorsementPattern, EndorsementProfile, PseudoDocument,
};
pub use segmentation::{max_sum_subarray, SegmentMask, SegmentationConfig};
