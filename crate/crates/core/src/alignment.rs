//! Token-level alignment of a candidate document against one synopsis.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{tokenize_text, Token, TokenizedDocument};
use crate::embedding::{cosine, EmbeddingError, EmbeddingProvider, EmbeddingVector};

#[derive(Debug, Error)]
pub enum AlignmentError {
    #[error("synopsis {0:?} has no tokens")]
    EmptySynopsis(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignmentMode {
    Soft,
    Hard,
}

/// A short summary of one document, used as an endorser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Synopsis {
    pub endorser_id: String,
    pub tokens: Vec<Token>,
}

impl Synopsis {
    pub fn from_text(endorser_id: impl Into<String>, text: &str) -> Self {
        Synopsis {
            endorser_id: endorser_id.into(),
            tokens: tokenize_text(text),
        }
    }
}

/// Per-token scores of one document under one endorser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub doc_id: String,
    pub endorser_id: String,
    pub mode: AlignmentMode,
    pub scores: Vec<f64>,
}

pub fn align(
    doc: &TokenizedDocument,
    syn: &Synopsis,
    mode: AlignmentMode,
    provider: &EmbeddingProvider,
) -> Result<ScoreVector, AlignmentError> {
    match mode {
        AlignmentMode::Soft => soft_align(doc, syn, provider),
        AlignmentMode::Hard => hard_align(doc, syn),
    }
}

/// Scores each document token by its best cosine similarity to any synopsis
/// token. The alignment is greedy: synopsis tokens may be reused.
pub fn soft_align(
    doc: &TokenizedDocument,
    syn: &Synopsis,
    provider: &EmbeddingProvider,
) -> Result<ScoreVector, AlignmentError> {
    if syn.tokens.is_empty() {
        return Err(AlignmentError::EmptySynopsis(syn.endorser_id.clone()));
    }
    let syn_vectors: Vec<EmbeddingVector> = syn
        .tokens
        .iter()
        .map(|t| provider.embed(&t.normalized))
        .collect();
    let mut memo: HashMap<&str, f64> = HashMap::new();
    let mut scores = Vec::with_capacity(doc.tokens.len());
    for token in &doc.tokens {
        let score = match memo.get(token.normalized.as_str()) {
            Some(&s) => s,
            None => {
                let v = provider.embed(&token.normalized);
                let mut best = f64::NEG_INFINITY;
                for y in &syn_vectors {
                    best = best.max(cosine(&v, y)?);
                }
                memo.insert(&token.normalized, best);
                best
            }
        };
        scores.push(score);
    }
    Ok(ScoreVector {
        doc_id: doc.doc_id.clone(),
        endorser_id: syn.endorser_id.clone(),
        mode: AlignmentMode::Soft,
        scores,
    })
}

/// Scores a document token 1 when its normalized form occurs in the
/// synopsis, else 0.
pub fn hard_align(doc: &TokenizedDocument, syn: &Synopsis) -> Result<ScoreVector, AlignmentError> {
    if syn.tokens.is_empty() {
        return Err(AlignmentError::EmptySynopsis(syn.endorser_id.clone()));
    }
    let vocab: HashSet<&str> = syn.tokens.iter().map(|t| t.normalized.as_str()).collect();
    let scores = doc
        .tokens
        .iter()
        .map(|t| if vocab.contains(t.normalized.as_str()) { 1.0 } else { 0.0 })
        .collect();
    Ok(ScoreVector {
        doc_id: doc.doc_id.clone(),
        endorser_id: syn.endorser_id.clone(),
        mode: AlignmentMode::Hard,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{tokenize, Document};
    use proptest::prelude::*;

    fn doc_of(words: &[&str]) -> TokenizedDocument {
        tokenize(&Document {
            doc_id: "d".into(),
            date: None,
            raw_text: words.join(" "),
        })
    }

    fn syn_of(words: &[&str]) -> Synopsis {
        Synopsis::from_text("s", &words.join(" "))
    }

    fn brute_force(doc: &TokenizedDocument, syn: &Synopsis, p: &EmbeddingProvider) -> Vec<f64> {
        let mut out = Vec::new();
        for x in &doc.tokens {
            let mut best = f64::NEG_INFINITY;
            for y in &syn.tokens {
                let c = cosine(&p.embed(&x.normalized), &p.embed(&y.normalized)).unwrap();
                if c > best {
                    best = c;
                }
            }
            out.push(best);
        }
        out
    }

    #[test]
    fn hard_examples() {
        let sv = hard_align(&doc_of(&["a", "b", "c"]), &syn_of(&["b"])).unwrap();
        assert_eq!(sv.scores, vec![0.0, 1.0, 0.0]);
        let d = doc_of(&["x", "y", "z"]);
        assert_eq!(hard_align(&d, &syn_of(&["x", "y", "z"])).unwrap().scores, vec![1.0; 3]);
        let sv = hard_align(&doc_of(&["US", "us"]), &syn_of(&["Us"])).unwrap();
        assert_eq!(sv.scores, vec![1.0, 1.0]);
        assert_eq!(sv.mode, AlignmentMode::Hard);
    }

    #[test]
    fn soft_identity_and_single_token() {
        let p = EmbeddingProvider::hashed(32, 5);
        let words = ["leaders", "pledge", "eight", "billion"];
        let sv = soft_align(&doc_of(&words), &syn_of(&words), &p).unwrap();
        for s in sv.scores {
            assert!((s - 1.0).abs() < 1e-12);
        }
        let syn = syn_of(&["alpha", "beta", "gamma"]);
        let one = soft_align(&doc_of(&["delta"]), &syn, &p).unwrap();
        let expected = syn
            .tokens
            .iter()
            .map(|y| cosine(&p.embed("delta"), &p.embed(&y.normalized)).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(one.scores, vec![expected]);
    }

    #[test]
    fn soft_matches_double_loop() {
        let p = EmbeddingProvider::hashed(64, 42);
        let d = doc_of(&["world", "leaders", "pledge", "billion"]);
        let s = syn_of(&["vaccine", "leaders", "fund"]);
        assert_eq!(soft_align(&d, &s, &p).unwrap().scores, brute_force(&d, &s, &p));
    }

    #[test]
    fn empty_synopsis_is_an_error() {
        let p = EmbeddingProvider::hashed(8, 0);
        let empty = Synopsis {
            endorser_id: "e".into(),
            tokens: vec![],
        };
        assert!(matches!(hard_align(&doc_of(&["a"]), &empty), Err(AlignmentError::EmptySynopsis(_))));
        assert!(matches!(soft_align(&doc_of(&["a"]), &empty, &p), Err(AlignmentError::EmptySynopsis(_))));
    }

    fn word() -> impl Strategy<Value = String> {
        prop::sample::select(vec!["a", "b", "c", "d", "e", "f", "g", "h", "Ab", "AB"]).prop_map(String::from)
    }

    proptest! {
        #[test]
        fn soft_equals_brute_force(
            d in prop::collection::vec(word(), 1..20),
            s in prop::collection::vec(word(), 1..20),
        ) {
            let p = EmbeddingProvider::hashed(16, 3);
            let doc = tokenize(&Document { doc_id: "d".into(), date: None, raw_text: d.join(" ") });
            let syn = Synopsis::from_text("s", &s.join(" "));
            prop_assert_eq!(soft_align(&doc, &syn, &p).unwrap().scores, brute_force(&doc, &syn, &p));
        }

        #[test]
        fn adding_synopsis_token_is_monotone(
            d in prop::collection::vec(word(), 1..12),
            s in prop::collection::vec(word(), 1..12),
            extra in word(),
        ) {
            let p = EmbeddingProvider::hashed(16, 9);
            let doc = tokenize(&Document { doc_id: "d".into(), date: None, raw_text: d.join(" ") });
            let syn = Synopsis::from_text("s", &s.join(" "));
            let mut more = s.clone();
            more.push(extra);
            let bigger = Synopsis::from_text("s", &more.join(" "));
            let before = soft_align(&doc, &syn, &p).unwrap().scores;
            let after = soft_align(&doc, &bigger, &p).unwrap().scores;
            prop_assert!(before.iter().zip(&after).all(|(b, a)| a >= b));
            let before = hard_align(&doc, &syn).unwrap().scores;
            let after = hard_align(&doc, &bigger).unwrap().scores;
            prop_assert!(before.iter().zip(&after).all(|(b, a)| a >= b));
        }

        #[test]
        fn hard_ignores_synopsis_order_and_multiplicity(
            d in prop::collection::vec(word(), 1..12),
            s in prop::collection::vec(word(), 1..12),
        ) {
            let doc = tokenize(&Document { doc_id: "d".into(), date: None, raw_text: d.join(" ") });
            let mut shuffled = s.clone();
            shuffled.reverse();
            shuffled.extend(s.iter().cloned());
            let a = hard_align(&doc, &Synopsis::from_text("s", &s.join(" "))).unwrap().scores;
            let b = hard_align(&doc, &Synopsis::from_text("s", &shuffled.join(" "))).unwrap().scores;
            prop_assert_eq!(a, b);
        }
    }
}
