//! Synthetic news-like clusters with controlled repetition.
//!
//! Each cluster has a handful of "salient" sentences copied verbatim into a
//! chosen number of documents, placed among their lead sentences, while all
//! other sentences are drawn fresh from a large pseudo-word vocabulary.

use chrono::{Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::{Cluster, Document};

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];

/// Deterministic pronounceable pseudo-word for `index`.
pub fn pseudo_word(index: usize) -> String {
    let base = ONSETS.len() * VOWELS.len();
    let mut i = index;
    let mut out = String::new();
    loop {
        let syl = i % base;
        out.push_str(ONSETS[syl / VOWELS.len()]);
        out.push_str(VOWELS[syl % VOWELS.len()]);
        i /= base;
        if i == 0 {
            break;
        }
        i -= 1;
    }
    out
}

#[derive(Debug, Clone)]
pub struct SalienceSpec {
    pub documents: usize,
    /// One salient sentence per entry, copied into that many documents.
    pub repeats: Vec<usize>,
    pub sentences_per_doc: usize,
    pub min_sentence_words: usize,
    pub max_sentence_words: usize,
    pub vocabulary: usize,
    /// Salient sentences are placed among this many leading sentences.
    pub lead_slots: usize,
}

impl Default for SalienceSpec {
    fn default() -> Self {
        SalienceSpec {
            documents: 10,
            repeats: vec![6],
            sentences_per_doc: 6,
            min_sentence_words: 8,
            max_sentence_words: 14,
            vocabulary: 3000,
            lead_slots: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SalienceCluster {
    pub cluster: Cluster,
    pub salient: Vec<String>,
    /// `holders[k]` lists the document indexes carrying salient sentence `k`.
    pub holders: Vec<Vec<usize>>,
}

fn sentence(rng: &mut impl Rng, spec: &SalienceSpec) -> String {
    let n = rng.gen_range(spec.min_sentence_words..=spec.max_sentence_words);
    let mut words: Vec<String> = (0..n).map(|_| pseudo_word(rng.gen_range(0..spec.vocabulary))).collect();
    let first = &mut words[0];
    *first = first[..1].to_uppercase() + &first[1..];
    format!("{}.", words.join(" "))
}

pub fn salience_cluster(rng: &mut impl Rng, spec: &SalienceSpec, cluster_id: &str) -> SalienceCluster {
    assert!(spec.repeats.len() <= spec.lead_slots.min(spec.sentences_per_doc));
    let mut bodies: Vec<Vec<String>> = (0..spec.documents)
        .map(|_| (0..spec.sentences_per_doc).map(|_| sentence(rng, spec)).collect())
        .collect();
    let mut free_slots: Vec<Vec<usize>> = (0..spec.documents)
        .map(|_| {
            let mut slots: Vec<usize> = (0..spec.lead_slots).collect();
            slots.shuffle(rng);
            slots
        })
        .collect();
    let mut salient = Vec::new();
    let mut holders = Vec::new();
    for &k in &spec.repeats {
        let text = sentence(rng, spec);
        let mut docs: Vec<usize> = (0..spec.documents).collect();
        docs.shuffle(rng);
        docs.truncate(k);
        docs.sort_unstable();
        for &d in &docs {
            let slot = free_slots[d].pop().expect("enough lead slots");
            bodies[d][slot] = text.clone();
        }
        salient.push(text);
        holders.push(docs);
    }
    let base = NaiveDate::from_ymd_opt(2019, 3, 14).expect("valid date");
    let documents = bodies
        .into_iter()
        .enumerate()
        .map(|(i, body)| Document {
            doc_id: format!("{cluster_id}-d{i}"),
            date: Some(base + Duration::days(rng.gen_range(-1..=1))),
            raw_text: body.join(" "),
        })
        .collect();
    SalienceCluster {
        cluster: Cluster {
            cluster_id: cluster_id.to_string(),
            documents,
            references: vec![salient.join(" ")],
            synopses: None,
        },
        salient,
        holders,
    }
}
