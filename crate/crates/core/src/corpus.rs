//! Cluster ingestion, tokenization and sentence splitting.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::ops::Range;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: cluster {cluster_id:?}: {reason}")]
    Validation {
        line: usize,
        cluster_id: String,
        reason: String,
    },
}

/// One source article of a cluster.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date: Option<NaiveDate>,
    #[serde(rename = "text")]
    pub raw_text: String,
}

/// An externally supplied synopsis of one document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynopsisText {
    pub doc_id: String,
    pub text: String,
}

/// The documents, references and optional synopses of one event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub cluster_id: String,
    pub documents: Vec<Document>,
    #[serde(default)]
    pub references: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synopses: Option<Vec<SynopsisText>>,
}

impl Cluster {
    /// Checks the structural invariants; `Err` carries a human-readable reason.
    pub fn validate(&self) -> Result<(), String> {
        if self.documents.is_empty() {
            return Err("cluster has no documents".into());
        }
        let mut seen = HashSet::new();
        for doc in &self.documents {
            if !seen.insert(doc.doc_id.as_str()) {
                return Err(format!("duplicate doc_id {:?}", doc.doc_id));
            }
            if doc.raw_text.trim().is_empty() {
                return Err(format!("document {:?} has empty text", doc.doc_id));
            }
        }
        if let Some(synopses) = &self.synopses {
            for syn in synopses {
                if !seen.contains(syn.doc_id.as_str()) {
                    return Err(format!("synopsis for unknown doc_id {:?}", syn.doc_id));
                }
            }
        }
        Ok(())
    }

    pub fn document_index(&self, doc_id: &str) -> Option<usize> {
        self.documents.iter().position(|d| d.doc_id == doc_id)
    }
}

/// Reads a JSONL cluster file. Blank lines are skipped.
pub fn load_clusters(path: impl AsRef<Path>) -> Result<Vec<Cluster>, CorpusError> {
    let file = File::open(path)?;
    parse_clusters(BufReader::new(file))
}

pub fn parse_clusters(reader: impl BufRead) -> Result<Vec<Cluster>, CorpusError> {
    let mut clusters = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cluster: Cluster = serde_json::from_str(&line).map_err(|source| CorpusError::Parse {
            line: line_no,
            source,
        })?;
        cluster
            .validate()
            .map_err(|reason| CorpusError::Validation {
                line: line_no,
                cluster_id: cluster.cluster_id.clone(),
                reason,
            })?;
        clusters.push(cluster);
    }
    Ok(clusters)
}

pub fn write_clusters(mut out: impl Write, clusters: &[Cluster]) -> Result<(), CorpusError> {
    for cluster in clusters {
        let line = serde_json::to_string(cluster).expect("cluster serializes");
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// A token with its position in the source text.
///
/// `char_span` counts Unicode scalar values, not bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub normalized: String,
    pub sentence_index: usize,
    pub char_span: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedDocument {
    pub doc_id: String,
    pub tokens: Vec<Token>,
    pub sentence_count: usize,
}

impl TokenizedDocument {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Token index range of every sentence, in order.
    pub fn sentence_spans(&self) -> Vec<Range<usize>> {
        let mut spans = Vec::with_capacity(self.sentence_count);
        let mut start = 0;
        for i in 1..=self.tokens.len() {
            if i == self.tokens.len()
                || self.tokens[i].sentence_index != self.tokens[start].sentence_index
            {
                spans.push(start..i);
                start = i;
            }
        }
        spans
    }

    pub fn normalized(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.normalized.clone()).collect()
    }
}

/// Returns the characters of `text` covered by a half-open char span.
pub fn span_text(text: &str, span: (usize, usize)) -> String {
    text.chars().skip(span.0).take(span.1 - span.0).collect()
}

/// Abbreviations whose trailing period stays attached to the word and never
/// ends a sentence.
const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "mt", "vs", "etc", "inc", "ltd", "co",
    "corp", "gen", "gov", "sen", "rep", "lt", "col", "sgt", "capt", "no", "jan", "feb", "mar",
    "apr", "jun", "jul", "aug", "sep", "sept", "oct", "nov", "dec", "approx", "dept", "est",
];

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

fn casefold(s: &str) -> String {
    s.to_lowercase()
}

/// Length of a dotted initialism such as `U.S.` or `e.g.` starting at `i`,
/// or 0 when none starts there.
fn initialism_len(chars: &[char], i: usize) -> usize {
    let mut j = i;
    let mut letters = 0;
    while j + 1 < chars.len() && chars[j].is_alphabetic() && chars[j + 1] == '.' {
        letters += 1;
        j += 2;
    }
    let followed_by_word = j < chars.len() && is_word_char(chars[j]);
    if letters >= 2 && !followed_by_word {
        j - i
    } else {
        0
    }
}

/// Length of the word or number starting at `i`.
fn word_len(chars: &[char], i: usize) -> usize {
    let mut j = i;
    while j < chars.len() {
        let c = chars[j];
        if is_word_char(c) {
            j += 1;
        } else if (c == '.' || c == ',')
            && j > i
            && chars[j - 1].is_ascii_digit()
            && j + 1 < chars.len()
            && chars[j + 1].is_ascii_digit()
        {
            // 8.5 and 1,000 stay whole
            j += 1;
        } else {
            break;
        }
    }
    j - i
}

/// Splits text into word, number and punctuation tokens and assigns
/// sentence indexes.
pub fn tokenize(doc: &Document) -> TokenizedDocument {
    let tokens = tokenize_text(&doc.raw_text);
    let sentence_count = tokens.last().map_or(0, |t| t.sentence_index + 1);
    TokenizedDocument {
        doc_id: doc.doc_id.clone(),
        tokens,
        sentence_count,
    }
}

pub fn tokenize_text(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut raw: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let len = if is_word_char(c) {
            let init = initialism_len(&chars, i);
            if init > 0 {
                init
            } else {
                let len = word_len(&chars, i);
                let end = i + len;
                let word: String = chars[i..end].iter().collect();
                if end < chars.len()
                    && chars[end] == '.'
                    && ABBREVIATIONS.contains(&casefold(&word).as_str())
                {
                    len + 1
                } else {
                    len
                }
            }
        } else {
            1
        };
        raw.push((i, i + len));
        i += len;
    }

    let mut tokens = Vec::with_capacity(raw.len());
    let mut sentence = 0;
    for (k, &(start, end)) in raw.iter().enumerate() {
        let surface: String = chars[start..end].iter().collect();
        tokens.push(Token {
            normalized: casefold(&surface),
            surface,
            sentence_index: sentence,
            char_span: (start, end),
        });
        if ends_sentence(&chars, &raw, k) {
            sentence += 1;
        }
    }
    tokens
}

/// A terminal `.`, `!` or `?` ends a sentence when whitespace and then an
/// uppercase letter or digit follow.
fn ends_sentence(chars: &[char], raw: &[(usize, usize)], k: usize) -> bool {
    let (start, end) = raw[k];
    if end - start != 1 || !matches!(chars[start], '.' | '!' | '?') {
        return false;
    }
    let Some(&(next_start, _)) = raw.get(k + 1) else {
        return false;
    };
    if next_start == end {
        return false;
    }
    let next = chars[next_start];
    next.is_uppercase() || next.is_ascii_digit()
}

/// Stable chronological order: dated documents ascending, then undated
/// documents in input order.
pub fn order_chronologically(cluster: &Cluster) -> Vec<usize> {
    let mut order: Vec<usize> = (0..cluster.documents.len()).collect();
    order.sort_by_key(|&i| {
        let date = cluster.documents[i].date;
        (date.is_none(), date)
    });
    order
}
