//! Token embeddings for soft alignment.
//!
//! Two providers exist: a deterministic hashed embedding that needs no
//! external data, and a lookup table loaded from a word2vec-style text file
//! that falls back to the hashed vectors for out-of-vocabulary tokens.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("embedding file line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("cosine similarity undefined for a zero-norm vector")]
    ZeroNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone)]
pub enum EmbeddingProvider {
    Hashed {
        dimension: usize,
        seed: u64,
    },
    FileLookup {
        dimension: usize,
        seed: u64,
        table: HashMap<String, EmbeddingVector>,
    },
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(mut hash: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Entry `index` of the hashed embedding of `token`, uniform in [-1, 1).
///
/// FNV-1a over `seed (u64 LE) ‖ token bytes ‖ 0xFF ‖ index (u32 LE)`,
/// finished with the splitmix64 mixer; the top 53 bits give the value.
pub fn hashed_component(seed: u64, token: &str, index: u32) -> f64 {
    let mut h = fnv1a(FNV_OFFSET, &seed.to_le_bytes());
    h = fnv1a(h, token.as_bytes());
    h = fnv1a(h, &[0xff]);
    h = fnv1a(h, &index.to_le_bytes());
    let unit = (splitmix64(h) >> 11) as f64 / (1u64 << 53) as f64;
    2.0 * unit - 1.0
}

impl EmbeddingProvider {
    pub fn hashed(dimension: usize, seed: u64) -> Self {
        EmbeddingProvider::Hashed { dimension, seed }
    }

    /// Loads a text file of `token v1 v2 ... vd` lines (no header).
    pub fn from_file(path: impl AsRef<Path>, seed: u64) -> Result<Self, EmbeddingError> {
        let reader = BufReader::new(File::open(path)?);
        let mut table = HashMap::new();
        let mut dimension = None;
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let line_no = idx + 1;
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let values = parts
                .map(|p| p.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| EmbeddingError::Format {
                    line: line_no,
                    reason: e.to_string(),
                })?;
            if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
                return Err(EmbeddingError::Format {
                    line: line_no,
                    reason: "expected finite vector entries".into(),
                });
            }
            match dimension {
                None => dimension = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(EmbeddingError::Format {
                        line: line_no,
                        reason: format!("expected {d} values, found {}", values.len()),
                    })
                }
                _ => {}
            }
            table.insert(token.to_lowercase(), EmbeddingVector(values));
        }
        let dimension = dimension.ok_or(EmbeddingError::Format {
            line: 0,
            reason: "embedding file is empty".into(),
        })?;
        Ok(EmbeddingProvider::FileLookup {
            dimension,
            seed,
            table,
        })
    }

    pub fn dimension(&self) -> usize {
        match self {
            EmbeddingProvider::Hashed { dimension, .. }
            | EmbeddingProvider::FileLookup { dimension, .. } => *dimension,
        }
    }

    pub fn embed(&self, token: &str) -> EmbeddingVector {
        match self {
            EmbeddingProvider::Hashed { dimension, seed } => hashed_vector(*seed, *dimension, token),
            EmbeddingProvider::FileLookup {
                dimension,
                seed,
                table,
            } => table
                .get(token)
                .cloned()
                .unwrap_or_else(|| hashed_vector(*seed, *dimension, token)),
        }
    }
}

fn hashed_vector(seed: u64, dimension: usize, token: &str) -> EmbeddingVector {
    EmbeddingVector(
        (0..dimension)
            .map(|i| hashed_component(seed, token, i as u32))
            .collect(),
    )
}

/// Cosine similarity, clamped to [-1, 1].
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    let na = a.0.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.0.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(EmbeddingError::ZeroNorm);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}
