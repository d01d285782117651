//! JSON checkpoints.
//!
//! A checkpoint stores the format version, the model configuration, the
//! vocabulary, the slot layout (name, offset, rows, cols; row-major) and
//! the flat parameter vector as base64 of little-endian 64-bit floats.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::ModelError;
use crate::params::{Layout, Parameters, Slot};
use crate::vocab::Vocab;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Stored {
    format_version: u32,
    config: ModelConfig,
    vocab: Vocab,
    layout: Vec<Slot>,
    parameter_count: usize,
    parameters: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: Parameters,
    pub vocab: Vocab,
}

pub fn encode_values(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    STANDARD.encode(bytes)
}

pub fn decode_values(text: &str) -> Result<Vec<f64>, ModelError> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| ModelError::Checkpoint(format!("parameters are not valid base64: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(ModelError::Checkpoint("parameter bytes are not a multiple of 8".into()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String, ModelError> {
        let stored = Stored {
            format_version: FORMAT_VERSION,
            config: self.params.config.clone(),
            vocab: self.vocab.clone(),
            layout: self.params.layout.slots.clone(),
            parameter_count: self.params.values.len(),
            parameters: encode_values(&self.params.values),
        };
        Ok(serde_json::to_string_pretty(&stored)?)
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let stored: Stored = serde_json::from_str(text)?;
        if stored.format_version != FORMAT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported format version {}",
                stored.format_version
            )));
        }
        stored.config.validate()?;
        let layout = Layout::new(&stored.config);
        if layout.slots != stored.layout {
            return Err(ModelError::Checkpoint("stored layout does not match the configuration".into()));
        }
        let values = decode_values(&stored.parameters)?;
        if values.len() != layout.total || stored.parameter_count != layout.total {
            return Err(ModelError::Checkpoint(format!(
                "expected {} parameters, found {}",
                layout.total,
                values.len()
            )));
        }
        let vocab = stored.vocab.rebuild_index();
        if vocab.len() != stored.config.vocab_size {
            return Err(ModelError::Checkpoint("vocabulary size differs from the configuration".into()));
        }
        Ok(Checkpoint {
            params: Parameters {
                config: stored.config,
                layout,
                values,
            },
            vocab,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(self.to_json()?.as_bytes())?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let mut text = String::new();
        std::io::Read::read_to_string(&mut BufReader::new(File::open(path)?), &mut text)?;
        Checkpoint::from_json(&text)
    }
}
