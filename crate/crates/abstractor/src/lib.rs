//! A small encoder-decoder transformer for endorsement-guided summarization.
//!
//! Decoder cross-attention carries companion heads: for each original head
//! and each endorsement level `t` the same attention weights are reused,
//! but value contributions from source tokens endorsed fewer than `t` times
//! are zeroed. Level outputs go through their own projections and are
//! summed. All arithmetic is `f64` with hand-written backward passes.

pub mod attention;
pub mod beam;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod params;
pub mod reference;
pub mod synthetic;
pub mod train;
pub mod vocab;

pub use attention::{build_endorsement_masks, companion_cross_attention, EndorsementMasks};
pub use beam::{beam_search, greedy, Hypothesis, StepScorer};
pub use checkpoint::Checkpoint;
pub use config::{BeamConfig, ModelConfig, TrainConfig};
pub use error::ModelError;
pub use gradcheck::gradient_check;
pub use model::{decode_step, encode, EndorsedInput, Example};
pub use params::Parameters;
pub use train::{next_token_accuracy, train, TrainReport};
pub use vocab::Vocab;
