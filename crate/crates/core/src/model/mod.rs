//! Decoder-only language model with either a pixel or a token embedding.

mod config;
mod decoder;
mod params;

pub use config::{EmbeddingMode, ModelConfig, PositionEncoding};
pub use decoder::{cross_entropy, log_softmax, loss, Example, Model, IGNORE};
pub use params::{Embedding, LayerParams, Parameters};

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::atlas::{AtlasError, VocabAtlas};
use crate::scalar::Scalar;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("pixel embedding needs a vocabulary atlas")]
    AtlasRequired,
    #[error("atlas was rendered with a different configuration than the model expects")]
    AtlasMismatch,
    #[error("operation not available in {0} embedding mode")]
    WrongMode(EmbeddingMode),
    #[error("token id {id} out of range for {len} entries")]
    IdOutOfRange { id: usize, len: usize },
    #[error("sequence of length {len} exceeds max_positions {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("empty sequence")]
    EmptySequence,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Atlas(#[from] AtlasError),
}

/// Decoding rule for [`Model::generate`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Sampling {
    Greedy,
    /// Softmax sampling at the given temperature, seeded.
    Temperature { temperature: f64, seed: u64 },
}

impl<T: Scalar> Model<T> {
    /// Extends `prompt` by up to `max_new` tokens, stopping after `eos`, and
    /// returns prompt plus continuation. The context fed to the model is
    /// truncated from the left once it reaches `max_positions`.
    pub fn generate(
        &self,
        atlas: Option<&VocabAtlas>,
        prompt: &[usize],
        max_new: usize,
        sampling: Sampling,
        eos: Option<usize>,
    ) -> Result<Vec<usize>, ModelError> {
        if prompt.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        if prompt.len() > self.config.max_positions {
            return Err(ModelError::SequenceTooLong { len: prompt.len(), max: self.config.max_positions });
        }
        let mut rng = match sampling {
            Sampling::Temperature { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
            Sampling::Greedy => None,
        };
        let mut ctx = prompt.to_vec();
        for _ in 0..max_new {
            let start = ctx.len().saturating_sub(self.config.max_positions);
            let logits = self.forward(atlas, &ctx[start..])?;
            let last = logits.row(logits.nrows() - 1);
            let next = match (sampling, rng.as_mut()) {
                (Sampling::Temperature { temperature, .. }, Some(rng)) if temperature > 0.0 => {
                    let max = last.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.to_f64_lossy()));
                    let weights: Vec<f64> =
                        last.iter().map(|v| ((v.to_f64_lossy() - max) / temperature).exp()).collect();
                    WeightedIndex::new(&weights)
                        .map_err(|e| ModelError::Shape(format!("degenerate distribution: {e}")))?
                        .sample(rng)
                }
                _ => argmax(last.iter().map(|v| v.to_f64_lossy())),
            };
            ctx.push(next);
            if Some(next) == eos {
                break;
            }
        }
        Ok(ctx)
    }
}

/// Index of the first maximum.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}
