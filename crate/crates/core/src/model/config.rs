use std::fmt;
use std::str::FromStr;

use super::ModelError;

/// How token ids become decoder inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EmbeddingMode {
    /// Atlas image of the token through a learnable linear projector.
    Pixel,
    /// Ordinary lookup table.
    Token,
}

impl fmt::Display for EmbeddingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Pixel => "pixel",
            Self::Token => "token",
        })
    }
}

impl FromStr for EmbeddingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pixel" => Ok(Self::Pixel),
            "token" => Ok(Self::Token),
            other => Err(format!("unknown embedding mode `{other}` (expected pixel|token)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PositionEncoding {
    Rotary,
    /// Learned absolute table added to the input embeddings.
    Learned,
}

impl fmt::Display for PositionEncoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Rotary => "rotary",
            Self::Learned => "learned",
        })
    }
}

impl FromStr for PositionEncoding {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rotary" => Ok(Self::Rotary),
            "learned" => Ok(Self::Learned),
            other => Err(format!("unknown position encoding `{other}` (expected rotary|learned)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub hidden_size: usize,
    pub intermediate_size: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub rmsnorm_eps: f64,
    pub embedding_mode: EmbeddingMode,
    /// `(height, width)` of atlas images; pixel mode only.
    pub image_dims: Option<(usize, usize)>,
    pub position_encoding: PositionEncoding,
    pub rope_theta: f64,
    pub seed: u64,
}

impl ModelConfig {
    /// Decoder geometry of the reference pretraining run. Not trainable on a
    /// desktop; kept for parameter accounting and documentation.
    pub fn paper(mode: EmbeddingMode) -> Self {
        Self {
            hidden_size: 768,
            intermediate_size: 2048,
            num_heads: 12,
            num_layers: 12,
            vocab_size: 32001,
            max_positions: 2048,
            rmsnorm_eps: 1e-5,
            embedding_mode: mode,
            image_dims: (mode == EmbeddingMode::Pixel).then_some((20, 50)),
            position_encoding: PositionEncoding::Rotary,
            rope_theta: 10000.0,
            seed: 0,
        }
    }

    /// Small geometry that trains on one CPU core.
    pub fn desk(mode: EmbeddingMode) -> Self {
        Self {
            hidden_size: 128,
            intermediate_size: 344,
            num_heads: 4,
            num_layers: 4,
            vocab_size: 512,
            max_positions: 256,
            ..Self::paper(mode)
        }
    }

    /// Same decoder, other embedding mode.
    pub fn with_mode(&self, mode: EmbeddingMode) -> Self {
        let image_dims = match mode {
            EmbeddingMode::Pixel => self.image_dims.or(Some((20, 50))),
            EmbeddingMode::Token => None,
        };
        Self { embedding_mode: mode, image_dims, ..self.clone() }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads
    }

    pub fn pixels_per_image(&self) -> usize {
        self.image_dims.map(|(h, w)| h * w).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.hidden_size == 0 || self.num_heads == 0 || self.num_layers == 0 {
            return bad("hidden_size, num_heads and num_layers must be positive".into());
        }
        if !self.hidden_size.is_multiple_of(self.num_heads) {
            return bad(format!(
                "hidden_size {} is not divisible by num_heads {}",
                self.hidden_size, self.num_heads
            ));
        }
        if self.position_encoding == PositionEncoding::Rotary && !self.head_dim().is_multiple_of(2) {
            return bad(format!("rotary encoding needs an even head dimension, got {}", self.head_dim()));
        }
        if self.intermediate_size == 0 || self.vocab_size == 0 || self.max_positions == 0 {
            return bad("intermediate_size, vocab_size and max_positions must be positive".into());
        }
        if !(self.rmsnorm_eps > 0.0) {
            return bad("rmsnorm_eps must be positive".into());
        }
        match (self.embedding_mode, self.image_dims) {
            (EmbeddingMode::Pixel, None) => return bad("pixel mode needs image_dims".into()),
            (EmbeddingMode::Pixel, Some((h, w))) if h == 0 || w == 0 => {
                return bad("image_dims must be positive".into())
            }
            _ => {}
        }
        Ok(())
    }

    /// Number of learnable scalars.
    pub fn parameter_count(&self) -> usize {
        let h = self.hidden_size;
        let embed = match self.embedding_mode {
            EmbeddingMode::Pixel => self.pixels_per_image() * h + h,
            EmbeddingMode::Token => self.vocab_size * h,
        };
        let positions = match self.position_encoding {
            PositionEncoding::Learned => self.max_positions * h,
            PositionEncoding::Rotary => 0,
        };
        let layer = 4 * h * h + 3 * h * self.intermediate_size + 2 * h;
        embed + positions + self.num_layers * layer + h + h * self.vocab_size
    }
}
