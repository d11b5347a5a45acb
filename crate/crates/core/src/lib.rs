pub mod atlas;
pub mod checkpoint;
pub mod corpus;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod optim;
pub mod plot;
pub mod render;
pub mod scalar;
pub mod settings;
pub mod tokenizer;
pub mod train;

pub use atlas::{one_hot, AtlasError, VocabAtlas};
pub use checkpoint::{Checkpoint, CheckpointError};
pub use metrics::{MetricsReport, MetricsRow};
pub use model::{EmbeddingMode, Example, Model, ModelConfig, ModelError, Parameters, PositionEncoding, Sampling};
pub use noise::{NoiseDictionary, NoiseError, NoiseMode, NoiseSpec};
pub use render::{GlyphImage, RenderConfig, RenderError, Renderer};
pub use scalar::Scalar;
pub use settings::{Settings, SettingsError};
pub use tokenizer::{BpeTrainer, BpeVocab, TokenId, TokenizerError};
pub use train::{TrainConfig, TrainError};

/// Single-precision model, used for training and evaluation.
pub type Model32 = Model<f32>;
/// Double-precision model, used for finite-difference checks.
pub type Model64 = Model<f64>;
pub type Parameters32 = Parameters<f32>;
pub type Parameters64 = Parameters<f64>;
