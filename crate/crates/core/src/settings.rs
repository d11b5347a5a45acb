//! Flat `key=value` configuration text and named presets.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::model::{EmbeddingMode, ModelConfig, PositionEncoding};
use crate::render::RenderConfig;
use crate::train::TrainConfig;

#[derive(Debug, Error)]
pub enum SettingsError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: cannot parse `{value}`: {msg}")]
    Value { key: String, value: String, msg: String },
    #[error("unknown preset `{0}` (expected desk|paper)")]
    UnknownPreset(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Every key understood by the toolkit.
pub const KNOWN_KEYS: &[&str] = &[
    // model
    "hidden_size",
    "intermediate_size",
    "num_heads",
    "num_layers",
    "vocab_size",
    "max_positions",
    "rmsnorm_eps",
    "embedding_mode",
    "position_encoding",
    "rope_theta",
    "seed",
    // renderer
    "font_file",
    "basic_font_size",
    "image_height",
    "image_width",
    "channels",
    "max_font_size",
    "min_font_size",
    // training
    "steps",
    "batch_size",
    "sequence_length",
    "lr",
    "warmup",
    "min_lr_ratio",
    "beta1",
    "beta2",
    "adam_eps",
    "weight_decay",
    "clip_norm",
    "log_every",
    "checkpoint_every",
    // classifier head
    "head_epochs",
    "head_lr",
];

/// Ordered `key=value` map. Later assignments win.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Settings(BTreeMap<String, String>);

impl Settings {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `key=value` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, SettingsError> {
        let mut out = Self::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| SettingsError::Syntax {
                line: i + 1,
                msg: format!("expected key=value, got `{line}`"),
            })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(SettingsError::Syntax { line: i + 1, msg: "empty key".into() });
            }
            out.set(k, v.trim())?;
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self, SettingsError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| SettingsError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn preset(name: &str) -> Result<Self, SettingsError> {
        let (model, train) = match name {
            "desk" => (ModelConfig::desk(EmbeddingMode::Pixel), TrainConfig::desk()),
            "paper" => (ModelConfig::paper(EmbeddingMode::Pixel), TrainConfig::paper()),
            other => return Err(SettingsError::UnknownPreset(other.to_string())),
        };
        let mut s = Self::new();
        s.extend(&model.to_settings());
        s.extend(&RenderConfig::default().to_settings());
        s.extend(&train.to_settings());
        Ok(s)
    }

    /// Rejects keys outside [`KNOWN_KEYS`].
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), SettingsError> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(SettingsError::UnknownKey(key.to_string()));
        }
        self.0.insert(key.to_string(), value.into());
        Ok(())
    }

    pub(crate) fn put(&mut self, key: &str, value: impl fmt::Display) {
        self.0.insert(key.to_string(), value.to_string());
    }

    /// Overrides entries with those of `other`.
    pub fn extend(&mut self, other: &Settings) {
        for (k, v) in &other.0 {
            self.0.insert(k.clone(), v.clone());
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>, SettingsError>
    where
        T::Err: fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>().map_err(|e| SettingsError::Value {
                    key: key.to_string(),
                    value: v.to_string(),
                    msg: e.to_string(),
                })
            })
            .transpose()
    }

    /// Overwrites `slot` when `key` is present.
    pub fn read<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<(), SettingsError>
    where
        T::Err: fmt::Display,
    {
        if let Some(v) = self.parsed(key)? {
            *slot = v;
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn to_text(&self) -> String {
        self.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

impl ModelConfig {
    pub fn to_settings(&self) -> Settings {
        let mut s = Settings::new();
        s.put("hidden_size", self.hidden_size);
        s.put("intermediate_size", self.intermediate_size);
        s.put("num_heads", self.num_heads);
        s.put("num_layers", self.num_layers);
        s.put("vocab_size", self.vocab_size);
        s.put("max_positions", self.max_positions);
        s.put("rmsnorm_eps", self.rmsnorm_eps);
        s.put("embedding_mode", self.embedding_mode);
        s.put("position_encoding", self.position_encoding);
        s.put("rope_theta", self.rope_theta);
        s.put("seed", self.seed);
        if let Some((h, w)) = self.image_dims {
            s.put("image_height", h);
            s.put("image_width", w);
        }
        s
    }

    /// `base` with every model key present in `s` applied.
    pub fn from_settings(s: &Settings, base: &ModelConfig) -> Result<Self, SettingsError> {
        let mut c = base.clone();
        s.read("hidden_size", &mut c.hidden_size)?;
        s.read("intermediate_size", &mut c.intermediate_size)?;
        s.read("num_heads", &mut c.num_heads)?;
        s.read("num_layers", &mut c.num_layers)?;
        s.read("vocab_size", &mut c.vocab_size)?;
        s.read("max_positions", &mut c.max_positions)?;
        s.read("rmsnorm_eps", &mut c.rmsnorm_eps)?;
        s.read::<EmbeddingMode>("embedding_mode", &mut c.embedding_mode)?;
        s.read::<PositionEncoding>("position_encoding", &mut c.position_encoding)?;
        s.read("rope_theta", &mut c.rope_theta)?;
        s.read("seed", &mut c.seed)?;
        c.image_dims = match c.embedding_mode {
            EmbeddingMode::Token => None,
            EmbeddingMode::Pixel => {
                let (mut h, mut w) = c.image_dims.unwrap_or((20, 50));
                s.read("image_height", &mut h)?;
                s.read("image_width", &mut w)?;
                Some((h, w))
            }
        };
        Ok(c)
    }
}

impl RenderConfig {
    pub fn to_settings(&self) -> Settings {
        let mut s = Settings::new();
        if let Some(f) = &self.font_file {
            s.put("font_file", f.display());
        }
        s.put("basic_font_size", self.basic_font_size);
        s.put("image_height", self.image_height);
        s.put("image_width", self.image_width);
        s.put("channels", self.channels);
        s.put("max_font_size", self.max_font_size);
        s.put("min_font_size", self.min_font_size);
        s
    }

    pub fn from_settings(s: &Settings, base: &RenderConfig) -> Result<Self, SettingsError> {
        let mut c = base.clone();
        if let Some(f) = s.get("font_file") {
            c.font_file = (!f.is_empty()).then(|| f.into());
        }
        s.read("basic_font_size", &mut c.basic_font_size)?;
        s.read("image_height", &mut c.image_height)?;
        s.read("image_width", &mut c.image_width)?;
        s.read("channels", &mut c.channels)?;
        s.read("max_font_size", &mut c.max_font_size)?;
        s.read("min_font_size", &mut c.min_font_size)?;
        Ok(c)
    }
}

impl TrainConfig {
    pub fn to_settings(&self) -> Settings {
        let mut s = Settings::new();
        s.put("steps", self.steps);
        s.put("batch_size", self.batch_size);
        s.put("sequence_length", self.sequence_length);
        s.put("lr", self.lr);
        s.put("warmup", self.warmup);
        s.put("min_lr_ratio", self.min_lr_ratio);
        s.put("beta1", self.adam.beta1);
        s.put("beta2", self.adam.beta2);
        s.put("adam_eps", self.adam.eps);
        s.put("weight_decay", self.adam.weight_decay);
        s.put("clip_norm", self.adam.clip_norm.unwrap_or(0.0));
        s.put("log_every", self.log_every);
        s.put("checkpoint_every", self.checkpoint_every);
        s.put("seed", self.seed);
        s
    }

    pub fn from_settings(s: &Settings, base: &TrainConfig) -> Result<Self, SettingsError> {
        let mut c = base.clone();
        s.read("steps", &mut c.steps)?;
        s.read("batch_size", &mut c.batch_size)?;
        s.read("sequence_length", &mut c.sequence_length)?;
        s.read("lr", &mut c.lr)?;
        s.read("warmup", &mut c.warmup)?;
        s.read("min_lr_ratio", &mut c.min_lr_ratio)?;
        s.read("beta1", &mut c.adam.beta1)?;
        s.read("beta2", &mut c.adam.beta2)?;
        s.read("adam_eps", &mut c.adam.eps)?;
        s.read("weight_decay", &mut c.adam.weight_decay)?;
        if let Some(clip) = s.parsed::<f64>("clip_norm")? {
            c.adam.clip_norm = (clip > 0.0).then_some(clip);
        }
        s.read("log_every", &mut c.log_every)?;
        s.read("checkpoint_every", &mut c.checkpoint_every)?;
        s.read("seed", &mut c.seed)?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_skips_comments_and_trims() {
        let s = Settings::parse("# c\n\n steps = 10 \nlr=0.001\n").unwrap();
        assert_eq!(s.get("steps"), Some("10"));
        assert_eq!(s.parsed::<f64>("lr").unwrap(), Some(0.001));
    }

    #[test]
    fn malformed_line_reports_its_number() {
        match Settings::parse("steps=1\nnonsense\n") {
            Err(SettingsError::Syntax { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_is_rejected() {
        assert!(matches!(Settings::parse("stepz=1"), Err(SettingsError::UnknownKey(_))));
    }

    #[test]
    fn model_config_round_trips() {
        for preset in ["desk", "paper"] {
            let s = Settings::preset(preset).unwrap();
            let base = ModelConfig::desk(EmbeddingMode::Token);
            let c = ModelConfig::from_settings(&s, &base).unwrap();
            let again = ModelConfig::from_settings(&c.to_settings(), &base).unwrap();
            assert_eq!(c, again);
        }
    }

    #[test]
    fn desk_preset_has_the_documented_geometry() {
        let s = Settings::preset("desk").unwrap();
        let c = ModelConfig::from_settings(&s, &ModelConfig::paper(EmbeddingMode::Pixel)).unwrap();
        assert_eq!((c.vocab_size, c.hidden_size, c.num_layers), (512, 128, 4));
        assert_eq!(TrainConfig::from_settings(&s, &TrainConfig::paper()).unwrap().steps, 2000);
    }

    #[test]
    fn overrides_win() {
        let mut s = Settings::preset("desk").unwrap();
        s.extend(&Settings::parse("num_layers=2").unwrap());
        let c = ModelConfig::from_settings(&s, &ModelConfig::desk(EmbeddingMode::Pixel)).unwrap();
        assert_eq!(c.num_layers, 2);
    }
}
