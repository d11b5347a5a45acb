//! Versioned binary checkpoints.
//!
//! Layout: magic `PXLMCKPT`, LE u32 version, u32-length-prefixed model
//! config text, u8 atlas flag followed by the 32-byte atlas fingerprint when
//! set, u32 tensor count, then per tensor a u32-prefixed UTF-8 name, u32
//! rank, u32 dims and the LE f32 values.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::model::{Model, ModelConfig, Parameters};
use crate::scalar::Scalar;
use crate::settings::{Settings, SettingsError};

const MAGIC: &[u8; 8] = b"PXLMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("checkpoint config: {0}")]
    Config(#[from] SettingsError),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
}

/// Named f32 tensor outside the decoder (e.g. a classifier head).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub atlas_hash: Option<[u8; 32]>,
    pub params: Parameters<f32>,
    pub extras: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(model: &Model<T>) -> Self {
        Self {
            config: model.config.clone(),
            atlas_hash: model.atlas_hash,
            params: model.params.cast(),
            extras: BTreeMap::new(),
        }
    }

    pub fn into_model<T: Scalar>(self) -> Model<T> {
        Model::from_parts(self.config, self.params.cast(), self.atlas_hash)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        write_blob(&mut w, self.config.to_settings().to_text().as_bytes())?;
        match &self.atlas_hash {
            Some(h) => {
                w.write_all(&[1])?;
                w.write_all(h)?;
            }
            None => w.write_all(&[0])?,
        }
        let mut tensors: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::new();
        self.params.visit(|n, s, v| tensors.push((n.to_string(), s.to_vec(), v.to_vec())));
        for (n, t) in &self.extras {
            tensors.push((n.clone(), t.shape.clone(), t.values.clone()));
        }
        w.write_all(&(tensors.len() as u32).to_le_bytes())?;
        for (name, shape, values) in tensors {
            write_blob(&mut w, name.as_bytes())?;
            w.write_all(&(shape.len() as u32).to_le_bytes())?;
            for d in shape {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(values.len() * 4);
            values.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = bytes;
        let ck = Self::read_from(&mut r)?;
        if !r.is_empty() {
            return Err(CheckpointError::Format(format!("{} trailing bytes", r.len())));
        }
        Ok(ck)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let text = String::from_utf8(read_blob(&mut r)?)
            .map_err(|_| CheckpointError::Format("config is not UTF-8".into()))?;
        let settings = Settings::parse(&text)?;
        let base = ModelConfig::desk(settings.parsed("embedding_mode")?.unwrap_or(crate::EmbeddingMode::Token));
        let config = ModelConfig::from_settings(&settings, &base)?;
        config.validate().map_err(|e| CheckpointError::Format(e.to_string()))?;
        let mut flag = [0u8; 1];
        read_exact(&mut r, &mut flag)?;
        let atlas_hash = match flag[0] {
            0 => None,
            1 => {
                let mut h = [0u8; 32];
                read_exact(&mut r, &mut h)?;
                Some(h)
            }
            f => return Err(CheckpointError::Format(format!("bad atlas flag {f}"))),
        };
        let count = read_u32(&mut r)? as usize;
        let mut named = BTreeMap::new();
        for _ in 0..count {
            let name = String::from_utf8(read_blob(&mut r)?)
                .map_err(|_| CheckpointError::Format("tensor name is not UTF-8".into()))?;
            let rank = read_u32(&mut r)? as usize;
            if rank > 4 {
                return Err(CheckpointError::Format(format!("tensor `{name}` has rank {rank}")));
            }
            let shape = (0..rank).map(|_| read_u32(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let mut buf = vec![0u8; n.checked_mul(4).ok_or_else(|| CheckpointError::Format("size overflow".into()))?];
            read_exact(&mut r, &mut buf)?;
            let values = buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            if named.insert(name.clone(), Tensor { shape, values }).is_some() {
                return Err(CheckpointError::Format(format!("duplicate tensor `{name}`")));
            }
        }

        let mut params = Parameters::<f32>::init(&config);
        let mut expected = Vec::new();
        params.visit(|n, s, _| expected.push((n.to_string(), s.to_vec())));
        for ((name, shape), slot) in expected.iter().zip(params.tensors_mut()) {
            let t = named
                .remove(name)
                .ok_or_else(|| CheckpointError::Format(format!("missing tensor `{name}`")))?;
            if &t.shape != shape {
                return Err(CheckpointError::Format(format!(
                    "tensor `{name}` has shape {:?}, config implies {:?}",
                    t.shape, shape
                )));
            }
            slot.copy_from_slice(&t.values);
        }
        Ok(Self { config, atlas_hash, params, extras: named })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes()).map_err(|source| io_err(path, source))
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path).map_err(|source| io_err(path, source))?;
        Self::from_bytes(&bytes)
    }
}

fn io_err(path: &Path, source: io::Error) -> CheckpointError {
    CheckpointError::Io { path: path.display().to_string(), source }
}

fn write_blob<W: Write>(w: &mut W, bytes: &[u8]) -> io::Result<()> {
    w.write_all(&(bytes.len() as u32).to_le_bytes())?;
    w.write_all(bytes)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), CheckpointError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => CheckpointError::Format("truncated".into()),
        _ => CheckpointError::Io { path: "<stream>".into(), source: e },
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_blob<R: Read>(r: &mut R) -> Result<Vec<u8>, CheckpointError> {
    let n = read_u32(r)? as usize;
    if n > 1 << 20 {
        return Err(CheckpointError::Format(format!("string of {n} bytes")));
    }
    let mut buf = vec![0u8; n];
    read_exact(r, &mut buf)?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EmbeddingMode, PositionEncoding};

    fn small(mode: EmbeddingMode) -> ModelConfig {
        ModelConfig {
            hidden_size: 16,
            intermediate_size: 24,
            num_heads: 2,
            num_layers: 2,
            vocab_size: 30,
            position_encoding: PositionEncoding::Learned,
            seed: 3,
            ..ModelConfig::desk(mode)
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let config = small(EmbeddingMode::Token);
        let params = Parameters::<f32>::init(&config);
        let mut ck = Checkpoint { config, atlas_hash: None, params, extras: BTreeMap::new() };
        ck.extras.insert("classifier.bias".into(), Tensor { shape: vec![2], values: vec![0.5, -1.0] });
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn pixel_mode_keeps_atlas_hash() {
        let config = small(EmbeddingMode::Pixel);
        let params = Parameters::<f32>::init(&config);
        let ck = Checkpoint { config, atlas_hash: Some([7; 32]), params, extras: BTreeMap::new() };
        assert_eq!(Checkpoint::from_bytes(&ck.to_bytes()).unwrap().atlas_hash, Some([7; 32]));
    }

    #[test]
    fn corruption_is_detected() {
        let config = small(EmbeddingMode::Token);
        let ck = Checkpoint { params: Parameters::init(&config), config, atlas_hash: None, extras: BTreeMap::new() };
        let bytes = ck.to_bytes();
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]), Err(CheckpointError::Format(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::BadMagic)));
        let mut future = bytes;
        future[8] = 9;
        assert!(matches!(Checkpoint::from_bytes(&future), Err(CheckpointError::Version(9))));
    }
}
