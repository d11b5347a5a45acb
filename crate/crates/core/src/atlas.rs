//! Pre-rendered vocabulary atlas.
//!
//! Row `i` holds the flattened render of token `i`. Turning a token sequence
//! into pixels is then either a row gather or, equivalently, the product of a
//! one-hot `(s, |v|)` indicator with the `(|v|, H*W)` matrix.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use thiserror::Error;

use crate::render::Renderer;
use crate::scalar::Scalar;
use crate::tokenizer::{BpeVocab, TokenId};

pub const ATLAS_MAGIC: &[u8; 8] = b"PXATLAS1";

#[derive(Debug, Error)]
pub enum AtlasError {
    #[error("vocabulary ids are not dense: expected id {expected}, found {found}")]
    NonDense { expected: usize, found: usize },
    #[error("token id {id} out of range for atlas of {len} rows")]
    IdOutOfRange { id: usize, len: usize },
    #[error("row {row} of the indicator matrix is not one-hot")]
    MalformedOneHot { row: usize },
    #[error("indicator matrix has {cols} columns, atlas has {rows} rows")]
    OneHotShape { cols: usize, rows: usize },
    #[error("surface {index} contains a NUL character")]
    NulInSurface { index: usize },
    #[error("render configuration does not match the atlas")]
    ConfigMismatch,
    #[error("atlas file: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

/// Immutable `(|v|, H*W)` matrix of 8-bit intensities plus the surface of
/// every row and the fingerprint of the renderer that produced it.
#[derive(Clone, PartialEq, Eq)]
pub struct VocabAtlas {
    height: usize,
    width: usize,
    channels: usize,
    config_hash: [u8; 32],
    surfaces: Vec<String>,
    data: Vec<u8>,
}

impl std::fmt::Debug for VocabAtlas {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VocabAtlas")
            .field("rows", &self.len())
            .field("height", &self.height)
            .field("width", &self.width)
            .field("config_hash", &hex(&self.config_hash))
            .finish()
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl VocabAtlas {
    /// Renders every surface; row `i` is `surfaces[i]`.
    pub fn build<S: AsRef<str>>(surfaces: &[S], renderer: &Renderer) -> Result<Self, AtlasError> {
        let cfg = renderer.config();
        let mut atlas = Self {
            height: cfg.image_height,
            width: cfg.image_width,
            channels: cfg.channels,
            config_hash: renderer.fingerprint(),
            surfaces: Vec::with_capacity(surfaces.len()),
            data: Vec::with_capacity(surfaces.len() * cfg.pixels_per_image()),
        };
        atlas.append(surfaces, renderer, 0)?;
        Ok(atlas)
    }

    /// Builds from an id-keyed map; ids must be exactly `0..n`.
    pub fn build_from_map(vocab: &BTreeMap<usize, String>, renderer: &Renderer) -> Result<Self, AtlasError> {
        for (expected, &found) in vocab.keys().enumerate() {
            if expected != found {
                return Err(AtlasError::NonDense { expected, found });
            }
        }
        let surfaces: Vec<&str> = vocab.values().map(String::as_str).collect();
        Self::build(&surfaces, renderer)
    }

    /// Atlas over every tokenizer piece, rendered via [`BpeVocab::surface`].
    pub fn from_vocab(vocab: &BpeVocab, renderer: &Renderer) -> Result<Self, AtlasError> {
        Self::build(&vocab.surfaces(), renderer)
    }

    fn append<S: AsRef<str>>(&mut self, surfaces: &[S], renderer: &Renderer, offset: usize) -> Result<(), AtlasError> {
        // identical surfaces (blank specials, duplicates) render once
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        let stride = self.stride();
        for (i, s) in surfaces.iter().enumerate() {
            let s = s.as_ref();
            if s.contains('\0') {
                return Err(AtlasError::NulInSurface { index: offset + i });
            }
            match seen.get(s) {
                Some(&row) => {
                    let start = row * stride;
                    self.data.extend_from_within(start..start + stride);
                }
                None => {
                    let img = renderer.render_word(s);
                    self.data.extend_from_slice(img.as_bytes());
                    seen.insert(s, self.surfaces.len());
                }
            }
            self.surfaces.push(s.to_string());
        }
        Ok(())
    }

    /// New atlas with `extra` rendered after the existing rows; ids of the
    /// extras start at `self.len()`.
    pub fn extend<S: AsRef<str>>(&self, extra: &[S], renderer: &Renderer) -> Result<Self, AtlasError> {
        if renderer.fingerprint() != self.config_hash {
            return Err(AtlasError::ConfigMismatch);
        }
        let mut out = self.clone();
        out.append(extra, renderer, self.len())?;
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Flattened image length `H * W * channels`.
    pub fn stride(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn config_hash(&self) -> [u8; 32] {
        self.config_hash
    }

    pub fn surfaces(&self) -> &[String] {
        &self.surfaces
    }

    pub fn surface(&self, id: usize) -> Option<&str> {
        self.surfaces.get(id).map(String::as_str)
    }

    /// Raw 8-bit row of `id`.
    pub fn row_bytes(&self, id: usize) -> Result<&[u8], AtlasError> {
        if id >= self.len() {
            return Err(AtlasError::IdOutOfRange { id, len: self.len() });
        }
        let stride = self.stride();
        Ok(&self.data[id * stride..(id + 1) * stride])
    }

    /// The whole matrix as 8-bit intensities, row-major.
    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    /// The whole matrix with intensities in `[0, 1]`.
    pub fn matrix<T: Scalar>(&self) -> Array2<T> {
        let scale = T::one() / T::from_f64_lossy(255.0);
        Array2::from_shape_fn((self.len(), self.stride()), |(r, c)| {
            T::from_f64_lossy(f64::from(self.data[r * self.stride() + c])) * scale
        })
    }

    /// Row gather: row `j` of the result is the image of `ids[j]`.
    pub fn lookup<T: Scalar>(&self, ids: &[usize]) -> Result<Array2<T>, AtlasError> {
        let stride = self.stride();
        let scale = T::one() / T::from_f64_lossy(255.0);
        let mut out = Array2::zeros((ids.len(), stride));
        for (j, &id) in ids.iter().enumerate() {
            let src = self.row_bytes(id)?;
            for (dst, &b) in out.row_mut(j).iter_mut().zip(src) {
                *dst = T::from_f64_lossy(f64::from(b)) * scale;
            }
        }
        Ok(out)
    }

    /// Same result as [`lookup`](Self::lookup), computed as `one_hot · M`.
    pub fn lookup_as_product<T: Scalar>(&self, one_hot: ArrayView2<'_, T>) -> Result<Array2<T>, AtlasError> {
        if one_hot.ncols() != self.len() {
            return Err(AtlasError::OneHotShape { cols: one_hot.ncols(), rows: self.len() });
        }
        for (r, row) in one_hot.rows().into_iter().enumerate() {
            let ones = row.iter().filter(|&&v| v == T::one()).count();
            let zeros = row.iter().filter(|&&v| v == T::zero()).count();
            if ones != 1 || ones + zeros != row.len() {
                return Err(AtlasError::MalformedOneHot { row: r });
            }
        }
        Ok(one_hot.dot(&self.matrix::<T>()))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), AtlasError> {
        let to_u32 = |v: usize, what: &str| {
            u32::try_from(v).map_err(|_| AtlasError::Format(format!("{what} does not fit in u32")))
        };
        w.write_all(ATLAS_MAGIC)?;
        for (v, what) in [
            (self.len(), "vocab size"),
            (self.height, "height"),
            (self.width, "width"),
            (self.channels, "channels"),
        ] {
            w.write_all(&to_u32(v, what)?.to_le_bytes())?;
        }
        w.write_all(&self.config_hash)?;
        let mut table = Vec::new();
        for s in &self.surfaces {
            table.extend_from_slice(s.as_bytes());
            table.push(0);
        }
        w.write_all(&to_u32(table.len(), "surface table")?.to_le_bytes())?;
        w.write_all(&table)?;
        w.write_all(&self.data)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.data.len() + 64);
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AtlasError> {
        let mut r = bytes;
        Self::read_from(&mut r).and_then(|atlas| {
            if r.is_empty() {
                Ok(atlas)
            } else {
                Err(AtlasError::Format(format!("{} trailing bytes", r.len())))
            }
        })
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, AtlasError> {
        let truncated = |e: io::Error| {
            if e.kind() == io::ErrorKind::UnexpectedEof {
                AtlasError::Format("truncated file".into())
            } else {
                AtlasError::Io(e)
            }
        };
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != ATLAS_MAGIC {
            return Err(AtlasError::Format("bad magic".into()));
        }
        let read_u32 = |r: &mut R| -> Result<usize, AtlasError> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(truncated)?;
            Ok(u32::from_le_bytes(b) as usize)
        };
        let n = read_u32(&mut r)?;
        let height = read_u32(&mut r)?;
        let width = read_u32(&mut r)?;
        let channels = read_u32(&mut r)?;
        let mut config_hash = [0u8; 32];
        r.read_exact(&mut config_hash).map_err(truncated)?;
        let table_len = read_u32(&mut r)?;
        let mut table = Vec::new();
        r.by_ref().take(table_len as u64).read_to_end(&mut table)?;
        if table.len() != table_len {
            return Err(AtlasError::Format("truncated file".into()));
        }
        if table.last().is_some_and(|&b| b != 0) {
            return Err(AtlasError::Format("surface table is not NUL-terminated".into()));
        }
        let surfaces: Vec<String> = if table.is_empty() {
            Vec::new()
        } else {
            table[..table.len() - 1]
                .split(|&b| b == 0)
                .map(|s| String::from_utf8(s.to_vec()))
                .collect::<Result<_, _>>()
                .map_err(|_| AtlasError::Format("surface is not valid UTF-8".into()))?
        };
        if surfaces.len() != n {
            return Err(AtlasError::Format(format!("header says {n} surfaces, table has {}", surfaces.len())));
        }
        let expected = n
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .and_then(|v| v.checked_mul(channels))
            .ok_or_else(|| AtlasError::Format("dimensions overflow".into()))?;
        let mut data = Vec::new();
        r.take(expected as u64).read_to_end(&mut data)?;
        if data.len() != expected {
            return Err(AtlasError::Format("truncated file".into()));
        }
        Ok(Self { height, width, channels, config_hash, surfaces, data })
    }

    pub fn persist(&self, path: &Path) -> Result<(), AtlasError> {
        let f = std::fs::File::create(path)?;
        let mut w = io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn restore(path: &Path) -> Result<Self, AtlasError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Restores and checks that the atlas was produced by `renderer`.
    pub fn restore_for(path: &Path, renderer: &Renderer) -> Result<Self, AtlasError> {
        let atlas = Self::restore(path)?;
        if atlas.config_hash != renderer.fingerprint() {
            return Err(AtlasError::ConfigMismatch);
        }
        Ok(atlas)
    }
}

/// Indicator matrix with a single 1 per row.
pub fn one_hot<T: Scalar>(ids: &[TokenId], vocab_size: usize) -> Array2<T> {
    let mut m = Array2::zeros((ids.len(), vocab_size));
    for (r, &id) in ids.iter().enumerate() {
        m[[r, id as usize]] = T::one();
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::RenderConfig;

    fn renderer() -> Renderer {
        Renderer::with_defaults().unwrap()
    }

    fn small() -> VocabAtlas {
        let words = ["", "the", "cat", "sat", "on", "a", "mat", "dog", "log", "zürich"];
        VocabAtlas::build(&words, &renderer()).unwrap()
    }

    #[test]
    fn single_token_row_is_its_render() {
        let r = renderer();
        let atlas = VocabAtlas::build(&["a"], &r).unwrap();
        assert_eq!(atlas.as_bytes().len(), 1000);
        assert_eq!(atlas.row_bytes(0).unwrap(), r.render_word("a").as_bytes());
    }

    #[test]
    fn empty_lookup_keeps_width() {
        let m = small().lookup::<f32>(&[]).unwrap();
        assert_eq!(m.dim(), (0, 1000));
    }

    #[test]
    fn repeated_ids_give_identical_rows() {
        let m = small().lookup::<f32>(&[5, 5]).unwrap();
        assert_eq!(m.row(0), m.row(1));
    }

    #[test]
    fn out_of_range_names_id() {
        let err = small().lookup::<f32>(&[1, 10]).unwrap_err();
        assert!(matches!(err, AtlasError::IdOutOfRange { id: 10, len: 10 }));
    }

    #[test]
    fn identity_indicator_returns_matrix() {
        let atlas = small();
        let eye = Array2::<f64>::eye(atlas.len());
        assert_eq!(atlas.lookup_as_product(eye.view()).unwrap(), atlas.matrix::<f64>());
    }

    #[test]
    fn malformed_indicator_rejected() {
        let atlas = small();
        let mut m = one_hot::<f32>(&[1, 2], atlas.len());
        m[[1, 3]] = 1.0;
        assert!(matches!(atlas.lookup_as_product(m.view()), Err(AtlasError::MalformedOneHot { row: 1 })));
        let mut m = one_hot::<f32>(&[1], atlas.len());
        m[[0, 1]] = 0.5;
        m[[0, 2]] = 0.5;
        assert!(atlas.lookup_as_product(m.view()).is_err());
        let m = Array2::<f32>::zeros((1, 3));
        assert!(matches!(atlas.lookup_as_product(m.view()), Err(AtlasError::OneHotShape { .. })));
    }

    #[test]
    fn non_dense_map_rejected() {
        let mut map = BTreeMap::new();
        map.insert(0, "a".to_string());
        map.insert(2, "b".to_string());
        assert!(matches!(
            VocabAtlas::build_from_map(&map, &renderer()),
            Err(AtlasError::NonDense { expected: 1, found: 2 })
        ));
    }

    #[test]
    fn extend_appends_and_keeps_prefix() {
        let r = renderer();
        let base = small();
        let same = base.extend::<&str>(&[], &r).unwrap();
        assert_eq!(same, base);
        let ext = base.extend(&["zürich", "день"], &r).unwrap();
        assert_eq!(ext.len(), base.len() + 2);
        assert_eq!(&ext.as_bytes()[..base.as_bytes().len()], base.as_bytes());
        assert_eq!(ext.row_bytes(base.len() + 1).unwrap(), r.render_word("день").as_bytes());
    }

    #[test]
    fn extend_with_other_config_fails() {
        let other = Renderer::new(RenderConfig { image_width: 40, ..Default::default() }).unwrap();
        assert!(matches!(small().extend(&["x"], &other), Err(AtlasError::ConfigMismatch)));
    }

    #[test]
    fn round_trip_and_corruption() {
        let atlas = small();
        let bytes = atlas.to_bytes();
        assert_eq!(&bytes[..8], ATLAS_MAGIC);
        assert_eq!(VocabAtlas::from_bytes(&bytes).unwrap(), atlas);
        for cut in [0, 7, 20, 60, bytes.len() - 1] {
            assert!(matches!(VocabAtlas::from_bytes(&bytes[..cut]), Err(AtlasError::Format(_))), "cut {cut}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'Q';
        assert!(matches!(VocabAtlas::from_bytes(&bad), Err(AtlasError::Format(_))));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(VocabAtlas::from_bytes(&long), Err(AtlasError::Format(_))));
    }
}
