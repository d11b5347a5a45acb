//! Adaptive per-word rasterizer.
//!
//! Every token is drawn into its own fixed-size single-channel canvas. The font
//! size is chosen per word: the largest size in `[min_font_size, max_font_size]`
//! whose ink box fits the canvas. Words that do not fit even at the floor are
//! drawn at the floor and squeezed horizontally by area averaging.
//!
//! Characters the font maps to notdef fall back to the GNU Unifont bitmap
//! glyphs, scaled to the same em size, so every script in the Basic
//! Multilingual Plane draws as itself rather than as a box.

use std::fmt;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use fontdue::{Font, FontSettings};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Font shipped with the crate (DejaVu Sans). Covers Latin, Greek and
/// Cyrillic; other scripts come from the bitmap fallback.
pub static EMBEDDED_FONT: &[u8] = include_bytes!("../assets/pixlm-sans.ttf");

/// Bumped whenever a change to this module can alter output pixels.
pub const RENDERER_VERSION: &str = "pixlm-render/2";

/// Horizontal margin in pixels kept free left and right of the ink.
const MARGIN: usize = 1;

/// Unifont cells are 16 px tall with the baseline 2 px above the bottom.
const CELL: usize = 16;
const CELL_ASCENT: usize = 14;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("cannot read font file {path}: {source}")]
    FontUnreadable { path: PathBuf, source: io::Error },
    #[error("cannot parse font: {0}")]
    FontInvalid(String),
    #[error("invalid render config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RenderConfig {
    /// `None` selects [`EMBEDDED_FONT`].
    pub font_file: Option<PathBuf>,
    pub basic_font_size: u32,
    pub image_height: usize,
    pub image_width: usize,
    pub channels: usize,
    pub max_font_size: u32,
    pub min_font_size: u32,
    /// When true ink is 1 on a 0 background; when false the image is inverted.
    pub ink_high: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            font_file: None,
            basic_font_size: 10,
            image_height: 20,
            image_width: 50,
            channels: 1,
            max_font_size: 20,
            min_font_size: 4,
            ink_high: true,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<(), RenderError> {
        let bad = |msg: &str| Err(RenderError::InvalidConfig(msg.to_string()));
        if self.image_height == 0 || self.image_width == 0 {
            return bad("image dimensions must be positive");
        }
        if self.image_width <= 2 * MARGIN {
            return bad("image_width too small for the horizontal margin");
        }
        if self.channels != 1 {
            return bad("only single-channel images are supported");
        }
        if self.min_font_size < 1 {
            return bad("min_font_size must be at least 1");
        }
        if !(self.min_font_size <= self.basic_font_size && self.basic_font_size <= self.max_font_size) {
            return bad("font sizes must satisfy min <= basic <= max");
        }
        Ok(())
    }

    pub fn pixels_per_image(&self) -> usize {
        self.image_height * self.image_width
    }

    /// Canonical text form used for hashing and manifests.
    pub fn canonical(&self) -> String {
        format!(
            "font={};basic={};h={};w={};c={};max={};min={};ink_high={}",
            self.font_file
                .as_deref()
                .map(|p| p.display().to_string())
                .unwrap_or_else(|| "<embedded>".into()),
            self.basic_font_size,
            self.image_height,
            self.image_width,
            self.channels,
            self.max_font_size,
            self.min_font_size,
            self.ink_high
        )
    }
}

/// Fixed-size raster of one token. Intensities are stored as 8-bit coverage
/// and exposed as values in `[0, 1]`.
#[derive(Clone, PartialEq, Eq)]
pub struct GlyphImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
    source_text: String,
}

impl fmt::Debug for GlyphImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GlyphImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("source_text", &self.source_text)
            .field("ink", &self.ink_sum())
            .finish()
    }
}

impl GlyphImage {
    pub fn from_bytes(width: usize, height: usize, pixels: Vec<u8>, source_text: impl Into<String>) -> Self {
        assert_eq!(pixels.len(), width * height, "pixel buffer does not match dimensions");
        Self { width, height, pixels, source_text: source_text.into() }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn source_text(&self) -> &str {
        &self.source_text
    }

    /// Row-major 8-bit coverage, `round(255 * value)`.
    pub fn as_bytes(&self) -> &[u8] {
        &self.pixels
    }

    pub fn value(&self, row: usize, col: usize) -> f32 {
        f32::from(self.pixels[row * self.width + col]) / 255.0
    }

    /// Row-major intensities in `[0, 1]`.
    pub fn values(&self) -> impl Iterator<Item = f32> + '_ {
        self.pixels.iter().map(|&p| f32::from(p) / 255.0)
    }

    pub fn ink_sum(&self) -> f64 {
        self.pixels.iter().map(|&p| f64::from(p) / 255.0).sum()
    }

    pub fn is_blank(&self) -> bool {
        self.pixels.iter().all(|&p| p == 0)
    }

    /// Binary PGM (`P5`) encoding.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write_pgm(&self, path: &Path) -> io::Result<()> {
        std::fs::write(path, self.to_pgm())
    }

    pub fn write_png(&self, path: &Path) -> io::Result<()> {
        write_gray_png(path, self.width, self.height, &self.pixels)
    }
}

pub(crate) fn write_gray_png(path: &Path, width: usize, height: usize, pixels: &[u8]) -> io::Result<()> {
    let file = std::fs::File::create(path)?;
    let mut encoder = png::Encoder::new(io::BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(io::Error::other)?;
    writer.write_image_data(pixels).map_err(io::Error::other)?;
    writer.finish().map_err(io::Error::other)?;
    Ok(())
}

/// Ink extents of a laid-out string in font units, y axis pointing up from
/// the baseline.
#[derive(Clone, Copy, Debug, PartialEq)]
struct InkBox {
    left: f64,
    right: f64,
    bottom: f64,
    top: f64,
}

impl InkBox {
    fn width(&self) -> f64 {
        self.right - self.left
    }

    fn height(&self) -> f64 {
        self.top - self.bottom
    }
}

#[derive(Clone, Copy, Debug)]
enum GlyphRef {
    /// Glyph index into the outline font.
    Outline(u16),
    /// Fallback bitmap for a character the font lacks.
    Bitmap(&'static unifont::Glyph),
}

#[derive(Clone, Debug)]
struct Layout {
    /// `(glyph, pen position in font units)`; whitespace is omitted.
    glyphs: Vec<(GlyphRef, f64)>,
    ink: Option<InkBox>,
}

struct Inner {
    config: RenderConfig,
    font: Font,
    font_digest: [u8; 32],
    units_per_em: f64,
    ascent: f64,
    descent: f64,
    space_advance: f64,
}

/// Rasterizer bound to one [`RenderConfig`] and its font. Cheap to clone and
/// safe to share across threads.
#[derive(Clone)]
pub struct Renderer {
    inner: Arc<Inner>,
}

impl fmt::Debug for Renderer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Renderer").field("config", &self.inner.config).finish()
    }
}

impl Renderer {
    pub fn new(config: RenderConfig) -> Result<Self, RenderError> {
        config.validate()?;
        let bytes: Vec<u8> = match &config.font_file {
            None => EMBEDDED_FONT.to_vec(),
            Some(path) => std::fs::read(path)
                .map_err(|source| RenderError::FontUnreadable { path: path.clone(), source })?,
        };
        let font_digest: [u8; 32] = Sha256::digest(&bytes).into();
        let font = Font::from_bytes(bytes, FontSettings::default())
            .map_err(|e| RenderError::FontInvalid(e.to_string()))?;
        let units_per_em = f64::from(font.units_per_em());
        let (ascent, descent) = match font.horizontal_line_metrics(font.units_per_em()) {
            Some(lm) => (f64::from(lm.ascent), f64::from(lm.descent)),
            None => (0.8 * units_per_em, -0.2 * units_per_em),
        };
        let space_advance = match font.lookup_glyph_index(' ') {
            0 => 0.25 * units_per_em,
            idx => f64::from(font.metrics_indexed(idx, font.units_per_em()).advance_width),
        };
        Ok(Self {
            inner: Arc::new(Inner { config, font, font_digest, units_per_em, ascent, descent, space_advance }),
        })
    }

    /// Renderer over the embedded font with the default 20x50 geometry.
    pub fn with_defaults() -> Result<Self, RenderError> {
        Self::new(RenderConfig::default())
    }

    pub fn config(&self) -> &RenderConfig {
        &self.inner.config
    }

    pub fn font_digest(&self) -> [u8; 32] {
        self.inner.font_digest
    }

    /// Digest of everything that determines output pixels: renderer version,
    /// geometry and font bytes.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(RENDERER_VERSION.as_bytes());
        hasher.update([0u8]);
        let cfg = &self.inner.config;
        // font path is deliberately excluded; the font bytes identify the font
        let geometry = format!(
            "basic={};h={};w={};c={};max={};min={};ink_high={}",
            cfg.basic_font_size,
            cfg.image_height,
            cfg.image_width,
            cfg.channels,
            cfg.max_font_size,
            cfg.min_font_size,
            cfg.ink_high
        );
        hasher.update(geometry.as_bytes());
        hasher.update([0u8]);
        hasher.update(self.inner.font_digest);
        hasher.finalize().into()
    }

    /// Whether `c` draws as a real glyph, from the font or the fallback.
    pub fn has_glyph(&self, c: char) -> bool {
        self.inner.font.lookup_glyph_index(c) != 0 || unifont::get_glyph(c).is_some()
    }

    /// Non-whitespace characters of `text` that would be drawn as notdef.
    pub fn missing_chars(&self, text: &str) -> Vec<char> {
        text.chars().filter(|c| !c.is_whitespace() && !self.has_glyph(*c)).collect()
    }

    fn layout(&self, text: &str) -> Layout {
        let inner = &*self.inner;
        let upm = inner.font.units_per_em();
        let mut pen = 0.0f64;
        let mut glyphs = Vec::with_capacity(text.len());
        let mut ink: Option<InkBox> = None;
        for c in text.chars() {
            if c.is_whitespace() {
                pen += inner.space_advance;
                continue;
            }
            let idx = inner.font.lookup_glyph_index(c);
            let (glyph, bounds, advance) = match (idx, unifont::get_glyph(c)) {
                (0, Some(bitmap)) => {
                    let (bounds, advance) = bitmap_extent(bitmap, inner.units_per_em);
                    (GlyphRef::Bitmap(bitmap), bounds, advance)
                }
                _ => {
                    // metrics at px == units_per_em are in font units
                    let m = inner.font.metrics_indexed(idx, upm);
                    let b = m.bounds;
                    let bounds = (b.width > 0.0 && b.height > 0.0).then(|| InkBox {
                        left: f64::from(b.xmin),
                        right: f64::from(b.xmin) + f64::from(b.width),
                        bottom: f64::from(b.ymin),
                        top: f64::from(b.ymin) + f64::from(b.height),
                    });
                    (GlyphRef::Outline(idx), bounds, f64::from(m.advance_width))
                }
            };
            if let Some(b) = bounds {
                let g = InkBox { left: pen + b.left, right: pen + b.right, ..b };
                ink = Some(match ink {
                    None => g,
                    Some(acc) => InkBox {
                        left: acc.left.min(g.left),
                        right: acc.right.max(g.right),
                        bottom: acc.bottom.min(g.bottom),
                        top: acc.top.max(g.top),
                    },
                });
            }
            glyphs.push((glyph, pen));
            pen += advance;
        }
        Layout { glyphs, ink }
    }

    fn fits_layout(&self, layout: &Layout, size: u32) -> bool {
        let Some(ink) = layout.ink else { return true };
        let cfg = &self.inner.config;
        let scale = f64::from(size) / self.inner.units_per_em;
        // one spare pixel on each axis absorbs raster rounding
        let max_w = (cfg.image_width - 2 * MARGIN) as f64 - 1.0;
        let max_h = cfg.image_height as f64 - 1.0;
        ink.width() * scale <= max_w && ink.height() * scale <= max_h
    }

    /// Whether the ink box of `text` at `size` fits the canvas.
    pub fn fits(&self, text: &str, size: u32) -> bool {
        self.fits_layout(&self.layout(text), size)
    }

    /// Largest size in `[min_font_size, max_font_size]` at which `text` fits,
    /// `min_font_size` when nothing fits, `basic_font_size` for empty text.
    pub fn fit_font_size(&self, text: &str) -> u32 {
        let cfg = &self.inner.config;
        if text.is_empty() {
            return cfg.basic_font_size;
        }
        let layout = self.layout(text);
        self.fit_layout(&layout)
    }

    fn fit_layout(&self, layout: &Layout) -> u32 {
        let cfg = &self.inner.config;
        let (mut lo, mut hi) = (cfg.min_font_size, cfg.max_font_size);
        if !self.fits_layout(layout, lo) {
            return lo;
        }
        // invariant: fits(lo), and every size above hi fails
        while lo < hi {
            let mid = lo + (hi - lo).div_ceil(2);
            if self.fits_layout(layout, mid) {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        lo
    }

    /// Rasterize one word into a canvas of the configured size.
    pub fn render_word(&self, text: &str) -> GlyphImage {
        let cfg = &self.inner.config;
        let (w, h) = (cfg.image_width, cfg.image_height);
        let mut canvas = vec![0u8; w * h];
        let layout = self.layout(text);
        if layout.ink.is_some() {
            let size = if text.is_empty() { cfg.basic_font_size } else { self.fit_layout(&layout) };
            let strip = self.rasterize_strip(&layout, size);
            self.place(&strip, size, &mut canvas);
        }
        if !cfg.ink_high {
            canvas.iter_mut().for_each(|p| *p = 255 - *p);
        }
        GlyphImage { width: w, height: h, pixels: canvas, source_text: text.to_string() }
    }

    /// `render_word` over each element, order preserved.
    pub fn render_sequence<S: AsRef<str>>(&self, texts: &[S]) -> Vec<GlyphImage> {
        texts.iter().map(|t| self.render_word(t.as_ref())).collect()
    }

    /// Draws every glyph into a tight buffer around the raster ink.
    fn rasterize_strip(&self, layout: &Layout, size: u32) -> Strip {
        let font = &self.inner.font;
        let px = size as f32;
        let scale = f64::from(size) / self.inner.units_per_em;
        let mut pieces = Vec::with_capacity(layout.glyphs.len());
        let (mut x0, mut x1, mut y0, mut y1) = (i64::MAX, i64::MIN, i64::MAX, i64::MIN);
        for &(glyph, pen) in &layout.glyphs {
            let origin = (pen * scale).round() as i64;
            // y grows downward from the baseline
            let (left, top, gw, gh, bitmap) = match glyph {
                GlyphRef::Outline(idx) => {
                    let (m, bitmap) = font.rasterize_indexed(idx, px);
                    let top = -(i64::from(m.ymin) + m.height as i64);
                    (origin + i64::from(m.xmin), top, m.width, m.height, bitmap)
                }
                GlyphRef::Bitmap(cell) => {
                    let s = scale_cell(cell, size);
                    (origin, s.top, s.width, s.height, s.pixels)
                }
            };
            if gw == 0 || gh == 0 {
                continue;
            }
            x0 = x0.min(left);
            x1 = x1.max(left + gw as i64);
            y0 = y0.min(top);
            y1 = y1.max(top + gh as i64);
            pieces.push((left, top, gw, gh, bitmap));
        }
        if pieces.is_empty() {
            return Strip { width: 0, height: 0, top: 0, pixels: Vec::new() };
        }
        let (sw, sh) = ((x1 - x0) as usize, (y1 - y0) as usize);
        let mut pixels = vec![0u8; sw * sh];
        for (left, top, gw, gh, bitmap) in pieces {
            let ox = (left - x0) as usize;
            let oy = (top - y0) as usize;
            for r in 0..gh {
                let dst = &mut pixels[(oy + r) * sw + ox..(oy + r) * sw + ox + gw];
                for (d, &s) in dst.iter_mut().zip(&bitmap[r * gw..(r + 1) * gw]) {
                    *d = d.saturating_add(s);
                }
            }
        }
        trim(Strip { width: sw, height: sh, top: y0, pixels })
    }

    fn place(&self, strip: &Strip, size: u32, canvas: &mut [u8]) {
        if strip.width == 0 {
            return;
        }
        let cfg = &self.inner.config;
        let (w, h) = (cfg.image_width, cfg.image_height);
        let avail_w = w - 2 * MARGIN;
        let mut strip = strip.clone();
        if strip.width > avail_w {
            strip = squeeze_columns(&strip, avail_w);
        }
        if strip.height > h {
            strip = squeeze_rows(&strip, h);
        }
        let scale = f64::from(size) / self.inner.units_per_em;
        // baseline sits where a centred ascent..descent line box puts it
        let line_h = (self.inner.ascent - self.inner.descent) * scale;
        let baseline = ((h as f64 - line_h) / 2.0 + self.inner.ascent * scale).round() as i64;
        let max_top = (h - strip.height) as i64;
        let top = (baseline + strip.top).clamp(0, max_top) as usize;
        for r in 0..strip.height {
            let row = &strip.pixels[r * strip.width..(r + 1) * strip.width];
            let dst = &mut canvas[(top + r) * w + MARGIN..(top + r) * w + MARGIN + strip.width];
            dst.copy_from_slice(row);
        }
    }
}

#[derive(Clone, Debug)]
struct Strip {
    width: usize,
    height: usize,
    /// Row of the strip's first line relative to the baseline (down positive).
    top: i64,
    pixels: Vec<u8>,
}

/// Ink box and advance of a fallback cell in font units, one em per cell
/// height.
fn bitmap_extent(glyph: &unifont::Glyph, units_per_em: f64) -> (Option<InkBox>, f64) {
    let unit = units_per_em / CELL as f64;
    let w = glyph.get_width();
    let lit = |x: usize, y: usize| glyph.get_pixel(x, y);
    let cols: Vec<usize> = (0..w).filter(|&x| (0..CELL).any(|y| lit(x, y))).collect();
    let rows: Vec<usize> = (0..CELL).filter(|&y| (0..w).any(|x| lit(x, y))).collect();
    let advance = w as f64 * unit;
    let (Some(&c0), Some(&c1), Some(&r0), Some(&r1)) = (cols.first(), cols.last(), rows.first(), rows.last()) else {
        return (None, advance);
    };
    let ink = InkBox {
        left: c0 as f64 * unit,
        right: (c1 + 1) as f64 * unit,
        bottom: (CELL_ASCENT as f64 - (r1 + 1) as f64) * unit,
        top: (CELL_ASCENT as f64 - r0 as f64) * unit,
    };
    (Some(ink), advance)
}

/// Area-scales a fallback cell so that its height equals `size` pixels.
fn scale_cell(glyph: &unifont::Glyph, size: u32) -> Strip {
    let w = glyph.get_width();
    let pixels = (0..CELL)
        .flat_map(|y| (0..w).map(move |x| if glyph.get_pixel(x, y) { 255 } else { 0 }))
        .collect();
    let cell = Strip { width: w, height: CELL, top: -(CELL_ASCENT as i64), pixels };
    let size = size.max(1) as usize;
    let wide = squeeze_columns(&cell, (w * size).div_ceil(CELL).max(1));
    squeeze_rows(&wide, size)
}

/// Drops all-zero border rows and columns.
fn trim(strip: Strip) -> Strip {
    let Strip { width, height, top, pixels } = strip;
    let col_has_ink = |c: usize| (0..height).any(|r| pixels[r * width + c] != 0);
    let row_has_ink = |r: usize| pixels[r * width..(r + 1) * width].iter().any(|&p| p != 0);
    let Some(c0) = (0..width).find(|&c| col_has_ink(c)) else {
        return Strip { width: 0, height: 0, top: 0, pixels: Vec::new() };
    };
    let c1 = (0..width).rev().find(|&c| col_has_ink(c)).unwrap() + 1;
    let r0 = (0..height).find(|&r| row_has_ink(r)).unwrap();
    let r1 = (0..height).rev().find(|&r| row_has_ink(r)).unwrap() + 1;
    let (nw, nh) = (c1 - c0, r1 - r0);
    let mut out = Vec::with_capacity(nw * nh);
    for r in r0..r1 {
        out.extend_from_slice(&pixels[r * width + c0..r * width + c1]);
    }
    Strip { width: nw, height: nh, top: top + r0 as i64, pixels: out }
}

/// Area-averaging resample of a 1-D signal to `dst_len` samples.
fn area_resample(src: &[f64], dst_len: usize) -> Vec<f64> {
    let ratio = src.len() as f64 / dst_len as f64;
    (0..dst_len)
        .map(|j| {
            let (a, b) = (j as f64 * ratio, (j + 1) as f64 * ratio);
            let mut acc = 0.0;
            let mut i = a.floor() as usize;
            while (i as f64) < b && i < src.len() {
                let lo = a.max(i as f64);
                let hi = b.min(i as f64 + 1.0);
                acc += src[i] * (hi - lo);
                i += 1;
            }
            acc / ratio
        })
        .collect()
}

fn squeeze_columns(strip: &Strip, width: usize) -> Strip {
    let mut pixels = Vec::with_capacity(width * strip.height);
    for r in 0..strip.height {
        let row: Vec<f64> = strip.pixels[r * strip.width..(r + 1) * strip.width]
            .iter()
            .map(|&p| f64::from(p))
            .collect();
        pixels.extend(area_resample(&row, width).into_iter().map(quantize));
    }
    Strip { width, height: strip.height, top: strip.top, pixels }
}

fn squeeze_rows(strip: &Strip, height: usize) -> Strip {
    let mut pixels = vec![0u8; strip.width * height];
    for c in 0..strip.width {
        let col: Vec<f64> = (0..strip.height).map(|r| f64::from(strip.pixels[r * strip.width + c])).collect();
        for (r, v) in area_resample(&col, height).into_iter().enumerate() {
            pixels[r * strip.width + c] = quantize(v);
        }
    }
    let top = strip.top * height as i64 / strip.height.max(1) as i64;
    Strip { width: strip.width, height, top, pixels }
}

fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Writes `img` as PGM or PNG depending on the file extension.
pub fn save_image(img: &GlyphImage, path: &Path) -> io::Result<()> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => img.write_png(path),
        _ => {
            let mut f = std::fs::File::create(path)?;
            f.write_all(&img.to_pgm())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn renderer() -> Renderer {
        Renderer::with_defaults().unwrap()
    }

    #[test]
    fn empty_text_uses_basic_size_and_blank_canvas() {
        let r = renderer();
        assert_eq!(r.fit_font_size(""), 10);
        let img = r.render_word("");
        assert_eq!((img.width(), img.height()), (50, 20));
        assert!(img.is_blank());
    }

    #[test]
    fn single_letter_scales_to_ceiling() {
        let r = renderer();
        assert_eq!(r.fit_font_size("a"), r.config().max_font_size);
        assert!(r.render_word("a").ink_sum() > 0.0);
    }

    #[test]
    fn long_word_scales_down() {
        let r = renderer();
        let s = r.fit_font_size("internationalization");
        assert!(s < 10, "got {s}");
        assert!(r.fits("internationalization", s));
        assert!(!r.fits("internationalization", s + 1));
    }

    #[test]
    fn whitespace_only_is_blank() {
        let r = renderer();
        assert!(r.render_word("   \t ").is_blank());
    }

    #[test]
    fn pathological_word_is_squeezed_not_clipped() {
        let r = renderer();
        let text = "W".repeat(200);
        assert_eq!(r.fit_font_size(&text), 4);
        let img = r.render_word(&text);
        assert!(img.ink_sum() > 0.0);
        for row in 0..img.height() {
            assert_eq!(img.value(row, 0), 0.0);
            assert_eq!(img.value(row, img.width() - 1), 0.0);
        }
    }

    #[test]
    fn left_margin_is_one_pixel() {
        let r = renderer();
        let img = r.render_word("hello");
        let first_ink_col = (0..img.width())
            .find(|&c| (0..img.height()).any(|row| img.value(row, c) > 0.0))
            .unwrap();
        assert_eq!(first_ink_col, 1);
    }

    #[test]
    fn inverted_polarity() {
        let cfg = RenderConfig { ink_high: false, ..RenderConfig::default() };
        let r = Renderer::new(cfg).unwrap();
        assert!(r.render_word("").as_bytes().iter().all(|&p| p == 255));
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = [
            RenderConfig { image_height: 0, ..Default::default() },
            RenderConfig { channels: 3, ..Default::default() },
            RenderConfig { min_font_size: 0, ..Default::default() },
            RenderConfig { min_font_size: 12, ..Default::default() },
            RenderConfig { max_font_size: 8, ..Default::default() },
        ];
        for cfg in bad {
            assert!(matches!(Renderer::new(cfg), Err(RenderError::InvalidConfig(_))));
        }
    }

    #[test]
    fn unreadable_font_is_config_error() {
        let cfg = RenderConfig { font_file: Some("/nonexistent/font.ttf".into()), ..Default::default() };
        assert!(matches!(Renderer::new(cfg), Err(RenderError::FontUnreadable { .. })));
    }

    #[test]
    fn pgm_header_is_exact() {
        let img = renderer().render_word("hi");
        let pgm = img.to_pgm();
        let header = b"P5\n50 20\n255\n";
        assert_eq!(&pgm[..header.len()], header);
        assert_eq!(pgm.len(), header.len() + 1000);
        assert_eq!(&pgm[header.len()..], img.as_bytes());
    }

    #[test]
    fn area_resample_preserves_mass() {
        let src: Vec<f64> = (0..37).map(|i| (i * 7 % 11) as f64).collect();
        let dst = area_resample(&src, 10);
        let ratio = 37.0 / 10.0;
        let total: f64 = dst.iter().map(|v| v * ratio).sum();
        assert!((total - src.iter().sum::<f64>()).abs() < 1e-9);
    }
}
