//! Grayscale line charts for sweep reports, written as PGM or PNG.

use std::path::Path;

use crate::render::{GlyphImage, RenderConfig, RenderError, Renderer};

const WIDTH: usize = 560;
const HEIGHT: usize = 360;
const LEFT: usize = 70;
const RIGHT: usize = 150;
const TOP: usize = 30;
const BOTTOM: usize = 40;

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub series: Vec<Series>,
}

struct Canvas {
    px: Vec<u8>,
}

impl Canvas {
    fn set(&mut self, x: i64, y: i64, v: u8) {
        if (0..WIDTH as i64).contains(&x) && (0..HEIGHT as i64).contains(&y) {
            let i = y as usize * WIDTH + x as usize;
            self.px[i] = self.px[i].min(v);
        }
    }

    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), v: u8, dash: usize) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        let mut n = 0usize;
        loop {
            if dash == 0 || (n / dash).is_multiple_of(2) {
                self.set(x, y, v);
                self.set(x, y + 1, v);
            }
            n += 1;
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    fn marker(&mut self, (x, y): (i64, i64), v: u8, style: usize) {
        for d in -3i64..=3 {
            match style % 4 {
                0 => (-3..=3).for_each(|e| self.set(x + d, y + e, v)),
                1 => {
                    self.set(x + d, y + d, v);
                    self.set(x + d, y - d, v);
                }
                2 => {
                    self.set(x + d, y, v);
                    self.set(x, y + d, v);
                }
                _ => {
                    for (a, b) in [(d, -3), (d, 3), (-3, d), (3, d)] {
                        self.set(x + a, y + b, v);
                    }
                }
            }
        }
    }

    /// Draws dark ink from `img` with its top-left corner at `(x, y)`.
    fn blit(&mut self, img: &GlyphImage, x: usize, y: usize) {
        let (w, h) = (img.width(), img.height());
        for r in 0..h {
            for c in 0..w {
                let ink = img.as_bytes()[r * w + c];
                if ink > 0 {
                    self.set((x + c) as i64, (y + r) as i64, 255 - ink);
                }
            }
        }
    }
}

impl LinePlot {
    /// Renders the chart; text is drawn with the embedded font.
    pub fn render(&self) -> Result<GlyphImage, RenderError> {
        let label_font = Renderer::new(RenderConfig {
            image_height: 16,
            image_width: 140,
            basic_font_size: 12,
            max_font_size: 12,
            ..RenderConfig::default()
        })?;
        let mut cv = Canvas { px: vec![255; WIDTH * HEIGHT] };
        let points: Vec<(f64, f64)> = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().copied())
            .filter(|p| p.0.is_finite() && p.1.is_finite() && (!self.log_y || p.1 > 0.0))
            .collect();
        let ty = |y: f64| if self.log_y { y.log10() } else { y };
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for &(x, y) in &points {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(ty(y));
            y1 = y1.max(ty(y));
        }
        if points.is_empty() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 - x0 < 1e-12 {
            x1 = x0 + 1.0;
        }
        if y1 - y0 < 1e-12 {
            y1 = y0 + 1.0;
        }
        let pw = (WIDTH - LEFT - RIGHT) as f64;
        let ph = (HEIGHT - TOP - BOTTOM) as f64;
        let map = |x: f64, y: f64| -> (i64, i64) {
            let px = LEFT as f64 + (x - x0) / (x1 - x0) * pw;
            let py = TOP as f64 + (1.0 - (ty(y) - y0) / (y1 - y0)) * ph;
            (px.round() as i64, py.round() as i64)
        };

        let (l, r, t, b) = (LEFT as i64, (WIDTH - RIGHT) as i64, TOP as i64, (HEIGHT - BOTTOM) as i64);
        cv.line((l, t), (l, b), 0, 0);
        cv.line((l, b), (r, b), 0, 0);
        for k in 0..=5 {
            let fx = x0 + (x1 - x0) * k as f64 / 5.0;
            let (px, _) = map(fx, if self.log_y { 10f64.powf(y0) } else { y0 });
            cv.line((px, b), (px, b + 4), 0, 0);
            cv.blit(&label_font.render_word(&format!("{fx:.2}")), (px as usize).saturating_sub(14), b as usize + 6);
            let fy = y0 + (y1 - y0) * k as f64 / 5.0;
            let py = (TOP as f64 + (1.0 - k as f64 / 5.0) * ph).round() as i64;
            cv.line((l - 4, py), (l, py), 0, 0);
            let shown = if self.log_y { 10f64.powf(fy) } else { fy };
            cv.blit(&label_font.render_word(&short_number(shown)), 2, (py as usize).saturating_sub(8));
        }
        cv.blit(&label_font.render_word(&self.title), LEFT, 6);
        cv.blit(&label_font.render_word(&self.x_label), LEFT + (pw as usize) / 2 - 30, HEIGHT - 18);
        cv.blit(&label_font.render_word(&self.y_label), 2, 6);

        for (si, s) in self.series.iter().enumerate() {
            let shade = [0u8, 90, 150, 60][si % 4];
            let dash = [0usize, 6, 2, 10][si % 4];
            let pts: Vec<(i64, i64)> = s
                .points
                .iter()
                .filter(|p| p.0.is_finite() && p.1.is_finite() && (!self.log_y || p.1 > 0.0))
                .map(|&(x, y)| map(x, y))
                .collect();
            for w in pts.windows(2) {
                cv.line(w[0], w[1], shade, dash);
            }
            for &p in &pts {
                cv.marker(p, shade, si);
            }
            let ly = TOP + 10 + si * 22;
            let lx = WIDTH - RIGHT + 10;
            cv.line((lx as i64, ly as i64 + 8), (lx as i64 + 20, ly as i64 + 8), shade, dash);
            cv.marker((lx as i64 + 10, ly as i64 + 8), shade, si);
            cv.blit(&label_font.render_word(&s.name), lx + 24, ly);
        }
        Ok(GlyphImage::from_bytes(WIDTH, HEIGHT, cv.px, self.title.clone()))
    }

    /// Writes PNG for a `.png` path and PGM otherwise.
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let img = self.render().map_err(std::io::Error::other)?;
        crate::render::save_image(&img, path)
    }
}

fn short_number(v: f64) -> String {
    if v.abs() >= 1e4 {
        format!("{v:.1e}")
    } else if v.abs() >= 10.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}
