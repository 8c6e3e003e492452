//! Synthetic poster dataset: deterministic sample generation, bitmap-font
//! text rendering, masking regimes, and the on-disk dataset format.

pub mod font;
mod format;
mod gen;

pub use format::{load_dataset, save_dataset};
pub use gen::{background_image, gen_sample, line_height, make_mask, render_text};

use crate::layout::Layout;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// H x W x 3 image, row-major, channel-interleaved, values in [0,1].
///
/// Generator output is always quantized to u8/255 levels so that the 8-bit
/// dataset format round-trips losslessly.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: u32, height: u32) -> Self {
        Image { width, height, data: vec![0.0; (width * height * 3) as usize] }
    }

    pub fn filled(width: u32, height: u32, color: [f32; 3]) -> Self {
        let mut img = Image::new(width, height);
        for p in 0..(width * height) as usize {
            img.data[p * 3..p * 3 + 3].copy_from_slice(&color);
        }
        img
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [f32; 3] {
        let i = ((y * self.width + x) * 3) as usize;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, color: [f32; 3]) {
        let i = ((y * self.width + x) * 3) as usize;
        self.data[i..i + 3].copy_from_slice(&color);
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    pub fn from_u8(width: u32, height: u32, bytes: &[u8]) -> Self {
        Image {
            width,
            height,
            data: bytes.iter().map(|&b| b as f32 / 255.0).collect(),
        }
    }

    /// Write as a lossless 8-bit PNG.
    pub fn save_png(&self, path: &std::path::Path) -> Result<(), DataError> {
        let buf = self.to_u8();
        image::save_buffer(path, &buf, self.width, self.height, image::ColorType::Rgb8)
            .map_err(|e| DataError::Io(std::io::Error::other(e)))
    }
}

/// H x W binary mask, 1 = set.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Mask { width, height, data: vec![0; (width * height) as usize] }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[(y * self.width + x) as usize] != 0
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.data[(y * self.width + x) as usize] = v as u8;
    }

    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn complement(&self) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| 1 - v.min(1)).collect(),
        }
    }

    /// Bounding box in pixel coordinates (x0, y0, x1, y1), end-exclusive.
    pub fn bbox_px(&self) -> Option<(u32, u32, u32, u32)> {
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
        let mut any = false;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    any = true;
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x + 1);
                    y1 = y1.max(y + 1);
                }
            }
        }
        any.then_some((x0, y0, x1, y1))
    }
}

/// Background-pattern class; stands in for the scene description.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProductShape {
    Ellipse,
    Rectangle,
    Triangle,
}

/// One training/evaluation sample: poster image, product mask, product on
/// white, text layout, and background style.
#[derive(Debug, Clone, PartialEq)]
pub struct PosterSample {
    pub image: Image,
    pub product_mask: Mask,
    pub product_image: Image,
    pub layout: Layout,
    pub style_id: StyleId,
    pub seed: u64,
}

/// Which pixels a training step asks the model to synthesize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskRegime {
    /// Everything except the product: the poster-generation setting.
    Poster,
    /// 1-4 random rectangles covering 5-20% of the canvas, placed without
    /// reference to the product: the generic-inpainting pretraining setting.
    RandomPatch,
}

/// Colors are stored as u8 RGB so palette membership survives the 8-bit
/// dataset format exactly.
pub type Color = [u8; 3];

pub fn color_f32(c: Color) -> [f32; 3] {
    [c[0] as f32 / 255.0, c[1] as f32 / 255.0, c[2] as f32 / 255.0]
}

/// Max-channel distance between two RGB values in [0,1] units.
pub fn max_channel_dist(a: [f32; 3], b: [f32; 3]) -> f32 {
    (a[0] - b[0]).abs().max((a[1] - b[1]).abs()).max((a[2] - b[2]).abs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub canvas: (u32, u32),
    /// Two shades per background style, striped in horizontal bands.
    pub background_palettes: Vec<[Color; 2]>,
    pub product_palette: Vec<Color>,
    pub text_color: Color,
    pub glyph_heights: Vec<u32>,
    pub lines_per_sample: (u32, u32),
    pub chars_per_line: (u32, u32),
    /// Product area bounds as a fraction of the canvas.
    pub product_area: (f64, f64),
    /// Probability (percent) that a line is vertical.
    pub vertical_pct: u32,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            canvas: (48, 48),
            background_palettes: vec![
                [[235, 235, 205], [224, 224, 190]],
                [[205, 235, 235], [190, 224, 224]],
                [[235, 210, 235], [224, 195, 224]],
                [[215, 235, 205], [200, 224, 190]],
            ],
            product_palette: vec![
                [230, 20, 20],
                [20, 200, 20],
                [30, 30, 230],
                [220, 20, 220],
            ],
            text_color: [15, 15, 20],
            glyph_heights: vec![8, 12, 16],
            lines_per_sample: (1, 3),
            chars_per_line: (1, 8),
            product_area: (0.05, 0.40),
            vertical_pct: 15,
        }
    }
}

impl DatasetConfig {
    pub fn n_styles(&self) -> usize {
        self.background_palettes.len()
    }

    /// FNV-1a hash of the canonical JSON form; embedded in dataset files,
    /// checkpoints, and reports so mismatched artifacts are rejected.
    pub fn hash(&self) -> u64 {
        let json = serde_json::to_string(self).expect("config serializes");
        fnv1a(json.as_bytes())
    }

    /// Palettes must be pairwise separated by >= 0.3 max-channel distance so
    /// the extension detector and OCR binarization are unambiguous.
    pub fn validate(&self) -> Result<(), DataError> {
        if self.background_palettes.is_empty() || self.product_palette.is_empty() {
            return Err(DataError::InvalidConfig("empty palette".into()));
        }
        if self.canvas.0 == 0 || self.canvas.1 == 0 {
            return Err(DataError::InvalidConfig("zero canvas".into()));
        }
        if self.glyph_heights.is_empty() || self.glyph_heights.iter().any(|&h| h < 7) {
            return Err(DataError::InvalidConfig("glyph heights must be >= 7".into()));
        }
        let bg: Vec<[f32; 3]> = self
            .background_palettes
            .iter()
            .flatten()
            .map(|&c| color_f32(c))
            .collect();
        let prod: Vec<[f32; 3]> = self.product_palette.iter().map(|&c| color_f32(c)).collect();
        let text = vec![color_f32(self.text_color)];
        let groups = [("background", &bg), ("product", &prod), ("text", &text)];
        for (i, (na, ga)) in groups.iter().enumerate() {
            for (nb, gb) in groups.iter().skip(i + 1) {
                for a in ga.iter() {
                    for b in gb.iter() {
                        if max_channel_dist(*a, *b) < 0.3 {
                            return Err(DataError::InvalidConfig(format!(
                                "{na} and {nb} palettes closer than 0.3"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid dataset config: {0}")]
    InvalidConfig(String),
    #[error("sample generation failed after {0} attempts")]
    GenerationExhausted(usize),
    #[error("text line does not fit its box at any allowed glyph height")]
    LineDoesNotFit,
    #[error("character {0:?} is outside the alphabet")]
    UnknownCharacter(char),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad dataset file: {0}")]
    Format(String),
    #[error("dataset file version {found} unsupported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checksum mismatch in sample {0}")]
    Checksum(usize),
}
