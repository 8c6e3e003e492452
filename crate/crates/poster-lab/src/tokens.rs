//! Unified conditioning token sequence: image patch tokens first in row-major
//! grid order, then one token per character of the layout, then a style token.
//!
//! The sequence carries raw per-token inputs (patch conditioning channels,
//! character/line indices, style id) plus a 2D position and modality tag per
//! token; the model turns these into model-dim embeddings with its own
//! learned tables so that gradients reach the tables.

use crate::data::{font, Mask, PosterSample};
use crate::layout::{assign_char_positions, LayoutError};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenTag {
    Image,
    Text,
    Style,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenSeq {
    /// Per-image-token conditioning channels: [masked-image patch ‖ mask
    /// patch], `patch_size² * 4` values each. The noisy image channel varies
    /// per flow step, so the model patchifies and prepends it at forward time.
    pub cond_channels: Vec<Vec<f32>>,
    /// Alphabet index of each character token, in layout order.
    pub char_indices: Vec<usize>,
    /// Line index of each character token, for the per-line embedding offset.
    pub line_indices: Vec<usize>,
    pub style: usize,
    /// One (x, y) in [0,1] per token, image tokens first, style token last.
    pub positions: Vec<(f64, f64)>,
    pub tags: Vec<TokenTag>,
    /// Patch grid dims (G_w, G_h).
    pub image_grid: (usize, usize),
    pub patch_size: u32,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn n_image_tokens(&self) -> usize {
        self.image_grid.0 * self.image_grid.1
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TokenError {
    #[error("canvas {0}x{1} not divisible by patch size {2}")]
    CanvasNotDivisible(u32, u32, u32),
    #[error("mask shape does not match the sample canvas")]
    MaskShapeMismatch,
    #[error("character {0:?} is outside the alphabet")]
    UnknownCharacter(char),
    #[error(transparent)]
    Layout(#[from] LayoutError),
}

/// Patch-center position of grid cell (col i, row j).
pub fn patch_center(i: usize, j: usize, grid: (usize, usize)) -> (f64, f64) {
    ((i as f64 + 0.5) / grid.0 as f64, (j as f64 + 0.5) / grid.1 as f64)
}

/// Extract `patch_size²·3` pixel values of one grid cell, row-major.
pub fn patchify(data: &[f32], width: u32, patch: u32, i: usize, j: usize) -> Vec<f32> {
    let p = patch as usize;
    let w = width as usize;
    let mut out = Vec::with_capacity(p * p * 3);
    for r in 0..p {
        let row = ((j * p + r) * w + i * p) * 3;
        out.extend_from_slice(&data[row..row + p * 3]);
    }
    out
}

pub fn build_token_sequence(
    sample: &PosterSample,
    mask: &Mask,
    cpe_enabled: bool,
    patch_size: u32,
) -> Result<TokenSeq, TokenError> {
    let (w, h) = sample.layout.canvas;
    if patch_size == 0 || w % patch_size != 0 || h % patch_size != 0 {
        return Err(TokenError::CanvasNotDivisible(w, h, patch_size));
    }
    if (mask.width, mask.height) != (w, h) {
        return Err(TokenError::MaskShapeMismatch);
    }
    let grid = ((w / patch_size) as usize, (h / patch_size) as usize);
    let p = patch_size as usize;

    // Masked image: generation region zeroed out.
    let mut masked = sample.image.data.clone();
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) {
                let i = ((y * w + x) * 3) as usize;
                masked[i..i + 3].fill(0.0);
            }
        }
    }

    let mut cond_channels = Vec::with_capacity(grid.0 * grid.1);
    let mut positions = Vec::new();
    let mut tags = Vec::new();
    for j in 0..grid.1 {
        for i in 0..grid.0 {
            let mut ch = patchify(&masked, w, patch_size, i, j);
            for r in 0..p {
                for c in 0..p {
                    ch.push(mask.get((i * p + c) as u32, (j * p + r) as u32) as u8 as f32);
                }
            }
            cond_channels.push(ch);
            positions.push(patch_center(i, j, grid));
            tags.push(TokenTag::Image);
        }
    }

    let mut char_indices = Vec::new();
    let mut line_indices = Vec::new();
    for (li, line) in sample.layout.lines.iter().enumerate() {
        let char_pos = assign_char_positions(line)?;
        for (ci, c) in line.content.chars().enumerate() {
            let gi = font::glyph_index(c).ok_or(TokenError::UnknownCharacter(c))?;
            char_indices.push(gi);
            line_indices.push(li);
            positions.push(if cpe_enabled { (char_pos[ci].x, char_pos[ci].y) } else { (0.0, 0.0) });
            tags.push(TokenTag::Text);
        }
    }

    positions.push((0.0, 0.0));
    tags.push(TokenTag::Style);

    Ok(TokenSeq {
        cond_channels,
        char_indices,
        line_indices,
        style: sample.style_id.0 as usize,
        positions,
        tags,
        image_grid: grid,
        patch_size,
    })
}
