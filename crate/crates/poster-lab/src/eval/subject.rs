//! Subject-fidelity metrics: the extension detector, in-mask PSNR, cosine
//! similarity of activation summaries, and the style-following check.

use crate::data::{color_f32, max_channel_dist, DatasetConfig, Image, Mask, PosterSample};
use thiserror::Error;

/// Detector thresholds, kept in one place. Calibrated on constructed
/// positives and negatives, never on model outputs.
pub mod thresholds {
    /// Band width around the product, in pixels (Chebyshev dilation radius).
    pub const BAND_PX: u32 = 3;
    /// Max-channel distance under which a pixel "continues the product".
    pub const COLOR_DIST: f32 = 0.15;
    /// Fraction of the band that must continue the product to flag an image.
    pub const AREA_FRAC: f64 = 0.02;
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("product mask is empty")]
    EmptyMask,
    #[error("generation ran with product pasting enabled; extension is unmeasurable")]
    PastedGeneration,
    #[error("config hash mismatch between checkpoint ({ckpt:#x}) and testset ({testset:#x})")]
    ConfigMismatch { ckpt: u64, testset: u64 },
    #[error("testset is empty")]
    EmptyTestset,
}

/// Chebyshev dilation of a mask by `r` pixels.
pub fn dilate(mask: &Mask, r: u32) -> Mask {
    let (w, h) = (mask.width, mask.height);
    let mut out = Mask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) {
                let x0 = x.saturating_sub(r);
                let y0 = y.saturating_sub(r);
                for yy in y0..=(y + r).min(h - 1) {
                    for xx in x0..=(x + r).min(w - 1) {
                        out.set(xx, yy, true);
                    }
                }
            }
        }
    }
    out
}

/// Does this generated image continue the product beyond its mask?
///
/// Examines the band `dilate(mask, 3) \ mask`; a band pixel "continues the
/// product" when its max-channel distance to the nearest product-palette
/// color is below 0.15. The image is flagged when the product-colored band
/// pixels that form 8-connected runs touching the mask boundary cover more
/// than 2% of the band.
pub fn is_extended(generated: &Image, product_mask: &Mask, cfg: &DatasetConfig) -> bool {
    let (w, h) = (generated.width, generated.height);
    let band = {
        let d = dilate(product_mask, thresholds::BAND_PX);
        let mut b = Mask::new(w, h);
        for i in 0..d.data.len() {
            b.data[i] = d.data[i] & (1 - product_mask.data[i].min(1));
        }
        b
    };
    let band_area = band.area();
    if band_area == 0 {
        return false;
    }
    let palette: Vec<[f32; 3]> = cfg.product_palette.iter().map(|&c| color_f32(c)).collect();
    let mut productish = Mask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            if band.get(x, y) {
                let px = generated.get(x, y);
                if palette.iter().any(|&p| max_channel_dist(px, p) < thresholds::COLOR_DIST) {
                    productish.set(x, y, true);
                }
            }
        }
    }
    // Flood-fill 8-connected runs of product-colored band pixels; count the
    // area of runs that touch the mask boundary.
    let mut visited = Mask::new(w, h);
    let mut flagged_area = 0usize;
    for sy in 0..h {
        for sx in 0..w {
            if !productish.get(sx, sy) || visited.get(sx, sy) {
                continue;
            }
            let mut stack = vec![(sx, sy)];
            visited.set(sx, sy, true);
            let mut run = Vec::new();
            let mut touches = false;
            while let Some((x, y)) = stack.pop() {
                run.push((x, y));
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let nx = x as i64 + dx;
                        let ny = y as i64 + dy;
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let (nx, ny) = (nx as u32, ny as u32);
                        if product_mask.get(nx, ny) {
                            touches = true;
                        }
                        if productish.get(nx, ny) && !visited.get(nx, ny) {
                            visited.set(nx, ny, true);
                            stack.push((nx, ny));
                        }
                    }
                }
            }
            if touches {
                flagged_area += run.len();
            }
        }
    }
    flagged_area as f64 > thresholds::AREA_FRAC * band_area as f64
}

/// Fraction of images the extension detector flags.
pub fn extension_rate(images: &[Image], samples: &[PosterSample], cfg: &DatasetConfig) -> f64 {
    assert_eq!(images.len(), samples.len());
    if images.is_empty() {
        return 0.0;
    }
    let flagged = images
        .iter()
        .zip(samples)
        .filter(|(img, s)| is_extended(img, &s.product_mask, cfg))
        .count();
    flagged as f64 / images.len() as f64
}

/// PSNR in dB over the product-mask pixels; identical inputs report the
/// 99 dB sentinel.
pub fn preservation_psnr(generated: &Image, sample: &PosterSample) -> Result<f64, EvalError> {
    let mask = &sample.product_mask;
    let n = mask.area();
    if n == 0 {
        return Err(EvalError::EmptyMask);
    }
    let mut se = 0.0f64;
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.get(x, y) {
                let a = generated.get(x, y);
                let b = sample.image.get(x, y);
                for c in 0..3 {
                    let d = (a[c] - b[c]) as f64;
                    se += d * d;
                }
            }
        }
    }
    let mse = se / (3 * n) as f64;
    if mse == 0.0 {
        return Ok(99.0);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(99.0))
}

/// Cosine similarity between two activation summaries.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        dot += x as f64 * y as f64;
        na += x as f64 * x as f64;
        nb += y as f64 * y as f64;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Classify the background of one image against the pattern vocabulary by
/// nearest palette color over pixels outside the product mask and text boxes.
pub fn classify_style(image: &Image, sample: &PosterSample, cfg: &DatasetConfig) -> u32 {
    let (w, h) = (image.width, image.height);
    let mut votes = vec![0u64; cfg.n_styles()];
    for y in 0..h {
        for x in 0..w {
            if sample.product_mask.get(x, y) {
                continue;
            }
            let (nx, ny) = (x as f64 / w as f64, y as f64 / h as f64);
            if sample.layout.lines.iter().any(|l| l.box_.contains(nx, ny)) {
                continue;
            }
            let px = image.get(x, y);
            let mut best = (f32::INFINITY, 0usize);
            for (si, pal) in cfg.background_palettes.iter().enumerate() {
                for &c in pal {
                    let d = max_channel_dist(px, color_f32(c));
                    if d < best.0 {
                        best = (d, si);
                    }
                }
            }
            votes[best.1] += 1;
        }
    }
    votes
        .iter()
        .enumerate()
        .max_by_key(|&(i, &v)| (v, std::cmp::Reverse(i)))
        .map(|(i, _)| i as u32)
        .unwrap_or(0)
}

/// Fraction of images whose classified background style matches the request.
pub fn style_acc(images: &[Image], samples: &[PosterSample], cfg: &DatasetConfig) -> f64 {
    assert_eq!(images.len(), samples.len());
    if images.is_empty() {
        return 0.0;
    }
    let correct = images
        .iter()
        .zip(samples)
        .filter(|(img, s)| classify_style(img, s, cfg) == s.style_id.0)
        .count();
    correct as f64 / images.len() as f64
}
