//! Deterministic sample generation. All geometry is sampled with integer
//! draws from a seeded ChaCha stream, so a seed produces bit-identical
//! samples on every platform.

use super::font;
use super::{color_f32, DataError, DatasetConfig, Image, Mask, MaskRegime, PosterSample, StyleId};
use crate::layout::{validate_layout, BBox, Layout, Orientation, TextLine};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MAX_SAMPLE_ATTEMPTS: usize = 64;
const MAX_PLACEMENT_ATTEMPTS: usize = 200;

/// Fill the canvas with the striped two-shade pattern of one style.
pub fn background_image(cfg: &DatasetConfig, style: StyleId) -> Image {
    let (w, h) = cfg.canvas;
    let palette = &cfg.background_palettes[style.0 as usize];
    let mut img = Image::new(w, h);
    for y in 0..h {
        let color = color_f32(palette[((y / 6) % 2) as usize]);
        for x in 0..w {
            img.set(x, y, color);
        }
    }
    img
}

/// Generate one poster sample. Rejection-samples product and line geometry
/// until all invariants hold; errors after a bounded number of attempts.
pub fn gen_sample(cfg: &DatasetConfig, seed: u64) -> Result<PosterSample, DataError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_SAMPLE_ATTEMPTS {
        if let Some(sample) = try_gen(cfg, seed, &mut rng) {
            debug_assert!(validate_layout(&sample.layout).is_empty());
            return Ok(sample);
        }
    }
    Err(DataError::GenerationExhausted(MAX_SAMPLE_ATTEMPTS))
}

fn try_gen(cfg: &DatasetConfig, seed: u64, rng: &mut ChaCha8Rng) -> Option<PosterSample> {
    let (w, h) = cfg.canvas;
    let style = StyleId(rng.gen_range(0..cfg.n_styles() as u32));

    let product_mask = sample_product_mask(cfg, rng)?;
    let product_color = color_f32(cfg.product_palette[rng.gen_range(0..cfg.product_palette.len())]);
    let product_bbox = product_mask.bbox_px().expect("nonempty product");

    // Place text lines as disjoint pixel rectangles avoiding the product bbox.
    let n_lines = rng.gen_range(cfg.lines_per_sample.0..=cfg.lines_per_sample.1);
    let mut rects: Vec<(u32, u32, u32, u32)> = Vec::new();
    let mut lines: Vec<TextLine> = Vec::new();
    for _ in 0..n_lines {
        let placed = (0..MAX_PLACEMENT_ATTEMPTS).find_map(|_| {
            let n_chars = rng.gen_range(cfg.chars_per_line.0..=cfg.chars_per_line.1);
            let height = cfg.glyph_heights[rng.gen_range(0..cfg.glyph_heights.len())];
            let orientation = if rng.gen_range(0..100) < cfg.vertical_pct {
                Orientation::Vertical
            } else {
                Orientation::Horizontal
            };
            let (bw, bh) = block_size(n_chars, height, orientation);
            // One pixel of margin on every side.
            let (rw, rh) = (bw + 2, bh + 2);
            if rw >= w || rh >= h {
                return None;
            }
            let x0 = rng.gen_range(0..=(w - rw));
            let y0 = rng.gen_range(0..=(h - rh));
            let rect = (x0, y0, x0 + rw, y0 + rh);
            if rects_intersect(rect, product_bbox) {
                return None;
            }
            // Keep line boxes at least 6px apart so OCR line grouping can
            // never merge glyphs from different lines (in-line glyph spacing
            // is at most 2px).
            if rects.iter().any(|&r| rects_intersect(inflate(rect, 3), inflate(r, 3))) {
                return None;
            }
            let content: String = (0..n_chars)
                .map(|_| font::glyph_char(rng.gen_range(0..36)))
                .collect();
            Some((rect, content, height, orientation))
        });
        let (rect, content, _height, orientation) = placed?;
        rects.push(rect);
        lines.push(TextLine {
            content,
            box_: BBox {
                x_l: rect.0 as f64 / w as f64,
                y_t: rect.1 as f64 / h as f64,
                x_r: rect.2 as f64 / w as f64,
                y_b: rect.3 as f64 / h as f64,
            },
            orientation,
        });
    }

    let layout = Layout { lines: lines.iter().map(|l| l.clone()).collect(), canvas: (w, h) };

    let mut image = background_image(cfg, style);
    for y in 0..h {
        for x in 0..w {
            if product_mask.get(x, y) {
                image.set(x, y, product_color);
            }
        }
    }
    let text_color = color_f32(cfg.text_color);
    for line in layout.lines.iter() {
        let height = line_height(line, h);
        render_text(&mut image, line, height, text_color).ok()?;
    }

    let mut product_image = Image::filled(w, h, [1.0, 1.0, 1.0]);
    for y in 0..h {
        for x in 0..w {
            if product_mask.get(x, y) {
                product_image.set(x, y, product_color);
            }
        }
    }

    Some(PosterSample { image, product_mask, product_image, layout, style_id: style, seed })
}

/// Recover the glyph height a generated line was sized for. Generated boxes
/// are the rendered block plus a one-pixel margin on every side, so the box
/// pixel height determines the glyph height exactly.
pub fn line_height(line: &TextLine, canvas_h: u32) -> u32 {
    let by0 = (line.box_.y_t * canvas_h as f64).round() as u32;
    let by1 = (line.box_.y_b * canvas_h as f64).round() as u32;
    let bh = (by1.saturating_sub(by0)).saturating_sub(2);
    let n = line.content.chars().count() as u32;
    match line.orientation {
        Orientation::Horizontal => bh,
        Orientation::Vertical => {
            for h in (7..=bh).rev() {
                if n * h + n.saturating_sub(1) * font::glyph_spacing(h) == bh {
                    return h;
                }
            }
            bh
        }
    }
}

fn block_size(n_chars: u32, height: u32, orientation: Orientation) -> (u32, u32) {
    match orientation {
        Orientation::Horizontal => font::line_block_size(n_chars, height),
        Orientation::Vertical => {
            let sp = font::glyph_spacing(height);
            (font::scaled_width(height), n_chars * height + n_chars.saturating_sub(1) * sp)
        }
    }
}

fn rects_intersect(a: (u32, u32, u32, u32), b: (u32, u32, u32, u32)) -> bool {
    a.0 < b.2 && b.0 < a.2 && a.1 < b.3 && b.1 < a.3
}

fn inflate(r: (u32, u32, u32, u32), by: u32) -> (u32, u32, u32, u32) {
    (r.0.saturating_sub(by), r.1.saturating_sub(by), r.2 + by, r.3 + by)
}

/// Stamp a text line onto the canvas. Glyphs are nearest-neighbor scaled
/// bitmaps packed with one source pixel of spacing; the block is centered in
/// the line's box; inked pixels are set to exactly `color` (no blending).
pub fn render_text(
    canvas: &mut Image,
    line: &TextLine,
    glyph_height: u32,
    color: [f32; 3],
) -> Result<(), DataError> {
    let (w, h) = (canvas.width, canvas.height);
    let bx0 = (line.box_.x_l * w as f64).round() as u32;
    let by0 = (line.box_.y_t * h as f64).round() as u32;
    let bx1 = (line.box_.x_r * w as f64).round() as u32;
    let by1 = (line.box_.y_b * h as f64).round() as u32;
    let n = line.content.chars().count() as u32;
    if n == 0 {
        return Err(DataError::LineDoesNotFit);
    }
    let (bw, bh) = block_size(n, glyph_height, line.orientation);
    if bx1 <= bx0 || by1 <= by0 || bw > bx1 - bx0 || bh > by1 - by0 {
        return Err(DataError::LineDoesNotFit);
    }
    let ox = bx0 + (bx1 - bx0 - bw) / 2;
    let oy = by0 + (by1 - by0 - bh) / 2;
    let sp = font::glyph_spacing(glyph_height);
    let gw = font::scaled_width(glyph_height);
    let mut cursor = 0u32;
    for c in line.content.chars() {
        let gi = font::glyph_index(c).ok_or(DataError::UnknownCharacter(c))?;
        let (gwid, ghei, bits) = font::scaled_glyph(gi, glyph_height);
        let (gx, gy) = match line.orientation {
            Orientation::Horizontal => (ox + cursor, oy),
            Orientation::Vertical => (ox, oy + cursor),
        };
        for r in 0..ghei {
            for cc in 0..gwid {
                if bits[(r * gwid + cc) as usize] {
                    canvas.set(gx + cc, gy + r, color);
                }
            }
        }
        cursor += match line.orientation {
            Orientation::Horizontal => gw + sp,
            Orientation::Vertical => glyph_height + sp,
        };
    }
    Ok(())
}

fn sample_product_mask(cfg: &DatasetConfig, rng: &mut ChaCha8Rng) -> Option<Mask> {
    let (w, h) = cfg.canvas;
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let mut mask = Mask::new(w, h);
        let shape = rng.gen_range(0..3u32);
        match shape {
            0 => {
                // Ellipse.
                let rx = rng.gen_range(w / 8..=w / 3);
                let ry = rng.gen_range(h / 8..=h / 3);
                let cx = rng.gen_range(rx + 1..w - rx - 1);
                let cy = rng.gen_range(ry + 1..h - ry - 1);
                for y in 0..h {
                    for x in 0..w {
                        let dx = x as i64 - cx as i64;
                        let dy = y as i64 - cy as i64;
                        // dx^2/rx^2 + dy^2/ry^2 <= 1, in integers.
                        if dx * dx * (ry as i64 * ry as i64) + dy * dy * (rx as i64 * rx as i64)
                            <= (rx as i64 * rx as i64) * (ry as i64 * ry as i64)
                        {
                            mask.set(x, y, true);
                        }
                    }
                }
            }
            1 => {
                // Rectangle.
                let rw = rng.gen_range(w / 5..=w / 2);
                let rh = rng.gen_range(h / 5..=h / 2);
                let x0 = rng.gen_range(1..w - rw);
                let y0 = rng.gen_range(1..h - rh);
                for y in y0..y0 + rh {
                    for x in x0..x0 + rw {
                        mask.set(x, y, true);
                    }
                }
            }
            _ => {
                // Upright isosceles triangle, filled by scanline.
                let base = rng.gen_range(w / 4..=(2 * w) / 3);
                let th = rng.gen_range(h / 4..=(2 * h) / 3);
                let cx = rng.gen_range(base / 2 + 1..w - base / 2 - 1);
                let y0 = rng.gen_range(1..h - th);
                for dy in 0..th {
                    let half = (base as u64 * dy as u64 / (2 * th as u64)) as u32;
                    for x in cx.saturating_sub(half)..=(cx + half).min(w - 1) {
                        mask.set(x, y0 + dy, true);
                    }
                }
            }
        }
        let frac = mask.area() as f64 / (w * h) as f64;
        if frac >= cfg.product_area.0 && frac <= cfg.product_area.1 {
            return Some(mask);
        }
    }
    None
}

/// Build the training mask for a sample under a masking regime. Set pixels
/// mark the region the model must synthesize.
pub fn make_mask(sample: &PosterSample, regime: MaskRegime, seed: u64) -> Mask {
    match regime {
        MaskRegime::Poster => sample.product_mask.complement(),
        MaskRegime::RandomPatch => {
            let (w, h) = (sample.image.width, sample.image.height);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
            loop {
                let mut mask = Mask::new(w, h);
                let n = rng.gen_range(1..=4u32);
                for _ in 0..n {
                    let rw = rng.gen_range(4..=w / 2);
                    let rh = rng.gen_range(4..=h / 2);
                    let x0 = rng.gen_range(0..=w - rw);
                    let y0 = rng.gen_range(0..=h - rh);
                    for y in y0..y0 + rh {
                        for x in x0..x0 + rw {
                            mask.set(x, y, true);
                        }
                    }
                }
                let frac = mask.area() as f64 / (w * h) as f64;
                if (0.05..=0.20).contains(&frac) {
                    return mask;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gen_is_deterministic() {
        let cfg = DatasetConfig::default();
        let a = gen_sample(&cfg, 7).unwrap();
        let b = gen_sample(&cfg, 7).unwrap();
        assert_eq!(a, b);
        let c = gen_sample(&cfg, 8).unwrap();
        assert_ne!(a.image.data, c.image.data);
    }

    #[test]
    fn samples_satisfy_invariants() {
        let cfg = DatasetConfig::default();
        let (w, h) = cfg.canvas;
        for seed in 0..50 {
            let s = gen_sample(&cfg, seed).unwrap();
            assert!(validate_layout(&s.layout).is_empty(), "seed {seed}");
            let frac = s.product_mask.area() as f64 / (w * h) as f64;
            assert!((0.05..=0.40).contains(&frac), "seed {seed}: area {frac}");
            // Image equals product image on the product mask.
            for y in 0..h {
                for x in 0..w {
                    if s.product_mask.get(x, y) {
                        assert_eq!(s.image.get(x, y), s.product_image.get(x, y));
                    }
                }
            }
            // Text boxes avoid the product bbox.
            let (bx0, by0, bx1, by1) = s.product_mask.bbox_px().unwrap();
            for line in &s.layout.lines {
                let lx0 = (line.box_.x_l * w as f64).round() as u32;
                let ly0 = (line.box_.y_t * h as f64).round() as u32;
                let lx1 = (line.box_.x_r * w as f64).round() as u32;
                let ly1 = (line.box_.y_b * h as f64).round() as u32;
                assert!(!rects_intersect((lx0, ly0, lx1, ly1), (bx0, by0, bx1, by1)));
            }
        }
    }

    #[test]
    fn render_then_erase_restores_canvas() {
        let cfg = DatasetConfig::default();
        let mut canvas = background_image(&cfg, StyleId(0));
        let original = canvas.clone();
        let line = TextLine {
            content: "AB7".to_string(),
            box_: BBox { x_l: 0.1, y_t: 0.1, x_r: 0.9, y_b: 0.5 },
            orientation: Orientation::Horizontal,
        };
        render_text(&mut canvas, &line, 12, [0.0, 0.0, 0.0]).unwrap();
        assert_ne!(canvas.data, original.data);
        // Repaint every changed pixel with the original value.
        for i in 0..canvas.data.len() {
            if canvas.data[i] != original.data[i] {
                canvas.data[i] = original.data[i];
            }
        }
        assert_eq!(canvas.data, original.data);
    }

    #[test]
    fn render_rejects_overfull_line() {
        let cfg = DatasetConfig::default();
        let mut canvas = background_image(&cfg, StyleId(0));
        let line = TextLine {
            content: "AAAAAAAA".to_string(),
            box_: BBox { x_l: 0.1, y_t: 0.1, x_r: 0.3, y_b: 0.5 },
            orientation: Orientation::Horizontal,
        };
        assert!(matches!(
            render_text(&mut canvas, &line, 16, [0.0; 3]),
            Err(DataError::LineDoesNotFit)
        ));
    }

    #[test]
    fn render_rejects_unknown_character() {
        let cfg = DatasetConfig::default();
        let mut canvas = background_image(&cfg, StyleId(0));
        let line = TextLine {
            content: "a".to_string(),
            box_: BBox { x_l: 0.0, y_t: 0.0, x_r: 1.0, y_b: 1.0 },
            orientation: Orientation::Horizontal,
        };
        assert!(matches!(
            render_text(&mut canvas, &line, 8, [0.0; 3]),
            Err(DataError::UnknownCharacter('a'))
        ));
    }

    #[test]
    fn poster_mask_is_product_complement() {
        let cfg = DatasetConfig::default();
        let s = gen_sample(&cfg, 3).unwrap();
        let m = make_mask(&s, MaskRegime::Poster, 0);
        for (a, b) in m.data.iter().zip(s.product_mask.data.iter()) {
            assert_eq!(*a as u32 + *b as u32, 1);
        }
    }

    #[test]
    fn random_patch_masks_are_seeded_and_bounded() {
        let cfg = DatasetConfig::default();
        let s = gen_sample(&cfg, 3).unwrap();
        let (w, h) = cfg.canvas;
        for seed in 0..20 {
            let m = make_mask(&s, MaskRegime::RandomPatch, seed);
            let frac = m.area() as f64 / (w * h) as f64;
            assert!((0.05..=0.20).contains(&frac), "seed {seed}: {frac}");
            assert_eq!(m, make_mask(&s, MaskRegime::RandomPatch, seed));
        }
    }

    #[test]
    fn rendered_block_extents_match_font_footprint() {
        // 3 chars at height 8 occupy 3 glyph widths plus 2 spacings,
        // centered in the box.
        let cfg = DatasetConfig::default();
        let mut canvas = Image::filled(48, 48, [1.0; 3]);
        let line = TextLine {
            content: "HHH".to_string(),
            box_: BBox {
                x_l: 2.0 / 48.0,
                y_t: 2.0 / 48.0,
                x_r: 26.0 / 48.0,
                y_b: 12.0 / 48.0,
            },
            orientation: Orientation::Horizontal,
        };
        render_text(&mut canvas, &line, 8, [0.0; 3]).unwrap();
        let _ = &cfg;
        let mut xs = (u32::MAX, 0u32);
        let mut ys = (u32::MAX, 0u32);
        for y in 0..48 {
            for x in 0..48 {
                if canvas.get(x, y) == [0.0, 0.0, 0.0] {
                    xs = (xs.0.min(x), xs.1.max(x + 1));
                    ys = (ys.0.min(y), ys.1.max(y + 1));
                }
            }
        }
        let (bw, bh) = font::line_block_size(3, 8);
        assert_eq!(xs.1 - xs.0, bw);
        assert_eq!(ys.1 - ys.0, bh);
    }
}
