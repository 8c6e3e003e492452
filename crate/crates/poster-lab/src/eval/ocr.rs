//! Template-matching OCR oracle.
//!
//! Slides every glyph template at every allowed height over the binarized
//! image, keeps normalized cross-correlation peaks >= 0.8, suppresses
//! overlapping hits, and groups survivors into text lines.

use super::OcrLine;
use crate::data::{color_f32, font, max_channel_dist, DatasetConfig, Image};
use crate::layout::BBox;

pub const MATCH_THRESHOLD: f64 = 0.8;
/// A pixel counts as inked if it is closer than this to the text color.
pub const BINARIZE_DIST: f32 = 0.45;
/// Hits overlapping a stronger hit by more than this fraction of the smaller
/// rect are suppressed.
const NMS_OVERLAP: f64 = 0.3;
/// Max pixel gap between consecutive glyphs of one line; the generator keeps
/// distinct lines at least 6px apart.
const GROUP_GAP: u32 = 4;

#[derive(Debug, Clone)]
struct Hit {
    x: u32,
    y: u32,
    w: u32,
    h: u32,
    glyph: usize,
    height: u32,
    score: f64,
}

/// Detect text lines in an image rendered (or generated) on this dataset
/// config's canvas. Returns lines in reading order (top-to-bottom, then
/// left-to-right).
pub fn ocr(image: &Image, cfg: &DatasetConfig) -> Vec<OcrLine> {
    let (w, h) = (image.width, image.height);
    let text = color_f32(cfg.text_color);
    let binary: Vec<bool> = (0..w * h)
        .map(|i| {
            let px = [
                image.data[(i * 3) as usize],
                image.data[(i * 3 + 1) as usize],
                image.data[(i * 3 + 2) as usize],
            ];
            max_channel_dist(px, text) < BINARIZE_DIST
        })
        .collect();

    let mut hits: Vec<Hit> = Vec::new();
    for &height in &cfg.glyph_heights {
        for glyph in 0..36 {
            // Template carries a one-pixel empty border. Rendered glyphs
            // always have at least one background pixel on every side, so
            // clean matches stay exact, while partial matches inside a
            // larger glyph pick up inked border pixels and lose score.
            let (tw, th, bits) = bordered_template(glyph, height);
            if tw > w || th > h {
                continue;
            }
            let m = (tw * th) as f64;
            let sum_t: f64 = bits.iter().filter(|&&b| b).count() as f64;
            let var_t = m * sum_t - sum_t * sum_t;
            if var_t <= 0.0 {
                continue;
            }
            for y0 in 0..=(h - th) {
                for x0 in 0..=(w - tw) {
                    let mut sum_w = 0.0f64;
                    let mut sum_wt = 0.0f64;
                    for r in 0..th {
                        let row = ((y0 + r) * w + x0) as usize;
                        let trow = (r * tw) as usize;
                        for c in 0..tw as usize {
                            if binary[row + c] {
                                sum_w += 1.0;
                                if bits[trow + c] {
                                    sum_wt += 1.0;
                                }
                            }
                        }
                    }
                    let var_w = m * sum_w - sum_w * sum_w;
                    if var_w <= 0.0 {
                        continue;
                    }
                    let score = (m * sum_wt - sum_w * sum_t) / (var_w * var_t).sqrt();
                    if score >= MATCH_THRESHOLD {
                        // Report the inner (borderless) glyph rect.
                        hits.push(Hit {
                            x: x0 + 1,
                            y: y0 + 1,
                            w: tw - 2,
                            h: th - 2,
                            glyph,
                            height,
                            score,
                        });
                    }
                }
            }
        }
    }

    let kept = non_max_suppress(hits);
    group_lines(kept, w, h)
}

fn bordered_template(glyph: usize, height: u32) -> (u32, u32, Vec<bool>) {
    let (gw, gh, bits) = font::scaled_glyph(glyph, height);
    let (tw, th) = (gw + 2, gh + 2);
    let mut out = vec![false; (tw * th) as usize];
    for r in 0..gh {
        for c in 0..gw {
            out[((r + 1) * tw + c + 1) as usize] = bits[(r * gw + c) as usize];
        }
    }
    (tw, th, out)
}

fn non_max_suppress(mut hits: Vec<Hit>) -> Vec<Hit> {
    hits.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then((a.y, a.x, a.glyph, a.height).cmp(&(b.y, b.x, b.glyph, b.height)))
    });
    let mut kept: Vec<Hit> = Vec::new();
    'outer: for hit in hits {
        for k in &kept {
            let ix = (hit.x + hit.w).min(k.x + k.w).saturating_sub(hit.x.max(k.x));
            let iy = (hit.y + hit.h).min(k.y + k.h).saturating_sub(hit.y.max(k.y));
            let inter = (ix * iy) as f64;
            let smaller = (hit.w * hit.h).min(k.w * k.h) as f64;
            if inter > NMS_OVERLAP * smaller {
                continue 'outer;
            }
        }
        kept.push(hit);
    }
    kept
}

fn group_lines(hits: Vec<Hit>, w: u32, h: u32) -> Vec<OcrLine> {
    let n = hits.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        if parent[i] != i {
            let root = find(parent, parent[i]);
            parent[i] = root;
        }
        parent[i]
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (&hits[i], &hits[j]);
            if a.height != b.height {
                continue;
            }
            let yc_a = 2 * a.y + a.h;
            let yc_b = 2 * b.y + b.h;
            let xc_a = 2 * a.x + a.w;
            let xc_b = 2 * b.x + b.w;
            // Horizontal neighbors: centers on one midline, small x gap.
            let same_row = yc_a.abs_diff(yc_b) < a.h; // < h/2 in center units
            let x_gap = gap_1d(a.x, a.x + a.w, b.x, b.x + b.w);
            // Vertical neighbors: centers on one column, small y gap.
            let same_col = xc_a.abs_diff(xc_b) < a.w;
            let y_gap = gap_1d(a.y, a.y + a.h, b.y, b.y + b.h);
            if (same_row && x_gap <= GROUP_GAP) || (same_col && y_gap <= GROUP_GAP) {
                let (ra, rb) = (find(&mut parent, i), find(&mut parent, j));
                parent[ra] = rb;
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..n {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }

    let mut lines: Vec<OcrLine> = Vec::new();
    for (_, mut idx) in groups {
        // Vertical line: taller union than wide.
        let x0 = idx.iter().map(|&i| hits[i].x).min().unwrap();
        let y0 = idx.iter().map(|&i| hits[i].y).min().unwrap();
        let x1 = idx.iter().map(|&i| hits[i].x + hits[i].w).max().unwrap();
        let y1 = idx.iter().map(|&i| hits[i].y + hits[i].h).max().unwrap();
        let vertical = (y1 - y0) > (x1 - x0) && idx.len() > 1;
        if vertical {
            idx.sort_by_key(|&i| (hits[i].y, hits[i].x));
        } else {
            idx.sort_by_key(|&i| (hits[i].x, hits[i].y));
        }
        let text: String = idx.iter().map(|&i| font::glyph_char(hits[i].glyph)).collect();
        let score = idx.iter().map(|&i| hits[i].score).sum::<f64>() / idx.len() as f64;
        lines.push(OcrLine {
            text,
            box_: BBox {
                x_l: x0 as f64 / w as f64,
                y_t: y0 as f64 / h as f64,
                x_r: x1 as f64 / w as f64,
                y_b: y1 as f64 / h as f64,
            },
            score,
        });
    }
    lines.sort_by(|a, b| {
        (a.box_.y_t, a.box_.x_l)
            .partial_cmp(&(b.box_.y_t, b.box_.x_l))
            .unwrap()
    });
    lines
}

fn gap_1d(a0: u32, a1: u32, b0: u32, b1: u32) -> u32 {
    if a1 >= b0 && b1 >= a0 {
        0
    } else if a1 < b0 {
        b0 - a1
    } else {
        a0 - b1
    }
}
