//! Text-line geometry: bounding boxes, per-character positions, and the
//! coarse 3x3 region labels used when describing a layout.
//!
//! All coordinates are normalized to `[0, 1]` relative to the canvas;
//! conversion to pixels happens only at render time.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Axis-aligned box in normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_l: f64,
    pub y_t: f64,
    pub x_r: f64,
    pub y_b: f64,
}

impl BBox {
    pub fn new(x_l: f64, y_t: f64, x_r: f64, y_b: f64) -> Result<Self, LayoutError> {
        let b = BBox { x_l, y_t, x_r, y_b };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), LayoutError> {
        let vals = [self.x_l, self.y_t, self.x_r, self.y_b];
        if vals.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(LayoutError::OutOfRange(*self));
        }
        if self.x_l >= self.x_r || self.y_t >= self.y_b {
            return Err(LayoutError::Degenerate(*self));
        }
        Ok(())
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x_l + self.x_r) / 2.0, (self.y_t + self.y_b) / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.x_r - self.x_l
    }

    pub fn height(&self) -> f64 {
        self.y_b - self.y_t
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_l && x <= self.x_r && y >= self.y_t && y <= self.y_b
    }

    pub fn intersects(&self, other: &BBox) -> bool {
        self.x_l < other.x_r && other.x_l < self.x_r && self.y_t < other.y_b && other.y_t < self.y_b
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let ix = (self.x_r.min(other.x_r) - self.x_l.max(other.x_l)).max(0.0);
        let iy = (self.y_b.min(other.y_b) - self.y_t.max(other.y_t)).max(0.0);
        let inter = ix * iy;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Orientation {
    Horizontal,
    Vertical,
}

/// One line of text plus its target box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextLine {
    pub content: String,
    pub box_: BBox,
    pub orientation: Orientation,
}

/// Ordered set of text lines on one canvas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub lines: Vec<TextLine>,
    pub canvas: (u32, u32),
}

/// Normalized coordinate assigned to a single character token.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharPosition {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LayoutError {
    #[error("box coordinates out of [0,1]: {0:?}")]
    OutOfRange(BBox),
    #[error("degenerate box (zero or negative extent): {0:?}")]
    Degenerate(BBox),
    #[error("text line has empty content")]
    EmptyContent,
}

/// Divide the line's box into `n` equal sub-regions along the writing axis
/// and return the center of the i-th sub-region for the i-th character.
///
/// Horizontal lines subdivide the x extent and sit on the box midline;
/// vertical lines subdivide the y extent.
pub fn assign_char_positions(line: &TextLine) -> Result<Vec<CharPosition>, LayoutError> {
    line.box_.validate()?;
    let n = line.content.chars().count();
    if n == 0 {
        return Err(LayoutError::EmptyContent);
    }
    let b = &line.box_;
    let positions = (1..=n)
        .map(|i| {
            let frac = (i as f64 - 0.5) / n as f64;
            match line.orientation {
                Orientation::Horizontal => CharPosition {
                    x: b.x_l + frac * (b.x_r - b.x_l),
                    y: (b.y_t + b.y_b) / 2.0,
                },
                Orientation::Vertical => CharPosition {
                    x: (b.x_l + b.x_r) / 2.0,
                    y: b.y_t + frac * (b.y_b - b.y_t),
                },
            }
        })
        .collect();
    Ok(positions)
}

/// Label from a 3x3 grid over the canvas, e.g. "top-left" or "middle-center".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionLabel {
    /// 0..3, left to right.
    pub col: usize,
    /// 0..3, top to bottom.
    pub row: usize,
}

impl RegionLabel {
    pub fn name(&self) -> &'static str {
        const NAMES: [[&str; 3]; 3] = [
            ["top-left", "top-center", "top-right"],
            ["middle-left", "middle-center", "middle-right"],
            ["bottom-left", "bottom-center", "bottom-right"],
        ];
        NAMES[self.row][self.col]
    }
}

impl std::fmt::Display for RegionLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Coarse spatial descriptor of a box: which cell of a 3x3 grid its center
/// falls in. Centers exactly on a grid boundary resolve toward the lower
/// index (left / top).
pub fn coarse_region_descriptor(box_: &BBox) -> Result<RegionLabel, LayoutError> {
    box_.validate()?;
    let (cx, cy) = box_.center();
    Ok(RegionLabel {
        col: grid_index(cx),
        row: grid_index(cy),
    })
}

fn grid_index(v: f64) -> usize {
    // Boundary ties (v == 1/3 or 2/3) go to the lower cell.
    if v <= 1.0 / 3.0 {
        0
    } else if v <= 2.0 / 3.0 {
        1
    } else {
        2
    }
}

/// A single broken layout invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum LayoutViolation {
    InvalidBox { line: usize, error: LayoutError },
    EmptyContent { line: usize },
    Overlap { lines: (usize, usize) },
}

/// Check every layout invariant; the returned list is empty iff the layout
/// is valid. Violations carry the offending line indices.
pub fn validate_layout(layout: &Layout) -> Vec<LayoutViolation> {
    let mut violations = Vec::new();
    for (i, line) in layout.lines.iter().enumerate() {
        if let Err(error) = line.box_.validate() {
            violations.push(LayoutViolation::InvalidBox { line: i, error });
        }
        if line.content.is_empty() {
            violations.push(LayoutViolation::EmptyContent { line: i });
        }
    }
    for i in 0..layout.lines.len() {
        for j in (i + 1)..layout.lines.len() {
            let (a, b) = (&layout.lines[i].box_, &layout.lines[j].box_);
            if a.validate().is_ok() && b.validate().is_ok() && a.iou(b) > 0.0 {
                violations.push(LayoutViolation::Overlap { lines: (i, j) });
            }
        }
    }
    violations
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hline(x_l: f64, y_t: f64, x_r: f64, y_b: f64, content: &str) -> TextLine {
        TextLine {
            content: content.to_string(),
            box_: BBox { x_l, y_t, x_r, y_b },
            orientation: Orientation::Horizontal,
        }
    }

    #[test]
    fn first_char_of_horizontal_line() {
        let line = hline(0.0, 0.10, 1.00, 0.20, "ABCDE");
        let pos = assign_char_positions(&line).unwrap();
        assert_eq!(pos.len(), 5);
        assert!((pos[0].x - 0.10).abs() < 1e-12);
        assert!((pos[0].y - 0.15).abs() < 1e-12);
    }

    #[test]
    fn single_char_sits_at_box_center() {
        let line = hline(0.2, 0.4, 0.6, 0.5, "X");
        let pos = assign_char_positions(&line).unwrap();
        assert!((pos[0].x - 0.40).abs() < 1e-12);
        assert!((pos[0].y - 0.45).abs() < 1e-12);
    }

    #[test]
    fn vertical_line_subdivides_y() {
        let line = TextLine {
            content: "WXYZ".to_string(),
            box_: BBox { x_l: 0.4, y_t: 0.0, x_r: 0.5, y_b: 1.0 },
            orientation: Orientation::Vertical,
        };
        let pos = assign_char_positions(&line).unwrap();
        assert!((pos[3].x - 0.45).abs() < 1e-12);
        assert!((pos[3].y - 0.875).abs() < 1e-12);
    }

    #[test]
    fn empty_content_is_rejected() {
        let line = hline(0.1, 0.1, 0.5, 0.2, "");
        assert_eq!(assign_char_positions(&line), Err(LayoutError::EmptyContent));
    }

    #[test]
    fn region_labels() {
        let b = BBox::new(0.35, 0.02, 0.65, 0.12).unwrap();
        assert_eq!(coarse_region_descriptor(&b).unwrap().name(), "top-center");
        let b = BBox::new(0.0, 0.0, 0.02, 0.02).unwrap();
        assert_eq!(coarse_region_descriptor(&b).unwrap().name(), "top-left");
        // Center exactly at (1/3, 0.5): the x tie resolves left.
        let third = 1.0 / 3.0;
        let b = BBox::new(third - 0.1, 0.4, third + 0.1, 0.6).unwrap();
        assert_eq!(coarse_region_descriptor(&b).unwrap().name(), "middle-left");
    }

    #[test]
    fn region_label_ignores_translation_within_cell() {
        let a = BBox::new(0.40, 0.40, 0.50, 0.50).unwrap();
        let b = BBox::new(0.45, 0.42, 0.55, 0.52).unwrap();
        assert_eq!(coarse_region_descriptor(&a), coarse_region_descriptor(&b));
    }

    #[test]
    fn validate_layout_reports_violations() {
        let good = Layout {
            lines: vec![hline(0.0, 0.0, 0.4, 0.1, "A"), hline(0.0, 0.5, 0.4, 0.6, "B")],
            canvas: (48, 48),
        };
        assert!(validate_layout(&good).is_empty());

        let degenerate = Layout {
            lines: vec![TextLine {
                content: "A".to_string(),
                box_: BBox { x_l: 0.3, y_t: 0.1, x_r: 0.3, y_b: 0.2 },
                orientation: Orientation::Horizontal,
            }],
            canvas: (48, 48),
        };
        let v = validate_layout(&degenerate);
        assert!(matches!(v[0], LayoutViolation::InvalidBox { line: 0, .. }));

        let overlapping = Layout {
            lines: vec![hline(0.1, 0.1, 0.5, 0.2, "A"), hline(0.1, 0.1, 0.5, 0.2, "B")],
            canvas: (48, 48),
        };
        let v = validate_layout(&overlapping);
        assert!(v.contains(&LayoutViolation::Overlap { lines: (0, 1) }));
    }

    #[test]
    fn positions_spacing_and_midline() {
        let line = hline(0.1, 0.3, 0.9, 0.5, "HELLO");
        let pos = assign_char_positions(&line).unwrap();
        let spacing = (0.9 - 0.1) / 5.0;
        for w in pos.windows(2) {
            assert!((w[1].x - w[0].x - spacing).abs() < 1e-12);
        }
        for p in &pos {
            assert!((p.y - 0.4).abs() < 1e-12);
            assert!(line.box_.contains(p.x, p.y));
        }
    }
}
