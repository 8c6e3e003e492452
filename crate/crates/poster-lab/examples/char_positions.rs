//! Show how per-character coordinates are derived from a line's bounding
//! box: each character sits at the center of its equal-width slice (or
//! equal-height slice for vertical lines).

use posterlab::layout::{assign_char_positions, BBox, Orientation, TextLine};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let horizontal = TextLine {
        content: "SALE 50".into(),
        box_: BBox::new(0.10, 0.20, 0.90, 0.30)?,
        orientation: Orientation::Horizontal,
    };
    let vertical = TextLine {
        content: "NEW".into(),
        box_: BBox::new(0.85, 0.40, 0.95, 0.90)?,
        orientation: Orientation::Vertical,
    };

    for line in [&horizontal, &vertical] {
        println!("{:?} line {:?} in {:?}:", line.orientation, line.content, line.box_);
        let positions = assign_char_positions(line)?;
        for (ch, pos) in line.content.chars().zip(&positions) {
            println!("  '{ch}' -> ({:.4}, {:.4})", pos.x, pos.y);
        }
        // The i-th of n characters lands at fraction (i - 0.5) / n across
        // the box on the text axis, centered on the other axis.
        let n = positions.len() as f64;
        let first = &positions[0];
        let frac = (first.x - line.box_.x_l) / line.box_.width();
        if line.orientation == Orientation::Horizontal {
            assert!((frac - 0.5 / n).abs() < 1e-12);
        }
        println!();
    }
    Ok(())
}
