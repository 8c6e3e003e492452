//! Fixed 5x7 dot-matrix font for the 36-glyph alphabet (A-Z, 0-9), plus
//! the nearest-neighbor scaling used by both the renderer and the OCR
//! templates. Integer arithmetic only, so scaled glyphs are identical on
//! every platform.

/// Alphabet in glyph-index order.
pub const ALPHABET: &str = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";

pub const GLYPH_W: usize = 5;
pub const GLYPH_H: usize = 7;

/// One row per glyph line, bit 4 = leftmost column.
#[rustfmt::skip]
const GLYPHS: [[u8; GLYPH_H]; 36] = [
    [0b01110, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001], // A
    [0b11110, 0b10001, 0b10001, 0b11110, 0b10001, 0b10001, 0b11110], // B
    [0b01110, 0b10001, 0b10000, 0b10000, 0b10000, 0b10001, 0b01110], // C
    [0b11110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b11110], // D
    [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b11111], // E
    [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000], // F
    [0b01110, 0b10001, 0b10000, 0b10111, 0b10001, 0b10001, 0b01111], // G
    [0b10001, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001], // H
    [0b01110, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110], // I
    [0b00111, 0b00010, 0b00010, 0b00010, 0b00010, 0b10010, 0b01100], // J
    [0b10001, 0b10010, 0b10100, 0b11000, 0b10100, 0b10010, 0b10001], // K
    [0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b11111], // L
    [0b10001, 0b11011, 0b10101, 0b10101, 0b10001, 0b10001, 0b10001], // M
    [0b10001, 0b10001, 0b11001, 0b10101, 0b10011, 0b10001, 0b10001], // N
    [0b01110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110], // O
    [0b11110, 0b10001, 0b10001, 0b11110, 0b10000, 0b10000, 0b10000], // P
    [0b01110, 0b10001, 0b10001, 0b10001, 0b10101, 0b10010, 0b01101], // Q
    [0b11110, 0b10001, 0b10001, 0b11110, 0b10100, 0b10010, 0b10001], // R
    [0b01111, 0b10000, 0b10000, 0b01110, 0b00001, 0b00001, 0b11110], // S
    [0b11111, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100], // T
    [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110], // U
    [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01010, 0b00100], // V
    [0b10001, 0b10001, 0b10001, 0b10101, 0b10101, 0b10101, 0b01010], // W
    [0b10001, 0b10001, 0b01010, 0b00100, 0b01010, 0b10001, 0b10001], // X
    [0b10001, 0b10001, 0b01010, 0b00100, 0b00100, 0b00100, 0b00100], // Y
    [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b10000, 0b11111], // Z
    [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110], // 0
    [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110], // 1
    [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111], // 2
    [0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110], // 3
    [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010], // 4
    [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110], // 5
    [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110], // 6
    [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000], // 7
    [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110], // 8
    [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100], // 9
];

/// Glyph index for a character, or `None` if outside the alphabet.
pub fn glyph_index(c: char) -> Option<usize> {
    match c {
        'A'..='Z' => Some(c as usize - 'A' as usize),
        '0'..='9' => Some(26 + c as usize - '0' as usize),
        _ => None,
    }
}

pub fn glyph_char(index: usize) -> char {
    ALPHABET.as_bytes()[index] as char
}

/// Source-resolution bitmap, `true` = inked pixel.
pub fn glyph_bitmap(index: usize) -> [[bool; GLYPH_W]; GLYPH_H] {
    let rows = &GLYPHS[index];
    let mut out = [[false; GLYPH_W]; GLYPH_H];
    for (r, row) in rows.iter().enumerate() {
        for c in 0..GLYPH_W {
            out[r][c] = (row >> (GLYPH_W - 1 - c)) & 1 == 1;
        }
    }
    out
}

/// Scaled glyph width for a target height, rounding 5*h/7.
pub fn scaled_width(height: u32) -> u32 {
    ((5 * height + 3) / 7).max(1)
}

/// Inter-glyph spacing in destination pixels: one source pixel, rounded.
pub fn glyph_spacing(height: u32) -> u32 {
    ((2 * height + 7) / 14).max(1)
}

/// Nearest-neighbor scaled bitmap, row-major `w * h` booleans.
pub fn scaled_glyph(index: usize, height: u32) -> (u32, u32, Vec<bool>) {
    let src = glyph_bitmap(index);
    let w = scaled_width(height);
    let h = height;
    let mut out = vec![false; (w * h) as usize];
    for r in 0..h {
        // Nearest neighbor on pixel centers: src = floor((r + 0.5) * 7 / h).
        let sr = (((2 * r + 1) * GLYPH_H as u32) / (2 * h)).min(GLYPH_H as u32 - 1);
        for c in 0..w {
            let sc = (((2 * c + 1) * GLYPH_W as u32) / (2 * w)).min(GLYPH_W as u32 - 1);
            out[(r * w + c) as usize] = src[sr as usize][sc as usize];
        }
    }
    (w, h, out)
}

/// Pixel extent of a rendered line block: `n` glyphs with spacing between.
pub fn line_block_size(n_chars: u32, height: u32) -> (u32, u32) {
    let w = n_chars * scaled_width(height) + n_chars.saturating_sub(1) * glyph_spacing(height);
    (w, height)
}
