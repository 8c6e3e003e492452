//! Axial 2D rotary position embedding.
//!
//! Query/key vectors are rotated pairwise by angles derived from a token's
//! 2D position: the first `d_x` dimensions of each head follow the x
//! coordinate, the remaining `d_y` follow y. Image tokens use patch-grid
//! centers; character tokens use their assigned coordinates, or (0,0) when
//! position encoding is disabled, which makes the rotation an identity.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RopeConfig {
    pub head_dim: usize,
    /// (d_x, d_y), both even, summing to head_dim.
    pub axis_split: (usize, usize),
    pub base: f64,
    /// Multiplier from normalized [0,1] coordinates to phase units, shared
    /// by image and character tokens so they live in one positional space.
    pub pos_scale: f64,
}

impl RopeConfig {
    pub fn validate(&self) -> Result<(), RopeError> {
        let (dx, dy) = self.axis_split;
        if self.head_dim == 0 || self.head_dim % 2 != 0 {
            return Err(RopeError::BadConfig("head_dim must be even and positive"));
        }
        if dx + dy != self.head_dim || dx % 2 != 0 || dy % 2 != 0 {
            return Err(RopeError::BadConfig("axis split must be even halves of head_dim"));
        }
        if !(self.base > 1.0) {
            return Err(RopeError::BadConfig("base must exceed 1"));
        }
        Ok(())
    }

    /// Even split, the conventional choice for 2D axial rotary embeddings.
    pub fn square(head_dim: usize, base: f64, pos_scale: f64) -> Self {
        RopeConfig { head_dim, axis_split: (head_dim / 2, head_dim / 2), base, pos_scale }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RopeError {
    #[error("invalid rope config: {0}")]
    BadConfig(&'static str),
    #[error("vector length {found} does not match head_dim {expected}")]
    DimMismatch { found: usize, expected: usize },
}

/// Per-pair rotation angles for one position: `head_dim / 2` entries, the
/// first `d_x / 2` driven by x, the rest by y.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTable {
    pub angles: Vec<f64>,
}

/// θ_k = p · base^(−2k / d_axis) for each pair k within its axis block.
pub fn rotation_factors(pos: (f64, f64), cfg: &RopeConfig) -> PhaseTable {
    let (dx, dy) = cfg.axis_split;
    let mut angles = Vec::with_capacity(cfg.head_dim / 2);
    for k in 0..dx / 2 {
        let freq = cfg.base.powf(-2.0 * k as f64 / dx as f64);
        angles.push(pos.0 * cfg.pos_scale * freq);
    }
    for k in 0..dy / 2 {
        let freq = cfg.base.powf(-2.0 * k as f64 / dy as f64);
        angles.push(pos.1 * cfg.pos_scale * freq);
    }
    PhaseTable { angles }
}

/// Rotate a head-dim vector: dimensions (2k, 2k+1) by the k-th angle.
pub fn apply_rope(vec: &[f64], pos: (f64, f64), cfg: &RopeConfig) -> Result<Vec<f64>, RopeError> {
    if vec.len() != cfg.head_dim {
        return Err(RopeError::DimMismatch { found: vec.len(), expected: cfg.head_dim });
    }
    let table = rotation_factors(pos, cfg);
    let mut out = vec![0.0; vec.len()];
    for (k, &theta) in table.angles.iter().enumerate() {
        let (c, s) = (theta.cos(), theta.sin());
        let (a, b) = (vec[2 * k], vec[2 * k + 1]);
        out[2 * k] = a * c - b * s;
        out[2 * k + 1] = a * s + b * c;
    }
    Ok(out)
}

/// Precompute cos/sin tables for a token sequence, in the layout the autodiff
/// rope op expects: one row of `head_dim / 2` entries per token, shared by
/// all heads.
pub fn angle_tables(positions: &[(f64, f64)], cfg: &RopeConfig) -> (Vec<f64>, Vec<f64>) {
    let pairs = cfg.head_dim / 2;
    let mut cos = Vec::with_capacity(positions.len() * pairs);
    let mut sin = Vec::with_capacity(positions.len() * pairs);
    for &pos in positions {
        for theta in rotation_factors(pos, cfg).angles {
            cos.push(theta.cos());
            sin.push(theta.sin());
        }
    }
    (cos, sin)
}
