//! Desk-scale lab for layout-grounded text generation with a miniature
//! rectified-flow inpainting transformer.
//!
//! The crate provides:
//! - character position encoding over text-line bounding boxes ([`layout`]),
//! - axial 2D rotary embeddings shared by image and character tokens ([`rope`]),
//! - a unified conditioning token stream ([`tokens`]),
//! - a small diffusion transformer with full / LoRA / adapter-branch /
//!   frozen tuning regimes ([`model`]),
//! - the rectified-flow objective and Euler sampler ([`flow`]),
//! - a deterministic synthetic poster dataset ([`data`]),
//! - a template-matching OCR oracle and evaluation metrics ([`eval`]),
//! - training and ablation harnesses ([`harness`]).

pub mod data;
pub mod eval;
pub mod flow;
pub mod harness;
pub mod layout;
pub mod model;
pub mod rope;
pub mod tensor;
pub mod tokens;
