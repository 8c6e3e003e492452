//! Measurement stack: template OCR oracle, line alignment, text-accuracy
//! metrics, the subject-extension detector, preservation proxies, and the
//! style-following check.

pub mod ocr;
pub mod subject;
pub mod text;

pub use ocr::ocr;
pub use subject::{
    classify_style, cosine_similarity, dilate, extension_rate, is_extended, preservation_psnr,
    style_acc, thresholds as subject_thresholds, EvalError,
};
pub use text::{align_lines, levenshtein, mean_ned, ned, sentence_acc};

use crate::layout::BBox;
use serde::{Deserialize, Serialize};

/// One detected text line.
#[derive(Debug, Clone, PartialEq)]
pub struct OcrLine {
    pub text: String,
    pub box_: BBox,
    /// Mean template-match correlation over the line's glyphs, in [0,1].
    pub score: f64,
}

/// Aggregated metrics for one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub sen_acc: f64,
    pub ned: f64,
    pub extension_rate: f64,
    pub preservation_psnr: f64,
    pub embed_similarity: f64,
    pub style_acc: f64,
    pub n_samples: usize,
    /// Splits mirroring the single-line / multi-line analysis.
    pub sen_acc_single_line: f64,
    pub sen_acc_multi_line: f64,
    pub ned_single_line: f64,
    pub ned_multi_line: f64,
    pub dataset_hash: u64,
    pub model_hash: u64,
    pub seed: u64,
    pub code_version: String,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
