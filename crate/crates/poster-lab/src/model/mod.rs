//! Miniature diffusion transformer over pixel patches with joint attention
//! across image, character, and style tokens, plus four tuning regimes:
//! full-parameter, LoRA on attention projections, a frozen-base adapter
//! branch (trainable copy of the early blocks feeding zero-initialized
//! projections into the base residual stream), and fully frozen.

mod checkpoint;
mod forward;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use forward::{forward_graph, unpatchify, ForwardOutput};

use crate::rope::RopeConfig;
use crate::tensor::{ParamSet, Scalar, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub model_dim: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
    pub patch_size: u32,
    pub mlp_ratio: usize,
    pub rope_cfg: RopeConfig,
    /// Size of the background-style vocabulary.
    pub n_styles: usize,
    /// Maximum text lines per sample (size of the line-offset table).
    pub max_lines: usize,
    /// Whether character tokens carry their line-box coordinates; when off
    /// they sit at the fixed position (0,0).
    pub cpe_enabled: bool,
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.model_dim / self.n_heads
    }

    pub fn patch_in_dim(&self) -> usize {
        let p = self.patch_size as usize;
        p * p * 7 // noisy(3) + masked image(3) + mask(1) channels per pixel
    }

    pub fn patch_out_dim(&self) -> usize {
        let p = self.patch_size as usize;
        p * p * 3
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.model_dim == 0 || self.n_heads == 0 || self.n_blocks == 0 {
            return Err(ModelError::InvalidConfig("zero-sized dimension".into()));
        }
        if self.model_dim % self.n_heads != 0 {
            return Err(ModelError::InvalidConfig("model_dim not divisible by n_heads".into()));
        }
        if self.rope_cfg.head_dim != self.head_dim() {
            return Err(ModelError::InvalidConfig("rope head_dim mismatch".into()));
        }
        if self.head_dim() % 2 != 0 {
            return Err(ModelError::InvalidConfig("head_dim must be even".into()));
        }
        if self.mlp_ratio == 0 || self.patch_size == 0 || self.n_styles == 0 || self.max_lines == 0
        {
            return Err(ModelError::InvalidConfig("zero-sized dimension".into()));
        }
        self.rope_cfg
            .validate()
            .map_err(|e| ModelError::InvalidConfig(e.to_string()))?;
        Ok(())
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            model_dim: 128,
            n_heads: 4,
            n_blocks: 4,
            patch_size: 4,
            mlp_ratio: 4,
            rope_cfg: RopeConfig::square(32, 10000.0, 64.0),
            n_styles: 4,
            max_lines: 4,
            cpe_enabled: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TrainMode {
    Full,
    Lora { rank: usize },
    AdapterBranch { k_blocks: usize },
    Frozen,
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("invalid train mode: {0}")]
    InvalidMode(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint file: {0}")]
    Format(String),
    #[error("checkpoint version {found} unsupported (expected {expected})")]
    Version { found: u32, expected: u32 },
}

/// Full parameter state of one model instance.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub cfg: ModelConfig,
    pub mode: TrainMode,
    pub set: ParamSet<f32>,
    /// Seeds that produced this state, in order (init, then adaptations).
    pub seed_lineage: Vec<u64>,
    /// Hash of the dataset config this model was trained against; zero
    /// until a training run stamps it.
    pub dataset_hash: u64,
}

fn normal_tensor<S: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Tensor<S> {
    let dist = Normal::new(0.0f64, std).expect("valid std");
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| S::from_f64(dist.sample(rng))).collect())
}

/// Attention projection names within one block, the tensors LoRA wraps.
const ATTN_PROJS: [&str; 4] = ["wq", "wk", "wv", "wo"];

/// Push embedding tables, patch projections, time MLP, and `n_blocks`
/// transformer blocks under a name prefix ("" for the base model,
/// "branch." for the adapter copy).
fn push_stack(
    set: &mut ParamSet<f32>,
    cfg: &ModelConfig,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    n_blocks: usize,
    trainable: bool,
) {
    let d = cfg.model_dim;
    let std = 0.02;
    set.push(format!("{prefix}char_table"), normal_tensor(rng, 36, d, std), trainable);
    set.push(
        format!("{prefix}line_table"),
        normal_tensor(rng, cfg.max_lines, d, std),
        trainable,
    );
    set.push(
        format!("{prefix}style_table"),
        normal_tensor(rng, cfg.n_styles, d, std),
        trainable,
    );
    set.push(
        format!("{prefix}patch_in.w"),
        normal_tensor(rng, d, cfg.patch_in_dim(), std),
        trainable,
    );
    set.push(format!("{prefix}patch_in.b"), Tensor::zeros(1, d), trainable);
    set.push(format!("{prefix}time.w1"), normal_tensor(rng, d, d, std), trainable);
    set.push(format!("{prefix}time.b1"), Tensor::zeros(1, d), trainable);
    set.push(format!("{prefix}time.w2"), normal_tensor(rng, d, d, std), trainable);
    set.push(format!("{prefix}time.b2"), Tensor::zeros(1, d), trainable);
    for b in 0..n_blocks {
        for proj in ATTN_PROJS {
            set.push(
                format!("{prefix}block{b}.attn.{proj}"),
                normal_tensor(rng, d, d, std),
                trainable,
            );
        }
        let hidden = cfg.mlp_ratio * d;
        set.push(format!("{prefix}block{b}.mlp.w1"), normal_tensor(rng, hidden, d, std), trainable);
        set.push(format!("{prefix}block{b}.mlp.b1"), Tensor::zeros(1, hidden), trainable);
        set.push(format!("{prefix}block{b}.mlp.w2"), normal_tensor(rng, d, hidden, std), trainable);
        set.push(format!("{prefix}block{b}.mlp.b2"), Tensor::zeros(1, d), trainable);
        // Adaptive-norm modulation starts at zero: every block is an exact
        // identity at init, so the fresh model is the patch_in -> patch_out
        // linear path.
        set.push(format!("{prefix}block{b}.mod.w"), Tensor::zeros(6 * d, d), trainable);
        set.push(format!("{prefix}block{b}.mod.b"), Tensor::zeros(1, 6 * d), trainable);
    }
}

/// Deterministic small-variance initialization; all tensors trainable
/// (mode Full).
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ModelParams, ModelError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = ParamSet::default();
    push_stack(&mut set, cfg, &mut rng, "", cfg.n_blocks, true);
    let d = cfg.model_dim;
    // Zero-initialized output head: the fresh model predicts zero velocity.
    set.push("patch_out.w", Tensor::zeros(cfg.patch_out_dim(), d), true);
    set.push("patch_out.b", Tensor::zeros(1, cfg.patch_out_dim()), true);
    Ok(ModelParams {
        cfg: cfg.clone(),
        mode: TrainMode::Full,
        set,
        seed_lineage: vec![seed],
        dataset_hash: 0,
    })
}

/// Re-tag and/or extend a parameter set for a tuning regime. The returned
/// model's forward is identical to the input's at the moment of wrapping.
pub fn apply_mode(params: &ModelParams, mode: TrainMode, seed: u64) -> Result<ModelParams, ModelError> {
    let mut out = params.clone();
    out.seed_lineage.push(seed);
    // Strip any previous adaptation back to the plain stack first.
    if !matches!(params.mode, TrainMode::Full | TrainMode::Frozen) {
        return Err(ModelError::InvalidMode(
            "re-adaptation of an already adapted model is not supported".into(),
        ));
    }
    match mode {
        TrainMode::Full => {
            for p in &mut out.set.entries {
                p.trainable = true;
            }
        }
        TrainMode::Frozen => {
            for p in &mut out.set.entries {
                p.trainable = false;
            }
        }
        TrainMode::Lora { rank } => {
            if rank == 0 || rank > params.cfg.model_dim {
                return Err(ModelError::InvalidMode(format!(
                    "lora rank {rank} out of range for model_dim {}",
                    params.cfg.model_dim
                )));
            }
            for p in &mut out.set.entries {
                p.trainable = false;
            }
            let d = params.cfg.model_dim;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for b in 0..params.cfg.n_blocks {
                for proj in ATTN_PROJS {
                    // A random, B zero: W + BA starts exactly at W.
                    out.set.push(
                        format!("block{b}.attn.{proj}.lora_a"),
                        normal_tensor(&mut rng, rank, d, 0.02),
                        true,
                    );
                    out.set.push(
                        format!("block{b}.attn.{proj}.lora_b"),
                        Tensor::zeros(d, rank),
                        true,
                    );
                }
            }
        }
        TrainMode::AdapterBranch { k_blocks } => {
            if k_blocks == 0 || k_blocks > params.cfg.n_blocks {
                return Err(ModelError::InvalidMode(format!(
                    "adapter branch depth {k_blocks} out of range for {} blocks",
                    params.cfg.n_blocks
                )));
            }
            for p in &mut out.set.entries {
                p.trainable = false;
            }
            // Trainable copy of the input stack and first k blocks,
            // initialized from the base weights.
            let copy_names: Vec<String> = {
                let mut names = vec![
                    "char_table",
                    "line_table",
                    "style_table",
                    "patch_in.w",
                    "patch_in.b",
                    "time.w1",
                    "time.b1",
                    "time.w2",
                    "time.b2",
                ]
                .into_iter()
                .map(String::from)
                .collect::<Vec<_>>();
                for b in 0..k_blocks {
                    for proj in ATTN_PROJS {
                        names.push(format!("block{b}.attn.{proj}"));
                    }
                    for t in ["mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2", "mod.w", "mod.b"] {
                        names.push(format!("block{b}.{t}"));
                    }
                }
                names
            };
            for name in copy_names {
                let value = params.set.get(&name).value.clone();
                out.set.push(format!("branch.{name}"), value, true);
            }
            // Zero projections: branch output enters the base residual
            // stream as nothing until trained.
            let d = params.cfg.model_dim;
            for b in 0..k_blocks {
                out.set.push(format!("branch.proj{b}.w"), Tensor::zeros(d, d), true);
            }
        }
    }
    out.mode = mode;
    Ok(out)
}

/// Fold LoRA deltas into the base weights and drop the adapters; the result
/// is a plain frozen model with identical forward behavior.
pub fn merge_lora(params: &ModelParams) -> Result<ModelParams, ModelError> {
    let TrainMode::Lora { rank } = params.mode else {
        return Err(ModelError::InvalidMode("merge_lora requires a lora model".into()));
    };
    let mut out = params.clone();
    let d = params.cfg.model_dim;
    for b in 0..params.cfg.n_blocks {
        for proj in ATTN_PROJS {
            let a = &params.set.get(&format!("block{b}.attn.{proj}.lora_a")).value;
            let bb = &params.set.get(&format!("block{b}.attn.{proj}.lora_b")).value;
            let wi = out.set.index_of(&format!("block{b}.attn.{proj}")).unwrap();
            let w = &mut out.set.entries[wi].value;
            for r in 0..d {
                for c in 0..d {
                    let mut delta = 0.0f32;
                    for t in 0..rank {
                        delta += bb.data[r * rank + t] * a.data[t * d + c];
                    }
                    w.data[r * d + c] += delta;
                }
            }
        }
    }
    out.set.entries.retain(|p| !p.name.contains(".lora_"));
    for p in &mut out.set.entries {
        p.trainable = false;
    }
    out.mode = TrainMode::Frozen;
    Ok(out)
}

/// Hash of the parameter values and config, for report provenance.
pub fn params_hash(params: &ModelParams) -> u64 {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(serde_json::to_string(&params.cfg).unwrap().as_bytes());
    bytes.extend_from_slice(serde_json::to_string(&params.mode).unwrap().as_bytes());
    for p in &params.set.entries {
        bytes.extend_from_slice(p.name.as_bytes());
        for &v in &p.value.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    crate::data::fnv1a(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            model_dim: 16,
            n_heads: 2,
            n_blocks: 2,
            patch_size: 4,
            mlp_ratio: 2,
            rope_cfg: RopeConfig::square(8, 10000.0, 64.0),
            n_styles: 4,
            max_lines: 4,
            cpe_enabled: true,
        }
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let cfg = tiny_cfg();
        let a = init_params(&cfg, 7).unwrap();
        let b = init_params(&cfg, 7).unwrap();
        let c = init_params(&cfg, 8).unwrap();
        for (x, y) in a.set.entries.iter().zip(&b.set.entries) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.value, y.value);
        }
        assert!(a.set.entries.iter().zip(&c.set.entries).any(|(x, y)| x.value != y.value));
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = tiny_cfg();
        cfg.n_heads = 3;
        assert!(init_params(&cfg, 0).is_err());
        let mut cfg = tiny_cfg();
        cfg.rope_cfg.head_dim = 6;
        assert!(init_params(&cfg, 0).is_err());
    }

    #[test]
    fn lora_param_count() {
        let cfg = tiny_cfg();
        let base = init_params(&cfg, 1).unwrap();
        let lora = apply_mode(&base, TrainMode::Lora { rank: 2 }, 2).unwrap();
        let d = cfg.model_dim;
        let expect = cfg.n_blocks * 4 * 2 * (d + d); // rank*(in+out) per projection
        assert_eq!(lora.set.n_trainable_scalars(), expect);
        assert!(apply_mode(&base, TrainMode::Lora { rank: 0 }, 2).is_err());
    }

    #[test]
    fn adapter_branch_tensors_trainable_only() {
        let cfg = tiny_cfg();
        let base = init_params(&cfg, 1).unwrap();
        let ad = apply_mode(&base, TrainMode::AdapterBranch { k_blocks: 1 }, 2).unwrap();
        for p in &ad.set.entries {
            assert_eq!(p.trainable, p.name.starts_with("branch."), "{}", p.name);
        }
        // Copy starts from the base weights.
        assert_eq!(ad.set.get("branch.patch_in.w").value, base.set.get("patch_in.w").value);
        assert!(ad.set.get("branch.proj0.w").value.data.iter().all(|&v| v == 0.0));
        assert!(apply_mode(&base, TrainMode::AdapterBranch { k_blocks: 3 }, 2).is_err());
    }

    #[test]
    fn frozen_has_no_trainable_scalars() {
        let cfg = tiny_cfg();
        let base = init_params(&cfg, 1).unwrap();
        let f = apply_mode(&base, TrainMode::Frozen, 0).unwrap();
        assert_eq!(f.set.n_trainable_scalars(), 0);
    }

    #[test]
    fn params_hash_tracks_values() {
        let cfg = tiny_cfg();
        let a = init_params(&cfg, 1).unwrap();
        let mut b = a.clone();
        assert_eq!(params_hash(&a), params_hash(&b));
        b.set.entries[0].value.data[0] += 0.5;
        assert_ne!(params_hash(&a), params_hash(&b));
    }
}
