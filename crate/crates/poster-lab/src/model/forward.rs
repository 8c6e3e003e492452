//! Graph assembly for the transformer forward pass.

use super::{ModelConfig, TrainMode};
use crate::rope::angle_tables;
use crate::tensor::{Graph, ParamSet, Scalar, Tensor, Var};
use crate::tokens::{patchify, TokenSeq};

pub struct ForwardOutput {
    /// Velocity prediction per image token, `[n_image_tokens, patch²·3]`.
    pub velocity: Var,
    /// Final-block image-token activations, `[n_image_tokens, model_dim]`;
    /// used by the embedding-similarity metric.
    pub image_acts: Var,
}

/// Sinusoidal features of the flow time, frequencies log-spaced over
/// [1, 1000] to resolve t within the unit interval.
fn time_features(t: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut feat = Vec::with_capacity(dim);
    for k in 0..half {
        let exp = if half > 1 { k as f64 / (half - 1) as f64 } else { 0.0 };
        let omega = 1000.0f64.powf(exp);
        feat.push((t * omega).sin());
        feat.push((t * omega).cos());
    }
    feat.resize(dim, 0.0);
    feat
}

fn lookup(params: &ParamSet<impl Scalar>, name: &str) -> usize {
    params.index_of(name).unwrap_or_else(|| panic!("missing parameter {name}"))
}

/// Attention projection with optional low-rank delta: x·Wᵀ (+ x·Aᵀ·Bᵀ).
fn attn_proj<S: Scalar>(
    g: &mut Graph<'_, S>,
    params: &ParamSet<S>,
    x: Var,
    name: &str,
    lora: bool,
) -> Var {
    let w = g.param(lookup(params, name));
    let y = g.linear(x, w, None);
    if lora {
        let a = g.param(lookup(params, &format!("{name}.lora_a")));
        let b = g.param(lookup(params, &format!("{name}.lora_b")));
        let xa = g.linear(x, a, None);
        let xab = g.linear(xa, b, None);
        g.add(y, xab)
    } else {
        y
    }
}

/// One adaptive-norm transformer block; returns the updated token stream.
#[allow(clippy::too_many_arguments)]
fn dit_block<S: Scalar>(
    g: &mut Graph<'_, S>,
    params: &ParamSet<S>,
    x: Var,
    temb: Var,
    prefix: &str,
    block: usize,
    n_heads: usize,
    cos: &[f64],
    sin: &[f64],
    lora: bool,
) -> Var {
    let d = g.value(x).cols;
    let mod_w = g.param(lookup(params, &format!("{prefix}block{block}.mod.w")));
    let mod_b = g.param(lookup(params, &format!("{prefix}block{block}.mod.b")));
    let m = g.linear(temb, mod_w, Some(mod_b));
    let shift1 = g.slice_cols(m, 0, d);
    let scale1 = g.slice_cols(m, d, d);
    let gate1 = g.slice_cols(m, 2 * d, d);
    let shift2 = g.slice_cols(m, 3 * d, d);
    let scale2 = g.slice_cols(m, 4 * d, d);
    let gate2 = g.slice_cols(m, 5 * d, d);

    let ln1 = g.layer_norm(x);
    let h = g.modulate(ln1, scale1, shift1);
    let q = attn_proj(g, params, h, &format!("{prefix}block{block}.attn.wq"), lora);
    let k = attn_proj(g, params, h, &format!("{prefix}block{block}.attn.wk"), lora);
    let v = attn_proj(g, params, h, &format!("{prefix}block{block}.attn.wv"), lora);
    let qr = g.rope(q, n_heads, cos.to_vec(), sin.to_vec());
    let kr = g.rope(k, n_heads, cos.to_vec(), sin.to_vec());
    let att = g.attention(qr, kr, v, n_heads);
    let o = attn_proj(g, params, att, &format!("{prefix}block{block}.attn.wo"), lora);
    let o = g.gate_rows(o, gate1);
    let x = g.add(x, o);

    let ln2 = g.layer_norm(x);
    let h2 = g.modulate(ln2, scale2, shift2);
    let w1 = g.param(lookup(params, &format!("{prefix}block{block}.mlp.w1")));
    let b1 = g.param(lookup(params, &format!("{prefix}block{block}.mlp.b1")));
    let w2 = g.param(lookup(params, &format!("{prefix}block{block}.mlp.w2")));
    let b2 = g.param(lookup(params, &format!("{prefix}block{block}.mlp.b2")));
    let mh = g.linear(h2, w1, Some(b1));
    let mh = g.silu(mh);
    let mh = g.linear(mh, w2, Some(b2));
    let mh = g.gate_rows(mh, gate2);
    g.add(x, mh)
}

/// Embed all tokens of a stream under a parameter prefix.
fn embed_tokens<S: Scalar>(
    g: &mut Graph<'_, S>,
    params: &ParamSet<S>,
    seq: &TokenSeq,
    image_rows: Var,
    prefix: &str,
) -> Var {
    let w = g.param(lookup(params, &format!("{prefix}patch_in.w")));
    let b = g.param(lookup(params, &format!("{prefix}patch_in.b")));
    let x_img = g.linear(image_rows, w, Some(b));
    let chars_t = g.param(lookup(params, &format!("{prefix}char_table")));
    let lines_t = g.param(lookup(params, &format!("{prefix}line_table")));
    let style_t = g.param(lookup(params, &format!("{prefix}style_table")));
    let chars = g.gather(chars_t, &seq.char_indices);
    let lines = g.gather(lines_t, &seq.line_indices);
    let chars = g.add(chars, lines);
    let style = g.gather(style_t, &[seq.style]);
    g.concat_rows(&[x_img, chars, style])
}

fn time_embedding<S: Scalar>(
    g: &mut Graph<'_, S>,
    params: &ParamSet<S>,
    t: f64,
    dim: usize,
    prefix: &str,
) -> Var {
    let feat = time_features(t, dim);
    let feat = g.constant(Tensor::from_vec(1, dim, feat.iter().map(|&v| S::from_f64(v)).collect()));
    let w1 = g.param(lookup(params, &format!("{prefix}time.w1")));
    let b1 = g.param(lookup(params, &format!("{prefix}time.b1")));
    let w2 = g.param(lookup(params, &format!("{prefix}time.w2")));
    let b2 = g.param(lookup(params, &format!("{prefix}time.b2")));
    let h = g.linear(feat, w1, Some(b1));
    let h = g.silu(h);
    let h = g.linear(h, w2, Some(b2));
    g.silu(h)
}

/// One transformer pass. `noisy` is the full canvas image (row-major RGB,
/// same layout as [`crate::data::Image::data`]); conditioning channels and
/// positions come from `seq`.
pub fn forward_graph<S: Scalar>(
    g: &mut Graph<'_, S>,
    params: &ParamSet<S>,
    noisy: &[f32],
    t: f64,
    seq: &TokenSeq,
    cfg: &ModelConfig,
    mode: &TrainMode,
) -> ForwardOutput {
    let p = cfg.patch_size;
    let (gw, gh) = seq.image_grid;
    let n_img = gw * gh;
    let width = gw as u32 * p;
    assert_eq!(noisy.len(), (width * gh as u32 * p * 3) as usize, "noisy image shape");
    assert_eq!(seq.cond_channels.len(), n_img, "token/grid mismatch");
    assert!(t.is_finite());

    // Image-token input rows: [noisy patch ‖ masked-image patch ‖ mask].
    let in_dim = cfg.patch_in_dim();
    let mut rows = Vec::with_capacity(n_img * in_dim);
    for j in 0..gh {
        for i in 0..gw {
            rows.extend(patchify(noisy, width, p, i, j));
            rows.extend_from_slice(&seq.cond_channels[j * gw + i]);
        }
    }
    let image_rows = g.constant(Tensor::from_f32_slice(n_img, in_dim, &rows));

    let lora = matches!(mode, TrainMode::Lora { .. });
    let (cos, sin) = angle_tables(&seq.positions, &cfg.rope_cfg);

    let mut x = embed_tokens(g, params, seq, image_rows, "");
    let temb = time_embedding(g, params, t, cfg.model_dim, "");

    let branch_k = match mode {
        TrainMode::AdapterBranch { k_blocks } => *k_blocks,
        _ => 0,
    };
    let mut z = if branch_k > 0 {
        let zt = embed_tokens(g, params, seq, image_rows, "branch.");
        Some((zt, time_embedding(g, params, t, cfg.model_dim, "branch.")))
    } else {
        None
    };

    let n_rest = seq.len() - n_img;
    for b in 0..cfg.n_blocks {
        x = dit_block(g, params, x, temb, "", b, cfg.n_heads, &cos, &sin, lora);
        if b < branch_k {
            let (zt, ztemb) = z.take().unwrap();
            let zt = dit_block(g, params, zt, ztemb, "branch.", b, cfg.n_heads, &cos, &sin, false);
            let z_img = g.slice_rows(zt, 0, n_img);
            let proj_w = g.param(lookup(params, &format!("branch.proj{b}.w")));
            let add_img = g.linear(z_img, proj_w, None);
            let pad = g.zeros(n_rest, cfg.model_dim);
            let padded = g.concat_rows(&[add_img, pad]);
            x = g.add(x, padded);
            z = Some((zt, ztemb));
        }
    }

    let image_acts = g.slice_rows(x, 0, n_img);
    let w = g.param(lookup(params, "patch_out.w"));
    let b = g.param(lookup(params, "patch_out.b"));
    let velocity = g.linear(image_acts, w, Some(b));
    ForwardOutput { velocity, image_acts }
}

/// Reassemble per-token velocity rows into a full canvas image buffer.
pub fn unpatchify(rows: &Tensor<f32>, grid: (usize, usize), patch: u32) -> Vec<f32> {
    let (gw, gh) = grid;
    let p = patch as usize;
    let width = gw * p;
    let mut out = vec![0.0f32; gw * gh * p * p * 3];
    for j in 0..gh {
        for i in 0..gw {
            let row = rows.row(j * gw + i);
            for r in 0..p {
                let dst = ((j * p + r) * width + i * p) * 3;
                out[dst..dst + p * 3].copy_from_slice(&row[r * p * 3..(r + 1) * p * 3]);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::{apply_mode, init_params, merge_lora, ModelParams, TrainMode};
    use super::*;
    use crate::data::{gen_sample, make_mask, DatasetConfig, MaskRegime};
    use crate::rope::RopeConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> ModelConfig {
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

    fn sample_inputs() -> (TokenSeq, Vec<f32>) {
        let dcfg = DatasetConfig::default();
        let s = gen_sample(&dcfg, 5).unwrap();
        let m = make_mask(&s, MaskRegime::Poster, 5);
        let seq = crate::tokens::build_token_sequence(&s, &m, true, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noisy: Vec<f32> = (0..48 * 48 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (seq, noisy)
    }

    /// Give the identity-initialized blocks and output head random weights
    /// so forward tests exercise a non-trivial network.
    fn activate(params: &mut ModelParams, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut params.set.entries {
            if p.name.contains(".mod.") || p.name.starts_with("patch_out") {
                for v in &mut p.value.data {
                    *v = rng.gen_range(-0.05..0.05);
                }
            }
        }
    }

    fn run_forward(params: &ModelParams, seq: &TokenSeq, noisy: &[f32], t: f64) -> Vec<f32> {
        let mut g = Graph::new(&params.set);
        let out = forward_graph(&mut g, &params.set, noisy, t, seq, &params.cfg, &params.mode);
        g.value(out.velocity).to_f32_vec()
    }

    #[test]
    fn output_shape_and_determinism() {
        let mut params = init_params(&cfg(), 3).unwrap();
        activate(&mut params, 4);
        let (seq, noisy) = sample_inputs();
        let a = run_forward(&params, &seq, &noisy, 0.4);
        let b = run_forward(&params, &seq, &noisy, 0.4);
        assert_eq!(a.len(), 144 * 48);
        assert_eq!(a, b);
    }

    #[test]
    fn fresh_model_is_patch_linear_path() {
        // Zero modulation makes every block an identity, so the full model
        // collapses to patch_out(patch_in(input)); with patch_out zeroed the
        // fresh model emits exactly zero velocity.
        let params = init_params(&cfg(), 3).unwrap();
        let (seq, noisy) = sample_inputs();
        let v = run_forward(&params, &seq, &noisy, 0.7);
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn ablated_blocks_reduce_to_linear_path() {
        let mut params = init_params(&cfg(), 3).unwrap();
        activate(&mut params, 4);
        // Zero every attention output projection and MLP second layer: the
        // blocks contribute nothing regardless of modulation.
        for p in &mut params.set.entries {
            if p.name.ends_with("attn.wo") || p.name.ends_with("mlp.w2") {
                p.value.data.fill(0.0);
            }
        }
        let (seq, noisy) = sample_inputs();
        let got = run_forward(&params, &seq, &noisy, 0.3);

        // Independent linear-path computation.
        let w_in = &params.set.get("patch_in.w").value;
        let b_in = &params.set.get("patch_in.b").value;
        let w_out = &params.set.get("patch_out.w").value;
        let b_out = &params.set.get("patch_out.b").value;
        let d = params.cfg.model_dim;
        let in_dim = params.cfg.patch_in_dim();
        for (tok, ch) in seq.cond_channels.iter().enumerate() {
            let (i, j) = (tok % 12, tok / 12);
            let mut row = patchify(&noisy, 48, 4, i, j);
            row.extend_from_slice(ch);
            let hidden: Vec<f32> = (0..d)
                .map(|o| {
                    b_in.data[o]
                        + (0..in_dim).map(|k| row[k] * w_in.data[o * in_dim + k]).sum::<f32>()
                })
                .collect();
            for o in 0..48 {
                let expect = b_out.data[o]
                    + (0..d).map(|k| hidden[k] * w_out.data[o * d + k]).sum::<f32>();
                let rel = (got[tok * 48 + o] - expect).abs() / expect.abs().max(1e-3);
                assert!(rel < 1e-4, "token {tok} out {o}: {} vs {expect}", got[tok * 48 + o]);
            }
        }
    }

    #[test]
    fn text_token_permutation_equivariance() {
        let mut params = init_params(&cfg(), 9).unwrap();
        activate(&mut params, 10);
        let dcfg = DatasetConfig::default();
        let s = (0..50)
            .map(|seed| gen_sample(&dcfg, seed).unwrap())
            .find(|s| s.layout.lines.iter().map(|l| l.content.len()).sum::<usize>() >= 2)
            .expect("a sample with at least two characters");
        let m = make_mask(&s, MaskRegime::Poster, 1);
        let seq = crate::tokens::build_token_sequence(&s, &m, true, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noisy: Vec<f32> = (0..48 * 48 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n_chars = seq.char_indices.len();
        let base = run_forward(&params, &seq, &noisy, 0.5);
        // Reverse the character tokens, keeping (indices, position) pairs.
        let mut perm = seq.clone();
        let n_img = seq.n_image_tokens();
        perm.char_indices.reverse();
        perm.line_indices.reverse();
        perm.positions[n_img..n_img + n_chars].reverse();
        let swapped = run_forward(&params, &perm, &noisy, 0.5);
        for (a, b) in base.iter().zip(&swapped) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn lora_identity_at_init_and_merge_consistency() {
        let mut base = init_params(&cfg(), 13).unwrap();
        activate(&mut base, 14);
        let (seq, noisy) = sample_inputs();
        let plain = run_forward(&base, &seq, &noisy, 0.6);
        let mut lora = apply_mode(&base, TrainMode::Lora { rank: 2 }, 15).unwrap();
        let fresh = run_forward(&lora, &seq, &noisy, 0.6);
        for (a, b) in plain.iter().zip(&fresh) {
            assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        }
        // Perturb the adapters, then check W + BA merging reproduces the
        // wrapped forward.
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for p in &mut lora.set.entries {
            if p.name.contains(".lora_b") {
                for v in &mut p.value.data {
                    *v = rng.gen_range(-0.05..0.05);
                }
            }
        }
        let wrapped = run_forward(&lora, &seq, &noisy, 0.6);
        let merged = merge_lora(&lora).unwrap();
        let merged_out = run_forward(&merged, &seq, &noisy, 0.6);
        let mut max_rel = 0.0f32;
        for (a, b) in wrapped.iter().zip(&merged_out) {
            max_rel = max_rel.max((a - b).abs() / a.abs().max(1e-2));
        }
        assert!(max_rel < 1e-5, "merge mismatch {max_rel}");
    }

    #[test]
    fn adapter_identity_at_init() {
        let mut base = init_params(&cfg(), 17).unwrap();
        activate(&mut base, 18);
        let (seq, noisy) = sample_inputs();
        let plain = run_forward(&base, &seq, &noisy, 0.2);
        let ad = apply_mode(&base, TrainMode::AdapterBranch { k_blocks: 2 }, 19).unwrap();
        let branched = run_forward(&ad, &seq, &noisy, 0.2);
        for (a, b) in plain.iter().zip(&branched) {
            assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn gradients_respect_tuning_mode() {
        let (seq, noisy) = sample_inputs();
        let mut base = init_params(&cfg(), 21).unwrap();
        activate(&mut base, 22);
        for (mode, allowed_marker) in [
            (TrainMode::Lora { rank: 2 }, ".lora_"),
            (TrainMode::AdapterBranch { k_blocks: 1 }, "branch."),
        ] {
            let m = apply_mode(&base, mode, 23).unwrap();
            let mut g = Graph::new(&m.set);
            let out = forward_graph(&mut g, &m.set, &noisy, 0.5, &seq, &m.cfg, &m.mode);
            let target = g.zeros(144, 48);
            let loss = g.mse_loss(out.velocity, target);
            let grads = g.backward(loss);
            let mut any_allowed = false;
            for (i, p) in m.set.entries.iter().enumerate() {
                if p.name.contains(allowed_marker) {
                    any_allowed |= grads[i].is_some();
                } else {
                    assert!(grads[i].is_none(), "frozen tensor {} got a gradient", p.name);
                }
            }
            assert!(any_allowed, "no gradient reached the adapters");
        }
    }
}
