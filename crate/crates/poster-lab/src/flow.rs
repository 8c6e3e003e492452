//! Rectified-flow objective and Euler sampler.
//!
//! Training regresses the velocity field v* = eps − x0 at interpolated
//! states x_t = (1−t)·x0 + t·eps; sampling integrates the learned field
//! from pure noise at t=1 down to data at t=0.

use crate::data::Image;
use crate::model::{forward_graph, unpatchify, ModelParams};
use crate::tensor::{Graph, ParamSet, Scalar, Tensor, Var};
use crate::tokens::{patchify, TokenSeq};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub n_sample_steps: usize,
    /// Overwrite the kept (unmasked) region with the conditioning pixels
    /// after integration. Off by default so subject preservation is a model
    /// property, not a compositing artifact.
    pub paste_product: bool,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig { n_sample_steps: 50, paste_product: false }
    }
}

/// x_t = (1−t)·x0 + t·eps.
pub fn interpolate(x0: &[f32], eps: &[f32], t: f64) -> Vec<f32> {
    assert_eq!(x0.len(), eps.len());
    let t = t as f32;
    x0.iter().zip(eps).map(|(&a, &b)| (1.0 - t) * a + t * b).collect()
}

/// Flow-matching loss: MSE between the predicted velocity and eps − x0 over
/// the full image (the conditioning channels, not a loss mask, carry the
/// inpainting constraint). Returns the loss node.
pub fn fm_loss<S: Scalar>(
    g: &mut Graph<'_, S>,
    params: &ModelParams,
    param_set: &ParamSet<S>,
    x0: &[f32],
    eps: &[f32],
    t: f64,
    seq: &TokenSeq,
) -> Var {
    assert!((0.0..=1.0).contains(&t), "t out of [0,1]");
    let x_t = interpolate(x0, eps, t);
    let out = forward_graph(g, param_set, &x_t, t, seq, &params.cfg, &params.mode);
    let (gw, gh) = seq.image_grid;
    let p = params.cfg.patch_size;
    let width = gw as u32 * p;
    let target: Vec<f32> = eps.iter().zip(x0).map(|(&e, &x)| e - x).collect();
    let mut rows = Vec::with_capacity(gw * gh * params.cfg.patch_out_dim());
    for j in 0..gh {
        for i in 0..gw {
            rows.extend(patchify(&target, width, p, i, j));
        }
    }
    let target = g.constant(Tensor::from_f32_slice(gw * gh, params.cfg.patch_out_dim(), &rows));
    g.mse_loss(out.velocity, target)
}

/// Euler integration of dx/dt = f(x, t) from t=1 down to t=0 in `n_steps`
/// uniform steps.
pub fn euler_integrate(
    mut x: Vec<f32>,
    n_steps: usize,
    f: impl Fn(&[f32], f64) -> Vec<f32>,
) -> Vec<f32> {
    assert!(n_steps >= 1);
    let dt = 1.0 / n_steps as f64;
    for step in 0..n_steps {
        let t = 1.0 - step as f64 * dt;
        let v = f(&x, t);
        for (xi, vi) in x.iter_mut().zip(&v) {
            *xi -= dt as f32 * vi;
        }
    }
    x
}

/// Reconstruct the conditioning pixels and mask from a token sequence's
/// image channels.
fn cond_pixels(seq: &TokenSeq) -> (Vec<f32>, Vec<bool>) {
    let (gw, gh) = seq.image_grid;
    let p = seq.patch_size as usize;
    let width = gw * p;
    let mut image = vec![0.0f32; width * gh * p * 3];
    let mut mask = vec![false; width * gh * p];
    for j in 0..gh {
        for i in 0..gw {
            let ch = &seq.cond_channels[j * gw + i];
            for r in 0..p {
                for c in 0..p {
                    let px = (j * p + r) * width + i * p + c;
                    let src = (r * p + c) * 3;
                    image[px * 3..px * 3 + 3].copy_from_slice(&ch[src..src + 3]);
                    mask[px] = ch[p * p * 3 + r * p + c] != 0.0;
                }
            }
        }
    }
    (image, mask)
}

/// Generate one image: Gaussian noise at t=1 integrated down to t=0 with the
/// model's velocity field. Deterministic given (params, seq, cfg, seed).
pub fn sample(params: &ModelParams, seq: &TokenSeq, cfg: &FlowConfig, seed: u64) -> Image {
    let (gw, gh) = seq.image_grid;
    let p = seq.patch_size;
    let (w, h) = (gw as u32 * p, gh as u32 * p);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f32> =
        (0..(w * h * 3) as usize).map(|_| StandardNormal.sample(&mut rng)).collect();

    let x = euler_integrate(noise, cfg.n_sample_steps, |x, t| {
        let mut g = Graph::new(&params.set);
        let out = forward_graph(&mut g, &params.set, x, t, seq, &params.cfg, &params.mode);
        unpatchify(g.value(out.velocity), seq.image_grid, p)
    });

    let mut data = x;
    if cfg.paste_product {
        let (cond, mask) = cond_pixels(seq);
        for (px, &masked) in mask.iter().enumerate() {
            if !masked {
                data[px * 3..px * 3 + 3].copy_from_slice(&cond[px * 3..px * 3 + 3]);
            }
        }
    }
    for v in &mut data {
        *v = v.clamp(0.0, 1.0);
    }
    // Quantize like the generator so metrics and the dataset format see the
    // same 8-bit lattice.
    let mut img = Image { width: w, height: h, data };
    img = Image::from_u8(w, h, &img.to_u8());
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_sample, make_mask, DatasetConfig, MaskRegime};
    use crate::model::{init_params, ModelConfig};
    use crate::rope::RopeConfig;
    use rand::Rng;

    fn tiny_model() -> ModelParams {
        let cfg = ModelConfig {
            model_dim: 16,
            n_heads: 2,
            n_blocks: 2,
            patch_size: 4,
            mlp_ratio: 2,
            rope_cfg: RopeConfig::square(8, 10000.0, 64.0),
            n_styles: 4,
            max_lines: 4,
            cpe_enabled: true,
        };
        init_params(&cfg, 1).unwrap()
    }

    fn seq() -> TokenSeq {
        let dcfg = DatasetConfig::default();
        let s = gen_sample(&dcfg, 3).unwrap();
        let m = make_mask(&s, MaskRegime::Poster, 3);
        crate::tokens::build_token_sequence(&s, &m, true, 4).unwrap()
    }

    #[test]
    fn interpolation_endpoints() {
        let x0 = vec![0.2f32, 0.8, 0.5];
        let eps = vec![1.0f32, -1.0, 0.0];
        assert_eq!(interpolate(&x0, &eps, 0.0), x0);
        assert_eq!(interpolate(&x0, &eps, 1.0), eps);
    }

    #[test]
    fn zero_model_on_matching_noise_has_zero_loss() {
        // A fresh model predicts zero velocity; with eps = x0 the target is
        // zero too, so the loss vanishes exactly.
        let params = tiny_model();
        let seq = seq();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x0: Vec<f32> = (0..48 * 48 * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mut g = Graph::new(&params.set);
        let loss = fm_loss(&mut g, &params, &params.set, &x0, &x0, 0.5, &seq);
        assert_eq!(g.value(loss).data[0], 0.0);
        // With eps != x0 the zero model pays exactly mean(target²).
        let eps: Vec<f32> = (0..48 * 48 * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mut g = Graph::new(&params.set);
        let loss = fm_loss(&mut g, &params, &params.set, &x0, &eps, 0.5, &seq);
        let expect: f32 =
            x0.iter().zip(&eps).map(|(&a, &b)| (b - a) * (b - a)).sum::<f32>() / x0.len() as f32;
        assert!((g.value(loss).data[0] - expect).abs() < 1e-5);
    }

    #[test]
    fn zero_velocity_returns_initial_noise() {
        let params = tiny_model();
        let seq = seq();
        let cfg = FlowConfig { n_sample_steps: 4, paste_product: false };
        let img = sample(&params, &seq, &cfg, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let noise: Vec<f32> = (0..48 * 48 * 3).map(|_| StandardNormal.sample(&mut rng)).collect();
        let expect = Image::from_u8(
            48,
            48,
            &Image { width: 48, height: 48, data: noise.iter().map(|v| v.clamp(0.0, 1.0)).collect() }
                .to_u8(),
        );
        assert_eq!(img, expect);
    }

    #[test]
    fn constant_velocity_integrates_linearly() {
        let mut params = tiny_model();
        // patch_out bias c with zero weights -> velocity constant c.
        let c = 0.25f32;
        let bi = params.set.index_of("patch_out.b").unwrap();
        params.set.entries[bi].value.data.fill(c);
        let seq = seq();
        let cfg = FlowConfig { n_sample_steps: 8, paste_product: false };
        let img = sample(&params, &seq, &cfg, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noise: Vec<f32> = (0..48 * 48 * 3).map(|_| StandardNormal.sample(&mut rng)).collect();
        for (got, n) in img.data.iter().zip(&noise) {
            let want = ((n - c).clamp(0.0, 1.0) * 255.0).round() / 255.0;
            assert!((got - want).abs() < 1e-6);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let params = tiny_model();
        let seq = seq();
        let cfg = FlowConfig { n_sample_steps: 3, paste_product: false };
        assert_eq!(sample(&params, &seq, &cfg, 11), sample(&params, &seq, &cfg, 11));
        assert_ne!(sample(&params, &seq, &cfg, 11), sample(&params, &seq, &cfg, 12));
    }

    #[test]
    fn paste_restores_kept_region() {
        let params = tiny_model();
        let dcfg = DatasetConfig::default();
        let s = gen_sample(&dcfg, 3).unwrap();
        let m = make_mask(&s, MaskRegime::Poster, 3);
        let seq = crate::tokens::build_token_sequence(&s, &m, true, 4).unwrap();
        let cfg = FlowConfig { n_sample_steps: 2, paste_product: true };
        let img = sample(&params, &seq, &cfg, 13);
        for y in 0..48 {
            for x in 0..48 {
                if !m.get(x, y) {
                    assert_eq!(img.get(x, y), s.image.get(x, y), "kept pixel ({x},{y})");
                }
            }
        }
    }

    #[test]
    fn euler_error_shrinks_linearly_on_exponential_field() {
        // dx/dt = x integrated from t=1 to 0: exact x(0) = x(1)·e^{-1}.
        let exact = 2.0f32 * (-1.0f64).exp() as f32;
        let run = |n| euler_integrate(vec![2.0f32], n, |x, _| vec![x[0]])[0];
        let e40 = (run(40) - exact).abs();
        let e80 = (run(80) - exact).abs();
        assert!(e80 < e40);
        let ratio = e80 / e40;
        assert!((0.3..0.7).contains(&ratio), "ratio {ratio}");
    }
}
