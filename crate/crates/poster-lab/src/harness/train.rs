//! Deterministic training loop: fixed shuffles, noise draws keyed by
//! (epoch, step, item), parallel per-item gradients reduced in index order.

use super::{mix_seed, HarnessError, TrainConfig};
use crate::data::{make_mask, DatasetConfig, PosterSample};
use crate::flow::fm_loss;
use crate::model::ModelParams;
use crate::tensor::{Graph, ParamGrads, Tensor};
use crate::tokens::build_token_sequence;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

pub struct TrainResult {
    pub params: ModelParams,
    /// Mean batch loss per optimizer step.
    pub loss_trace: Vec<f64>,
}

/// Decoupled-weight-decay adaptive-moments optimizer with global-norm
/// gradient clipping.
struct AdamW {
    lr: f64,
    weight_decay: f64,
    clip: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: usize,
    m: Vec<Option<Tensor<f32>>>,
    v: Vec<Option<Tensor<f32>>>,
}

impl AdamW {
    fn new(cfg: &TrainConfig, n_params: usize) -> Self {
        AdamW {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            clip: cfg.grad_clip,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: (0..n_params).map(|_| None).collect(),
            v: (0..n_params).map(|_| None).collect(),
        }
    }

    fn update(&mut self, params: &mut ModelParams, grads: &ParamGrads<f32>) {
        self.step += 1;
        let mut sq_norm = 0.0f64;
        for g in grads.iter().flatten() {
            for &x in &g.data {
                sq_norm += (x as f64) * (x as f64);
            }
        }
        let norm = sq_norm.sqrt();
        let scale = if self.clip > 0.0 && norm > self.clip { self.clip / norm } else { 1.0 };
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let p = &mut params.set.entries[i];
            debug_assert!(p.trainable);
            let m =
                self.m[i].get_or_insert_with(|| Tensor::zeros(p.value.rows, p.value.cols));
            let v =
                self.v[i].get_or_insert_with(|| Tensor::zeros(p.value.rows, p.value.cols));
            for t in 0..p.value.data.len() {
                let gv = (g.data[t] as f64) * scale;
                let mt = self.beta1 * m.data[t] as f64 + (1.0 - self.beta1) * gv;
                let vt = self.beta2 * v.data[t] as f64 + (1.0 - self.beta2) * gv * gv;
                m.data[t] = mt as f32;
                v.data[t] = vt as f32;
                let m_hat = mt / bc1;
                let v_hat = vt / bc2;
                let w = p.value.data[t] as f64;
                let new = w - self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * w);
                p.value.data[t] = new as f32;
            }
        }
    }
}

/// Train `params` in place on `samples`; deterministic given the config seed.
pub fn train(
    mut params: ModelParams,
    samples: &[PosterSample],
    dcfg: &DatasetConfig,
    tcfg: &TrainConfig,
) -> Result<TrainResult, HarnessError> {
    tcfg.validate()?;
    if samples.is_empty() {
        return Err(HarnessError::EmptySet);
    }
    if tcfg.mode != params.mode {
        return Err(HarnessError::ModeMismatch);
    }
    params.dataset_hash = dcfg.hash();
    if params.set.n_trainable_scalars() == 0 {
        // Frozen mode trains nothing; skip the loop entirely so the params
        // stay bit-identical.
        return Ok(TrainResult { params, loss_trace: Vec::new() });
    }

    let n_px = (samples[0].image.width * samples[0].image.height * 3) as usize;
    let patch = params.cfg.patch_size;
    let cpe = params.cfg.cpe_enabled;
    let mut opt = AdamW::new(tcfg, params.set.entries.len());
    let mut trace = Vec::new();

    for epoch in 0..tcfg.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix_seed(&[tcfg.seed, 1, epoch as u64]));
        order.shuffle(&mut shuffle_rng);

        for (step, batch) in order.chunks(tcfg.batch_size).enumerate() {
            let items: Vec<Result<(f64, ParamGrads<f32>), HarnessError>> = batch
                .par_iter()
                .map(|&idx| {
                    let sample = &samples[idx];
                    let mask_seed =
                        mix_seed(&[tcfg.seed, 2, epoch as u64, sample.seed]);
                    let mask = make_mask(sample, tcfg.mask_regime, mask_seed);
                    let seq = build_token_sequence(sample, &mask, cpe, patch)?;
                    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
                        tcfg.seed,
                        3,
                        epoch as u64,
                        step as u64,
                        idx as u64,
                    ]));
                    let t: f64 = rng.gen_range(0.0..1.0);
                    let eps: Vec<f32> =
                        (0..n_px).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let mut g = Graph::new(&params.set);
                    let loss =
                        fm_loss(&mut g, &params, &params.set, &sample.image.data, &eps, t, &seq);
                    let lv = g.value(loss).data[0] as f64;
                    Ok((lv, g.backward(loss)))
                })
                .collect();

            // Sequential, index-ordered reduction keeps f32 sums bit-stable.
            let mut mean_loss = 0.0;
            let mut acc: ParamGrads<f32> =
                (0..params.set.entries.len()).map(|_| None).collect();
            let n = batch.len() as f64;
            for item in items {
                let (loss, grads) = item?;
                mean_loss += loss / n;
                for (slot, g) in acc.iter_mut().zip(grads) {
                    match (slot.as_mut(), g) {
                        (Some(s), Some(g)) => {
                            for (a, b) in s.data.iter_mut().zip(&g.data) {
                                *a += b / n as f32;
                            }
                        }
                        (None, Some(mut g)) => {
                            for v in &mut g.data {
                                *v /= n as f32;
                            }
                            *slot = Some(g);
                        }
                        _ => {}
                    }
                }
            }
            if !mean_loss.is_finite() {
                return Err(HarnessError::NonFiniteLoss { epoch, step, loss: mean_loss });
            }
            opt.update(&mut params, &acc);
            trace.push(mean_loss);
        }
    }
    Ok(TrainResult { params, loss_trace: trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_sample, MaskRegime};
    use crate::model::{apply_mode, init_params, params_hash, ModelConfig, TrainMode};
    use crate::rope::RopeConfig;

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

    fn data(n: u64) -> (DatasetConfig, Vec<PosterSample>) {
        let dcfg = DatasetConfig::default();
        let samples = (0..n).map(|s| gen_sample(&dcfg, s).unwrap()).collect();
        (dcfg, samples)
    }

    #[test]
    fn training_is_deterministic() {
        let (dcfg, samples) = data(6);
        let tcfg = TrainConfig { batch_size: 3, epochs: 2, ..Default::default() };
        let run = || {
            let params = init_params(&tiny_cfg(), 4).unwrap();
            train(params, &samples, &dcfg, &tcfg).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.loss_trace, b.loss_trace);
        assert_eq!(params_hash(&a.params), params_hash(&b.params));
    }

    #[test]
    fn loss_decreases_on_overfit_smoke() {
        let (dcfg, samples) = data(4);
        let tcfg = TrainConfig { batch_size: 4, epochs: 30, lr: 3e-3, ..Default::default() };
        let params = init_params(&tiny_cfg(), 4).unwrap();
        let res = train(params, &samples, &dcfg, &tcfg).unwrap();
        let head: f64 = res.loss_trace[..5].iter().sum::<f64>() / 5.0;
        let n = res.loss_trace.len();
        let tail: f64 = res.loss_trace[n - 5..].iter().sum::<f64>() / 5.0;
        assert!(tail < head, "loss did not decrease: {head} -> {tail}");
    }

    #[test]
    fn frozen_mode_changes_nothing() {
        let (dcfg, samples) = data(3);
        let base = init_params(&tiny_cfg(), 4).unwrap();
        let frozen = apply_mode(&base, TrainMode::Frozen, 0).unwrap();
        let before: Vec<_> = frozen.set.entries.iter().map(|p| p.value.clone()).collect();
        let tcfg =
            TrainConfig { mode: TrainMode::Frozen, epochs: 2, ..Default::default() };
        let res = train(frozen, &samples, &dcfg, &tcfg).unwrap();
        for (a, b) in before.iter().zip(&res.params.set.entries) {
            assert_eq!(*a, b.value);
        }
    }

    #[test]
    fn mode_mismatch_rejected() {
        let (dcfg, samples) = data(2);
        let params = init_params(&tiny_cfg(), 4).unwrap();
        let tcfg = TrainConfig { mode: TrainMode::Lora { rank: 2 }, ..Default::default() };
        assert!(matches!(
            train(params, &samples, &dcfg, &tcfg),
            Err(HarnessError::ModeMismatch)
        ));
    }

    #[test]
    fn random_patch_regime_trains() {
        let (dcfg, samples) = data(4);
        let tcfg = TrainConfig {
            mask_regime: MaskRegime::RandomPatch,
            batch_size: 2,
            ..Default::default()
        };
        let params = init_params(&tiny_cfg(), 4).unwrap();
        let res = train(params, &samples, &dcfg, &tcfg).unwrap();
        assert_eq!(res.loss_trace.len(), 2);
        assert_eq!(res.params.dataset_hash, dcfg.hash());
    }
}
