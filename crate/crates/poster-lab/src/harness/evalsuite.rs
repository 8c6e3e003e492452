//! End-to-end evaluation: generate with fixed seeds, run OCR and subject
//! metrics, aggregate into a versioned report.

use super::{mix_seed, HarnessError};
use crate::data::{make_mask, DatasetConfig, Image, MaskRegime, PosterSample};
use crate::eval::{
    align_lines, classify_style, cosine_similarity, is_extended, ned, ocr, preservation_psnr,
    EvalReport,
};
use crate::flow::{sample as flow_sample, FlowConfig};
use crate::model::{forward_graph, params_hash, ModelParams};
use crate::tensor::Graph;
use crate::tokens::{build_token_sequence, TokenSeq};
use rayon::prelude::*;

/// Mean final-block image-token activation over product patches, weighted by
/// how many product pixels each patch covers. Stand-in for an external
/// image-embedding probe.
fn product_embedding(params: &ModelParams, seq: &TokenSeq, image: &Image, sample: &PosterSample) -> Vec<f32> {
    let mut g = Graph::new(&params.set);
    let out = forward_graph(&mut g, &params.set, &image.data, 0.0, seq, &params.cfg, &params.mode);
    let acts = g.value(out.image_acts);
    let p = params.cfg.patch_size;
    let (gw, gh) = seq.image_grid;
    let d = params.cfg.model_dim;
    let mut mean = vec![0.0f32; d];
    let mut total = 0.0f32;
    for j in 0..gh {
        for i in 0..gw {
            let mut weight = 0u32;
            for r in 0..p {
                for c in 0..p {
                    if sample.product_mask.get(i as u32 * p + c, j as u32 * p + r) {
                        weight += 1;
                    }
                }
            }
            if weight > 0 {
                let row = acts.row(j * gw + i);
                for (m, &a) in mean.iter_mut().zip(row) {
                    *m += weight as f32 * a;
                }
                total += weight as f32;
            }
        }
    }
    if total > 0.0 {
        for m in &mut mean {
            *m /= total;
        }
    }
    mean
}

struct SampleMetrics {
    exact_lines: usize,
    n_lines: usize,
    ned_sum: f64,
    multi_line: bool,
    extended: bool,
    psnr: f64,
    embed_sim: f64,
    style_ok: bool,
}

/// Generate one image per test sample with seeds derived from `seed` and
/// aggregate the full metric suite. Deterministic end-to-end.
pub fn eval_suite(
    params: &ModelParams,
    dcfg: &DatasetConfig,
    testset: &[PosterSample],
    fcfg: &FlowConfig,
    seed: u64,
) -> Result<EvalReport, HarnessError> {
    if testset.is_empty() {
        return Err(HarnessError::EmptySet);
    }
    if params.dataset_hash != 0 && params.dataset_hash != dcfg.hash() {
        return Err(HarnessError::ConfigMismatch);
    }
    let patch = params.cfg.patch_size;
    let cpe = params.cfg.cpe_enabled;

    let per_sample: Vec<Result<SampleMetrics, HarnessError>> = testset
        .par_iter()
        .enumerate()
        .map(|(i, sample)| {
            let mask = make_mask(sample, MaskRegime::Poster, sample.seed);
            let seq = build_token_sequence(sample, &mask, cpe, patch)?;
            let img = flow_sample(params, &seq, fcfg, mix_seed(&[seed, 10, i as u64]));

            let pred = ocr(&img, dcfg);
            let alignment = align_lines(&pred, &sample.layout);
            let mut exact = 0;
            let mut ned_sum = 0.0;
            for (pi, gi) in &alignment {
                let gt = &sample.layout.lines[*gi].content;
                match pi {
                    Some(pi) => {
                        let text = &pred[*pi].text;
                        if text == gt {
                            exact += 1;
                        }
                        ned_sum += ned(text, gt);
                    }
                    None => ned_sum += 0.0,
                }
            }

            let emb_gen = product_embedding(params, &seq, &img, sample);
            let emb_ref = product_embedding(params, &seq, &sample.image, sample);

            Ok(SampleMetrics {
                exact_lines: exact,
                n_lines: sample.layout.lines.len(),
                ned_sum,
                multi_line: sample.layout.lines.len() > 1,
                extended: is_extended(&img, &sample.product_mask, dcfg),
                psnr: preservation_psnr(&img, sample)
                    .map_err(|e| HarnessError::InvalidSpec(e.to_string()))?,
                embed_sim: cosine_similarity(&emb_gen, &emb_ref),
                style_ok: classify_style(&img, sample, dcfg) == sample.style_id.0,
            })
        })
        .collect();

    let mut all = Vec::with_capacity(per_sample.len());
    for m in per_sample {
        all.push(m?);
    }

    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
    let lines: f64 = all.iter().map(|m| m.n_lines as f64).sum();
    let exact: f64 = all.iter().map(|m| m.exact_lines as f64).sum();
    let neds: f64 = all.iter().map(|m| m.ned_sum).sum();
    let split = |multi: bool| {
        let l: f64 = all.iter().filter(|m| m.multi_line == multi).map(|m| m.n_lines as f64).sum();
        let e: f64 =
            all.iter().filter(|m| m.multi_line == multi).map(|m| m.exact_lines as f64).sum();
        let n: f64 = all.iter().filter(|m| m.multi_line == multi).map(|m| m.ned_sum).sum();
        (ratio(e, l), ratio(n, l))
    };
    let (sen_single, ned_single) = split(false);
    let (sen_multi, ned_multi) = split(true);
    let n = all.len() as f64;

    Ok(EvalReport {
        schema_version: 1,
        sen_acc: ratio(exact, lines),
        ned: ratio(neds, lines),
        extension_rate: all.iter().filter(|m| m.extended).count() as f64 / n,
        preservation_psnr: all.iter().map(|m| m.psnr).sum::<f64>() / n,
        embed_similarity: all.iter().map(|m| m.embed_sim).sum::<f64>() / n,
        style_acc: all.iter().filter(|m| m.style_ok).count() as f64 / n,
        n_samples: all.len(),
        sen_acc_single_line: sen_single,
        sen_acc_multi_line: sen_multi,
        ned_single_line: ned_single,
        ned_multi_line: ned_multi,
        dataset_hash: dcfg.hash(),
        model_hash: params_hash(params),
        seed,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_sample;
    use crate::model::{init_params, ModelConfig};
    use crate::rope::RopeConfig;

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

    #[test]
    fn eval_is_deterministic_and_total() {
        let dcfg = DatasetConfig::default();
        let testset: Vec<_> = (100..104).map(|s| gen_sample(&dcfg, s).unwrap()).collect();
        let fcfg = FlowConfig { n_sample_steps: 2, paste_product: false };
        let params = tiny_model();
        let a = eval_suite(&params, &dcfg, &testset, &fcfg, 7).unwrap();
        let b = eval_suite(&params, &dcfg, &testset, &fcfg, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_samples, 4);
        assert!(a.sen_acc >= 0.0 && a.sen_acc <= 1.0);
        assert!(a.extension_rate >= 0.0 && a.extension_rate <= 1.0);
        assert!(a.style_acc >= 0.0 && a.style_acc <= 1.0);
    }

    #[test]
    fn empty_testset_rejected() {
        let dcfg = DatasetConfig::default();
        let params = tiny_model();
        assert!(matches!(
            eval_suite(&params, &dcfg, &[], &FlowConfig::default(), 0),
            Err(HarnessError::EmptySet)
        ));
    }

    #[test]
    fn dataset_hash_mismatch_rejected() {
        let dcfg = DatasetConfig::default();
        let testset = vec![gen_sample(&dcfg, 1).unwrap()];
        let mut params = tiny_model();
        params.dataset_hash = 12345;
        assert!(matches!(
            eval_suite(&params, &dcfg, &testset, &FlowConfig::default(), 0),
            Err(HarnessError::ConfigMismatch)
        ));
    }
}
