//! Briefly train a small model, then generate inpainted posters for a few
//! held-out layouts and save reference/generated image pairs as PNGs.

use posterlab::data::{gen_sample, make_mask, DatasetConfig, MaskRegime};
use posterlab::flow::{sample, FlowConfig};
use posterlab::harness::{init_thread_pool, mix_seed, train, TrainConfig};
use posterlab::model::{init_params, ModelConfig, TrainMode};
use posterlab::rope::RopeConfig;
use posterlab::tokens::build_token_sequence;
use std::path::Path;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    init_thread_pool();
    let out = Path::new("target/example_out");
    std::fs::create_dir_all(out)?;

    let dcfg = DatasetConfig::default();
    let train_set: Result<Vec<_>, _> =
        (0..24u64).map(|i| gen_sample(&dcfg, mix_seed(&[1, i]))).collect();
    let mcfg = ModelConfig {
        model_dim: 48,
        n_heads: 3,
        n_blocks: 3,
        patch_size: 4,
        mlp_ratio: 2,
        rope_cfg: RopeConfig::square(16, 10000.0, 64.0),
        n_styles: 4,
        max_lines: 4,
        cpe_enabled: true,
    };
    let tcfg = TrainConfig {
        mode: TrainMode::Full,
        lr: 2e-3,
        epochs: 8,
        batch_size: 8,
        ..Default::default()
    };
    let res = train(init_params(&mcfg, 7)?, &train_set?, &dcfg, &tcfg)?;

    let fcfg = FlowConfig { n_sample_steps: 20, paste_product: false };
    for (i, seed) in [900u64, 901, 902].iter().enumerate() {
        let sample_gt = gen_sample(&dcfg, *seed)?;
        let mask = make_mask(&sample_gt, MaskRegime::Poster, sample_gt.seed);
        let seq = build_token_sequence(&sample_gt, &mask, true, mcfg.patch_size)?;
        let img = sample(&res.params, &seq, &fcfg, mix_seed(&[13, i as u64]));
        sample_gt.image.save_png(&out.join(format!("gen_{i}_reference.png")))?;
        img.save_png(&out.join(format!("gen_{i}_output.png")))?;
        println!("wrote gen_{i}_reference.png / gen_{i}_output.png");
    }
    println!("outputs in {}", out.display());
    Ok(())
}
