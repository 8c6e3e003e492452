//! Compare the four tuning regimes on one model: how many scalars each
//! trains, and the guarantee that low-rank and branch adapters leave the
//! function unchanged at initialization.

use posterlab::data::{gen_sample, make_mask, DatasetConfig, MaskRegime};
use posterlab::model::{apply_mode, forward_graph, init_params, ModelConfig, TrainMode};
use posterlab::rope::RopeConfig;
use posterlab::tensor::Graph;
use posterlab::tokens::build_token_sequence;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ModelConfig {
        model_dim: 32,
        n_heads: 2,
        n_blocks: 2,
        patch_size: 4,
        mlp_ratio: 2,
        rope_cfg: RopeConfig::square(16, 10000.0, 64.0),
        n_styles: 4,
        max_lines: 4,
        cpe_enabled: true,
    };
    let base = init_params(&cfg, 7)?;

    let dcfg = DatasetConfig::default();
    let sample = gen_sample(&dcfg, 3)?;
    let mask = make_mask(&sample, MaskRegime::Poster, 3);
    let seq = build_token_sequence(&sample, &mask, true, cfg.patch_size)?;
    let x: Vec<f32> = vec![0.25; (sample.image.width * sample.image.height * 3) as usize];

    let velocity = |params: &posterlab::model::ModelParams| {
        let mut g = Graph::new(&params.set);
        let out = forward_graph(&mut g, &params.set, &x, 0.5, &seq, &params.cfg, &params.mode);
        g.value(out.velocity).data.clone()
    };
    let base_v = velocity(&base);

    let modes = [
        TrainMode::Full,
        TrainMode::Lora { rank: 4 },
        TrainMode::AdapterBranch { k_blocks: 1 },
        TrainMode::Frozen,
    ];
    println!("{:<28} {:>10} {:>12}", "mode", "trainable", "total");
    for mode in modes {
        let m = apply_mode(&base, mode.clone(), 11)?;
        println!(
            "{:<28} {:>10} {:>12}",
            format!("{mode:?}"),
            m.set.n_trainable_scalars(),
            m.set.n_scalars()
        );
        let v = velocity(&m);
        let max_dev = base_v
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_dev < 1e-6, "{mode:?} changed the function at init by {max_dev}");
    }
    println!("all modes leave the base function unchanged at initialization");
    Ok(())
}
