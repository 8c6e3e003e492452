//! Train a small model on a few dozen posters, report the loss trend, and
//! write an equivalent experiment-spec JSON usable with the `poster-lab`
//! binary's `train` subcommand.

use posterlab::data::{gen_sample, save_dataset, DatasetConfig, MaskRegime};
use posterlab::flow::FlowConfig;
use posterlab::harness::{init_thread_pool, mix_seed, train, AblationKnobs, ExperimentSpec, TrainConfig};
use posterlab::model::{init_params, ModelConfig, TrainMode};
use posterlab::rope::RopeConfig;
use std::path::Path;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    init_thread_pool();
    let out = Path::new("target/example_out");
    std::fs::create_dir_all(out)?;

    let dcfg = DatasetConfig::default();
    let train_set: Result<Vec<_>, _> =
        (0..32u64).map(|i| gen_sample(&dcfg, mix_seed(&[1, i]))).collect();
    let test_set: Result<Vec<_>, _> =
        (0..8u64).map(|i| gen_sample(&dcfg, mix_seed(&[2, i]))).collect();
    let (train_set, test_set) = (train_set?, test_set?);
    save_dataset(&dcfg, &train_set, &out.join("tiny_train.plds"))?;
    save_dataset(&dcfg, &test_set, &out.join("tiny_test.plds"))?;

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
        weight_decay: 1e-2,
        batch_size: 8,
        epochs: 10,
        seed: 5,
        grad_clip: 1.0,
        mask_regime: MaskRegime::Poster,
    };

    let spec = ExperimentSpec {
        name: "tiny-demo".into(),
        train_dataset: out.join("tiny_train.plds"),
        test_dataset: out.join("tiny_test.plds"),
        model: mcfg.clone(),
        train: tcfg.clone(),
        init_seed: 7,
        flow: FlowConfig { n_sample_steps: 20, paste_product: false },
        eval_seed: 11,
        ablation: AblationKnobs::default(),
    };
    std::fs::write(out.join("tiny_spec.json"), spec.to_json())?;
    println!("spec written to {}", out.join("tiny_spec.json").display());

    let params = init_params(&mcfg, spec.init_seed)?;
    let res = train(params, &train_set, &dcfg, &tcfg)?;
    let n = res.loss_trace.len();
    let head = res.loss_trace[..4].iter().sum::<f64>() / 4.0;
    let tail = res.loss_trace[n - 4..].iter().sum::<f64>() / 4.0;
    println!("{n} optimizer steps: mean loss {head:.4} (first 4) -> {tail:.4} (last 4)");
    Ok(())
}
