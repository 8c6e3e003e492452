//! Command-line front end: dataset generation, training, sampling,
//! evaluation, and the three ablation protocols. All subcommands are
//! deterministic given their seeds and input files.

use clap::{Parser, Subcommand};
use posterlab::data::{gen_sample, load_dataset, make_mask, save_dataset, DatasetConfig, MaskRegime};
use posterlab::harness::{
    ablate_cpe, ablate_data_scale, ablate_extension, eval_suite, init_thread_pool, pretrain_base,
    train, ExperimentSpec, TrainConfig,
};
use posterlab::model::{init_params, load_checkpoint, save_checkpoint, TrainMode};
use posterlab::tokens::build_token_sequence;
use std::error::Error;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "poster-lab", about = "Layout-grounded inpainting lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic poster dataset.
    GenData {
        /// Dataset config JSON; defaults to the built-in config when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        count: u64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model per an experiment spec and write a checkpoint.
    Train {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate images for chosen dataset samples with a trained checkpoint.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Sample indices into the dataset.
        #[arg(long, value_delimiter = ',', required = true)]
        ids: Vec<usize>,
        #[arg(long, default_value_t = 50)]
        steps: usize,
        /// Paste the kept (unmasked) pixels back over the output.
        #[arg(long)]
        paste: bool,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the full metric suite on a test set and write a JSON report.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        testset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train with and without character position encoding; compare accuracy.
    AblateCpe {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare tuning modes (frozen / adapter / low-rank / full) on
    /// subject extension rate.
    AblateExtension {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep adaptation epochs at fixed data size; track extension rate.
    AblateDataScale {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_spec(path: &Path) -> Result<ExperimentSpec, Box<dyn Error>> {
    Ok(ExperimentSpec::from_json(&std::fs::read_to_string(path)?)?)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Box<dyn Error>> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// Load the spec's datasets and check them against the model config's
/// expectations before any training starts.
fn load_pair(
    spec: &ExperimentSpec,
) -> Result<(DatasetConfig, Vec<posterlab::data::PosterSample>, Vec<posterlab::data::PosterSample>), Box<dyn Error>> {
    let (dcfg, train_set) = load_dataset(&spec.train_dataset)?;
    let (test_cfg, test_set) = load_dataset(&spec.test_dataset)?;
    if dcfg.hash() != test_cfg.hash() {
        return Err("train and test datasets use different configs".into());
    }
    Ok((dcfg, train_set, test_set))
}

fn run() -> Result<(), Box<dyn Error>> {
    init_thread_pool();
    let cli = Cli::parse();
    match cli.command {
        Command::GenData { config, count, seed, out } => {
            let dcfg: DatasetConfig = match config {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
                None => DatasetConfig::default(),
            };
            let samples: Result<Vec<_>, _> = (0..count)
                .map(|i| gen_sample(&dcfg, posterlab::harness::mix_seed(&[seed, i])))
                .collect();
            save_dataset(&dcfg, &samples?, &out)?;
            eprintln!("wrote {count} samples to {}", out.display());
        }
        Command::Train { spec, out } => {
            let spec = read_spec(&spec)?;
            let (dcfg, train_set, test_set) = load_pair(&spec)?;
            std::fs::create_dir_all(&out)?;
            let params = init_params(&spec.model, spec.init_seed)?;
            let params = match spec.train.mode {
                TrainMode::Full => params,
                ref mode => posterlab::model::apply_mode(&params, mode.clone(), spec.init_seed)?,
            };
            let res = train(params, &train_set, &dcfg, &spec.train)?;
            save_checkpoint(&res.params, &out.join("model.ckpt"))?;
            let trace: String =
                res.loss_trace.iter().map(|l| format!("{l}\n")).collect();
            std::fs::write(out.join("loss_trace.txt"), trace)?;
            let report = eval_suite(&res.params, &dcfg, &test_set, &spec.flow, spec.eval_seed)?;
            write_json(&out.join("report.json"), &report)?;
            eprintln!(
                "trained {}: sen_acc {:.4}, extension_rate {:.4}",
                spec.name, report.sen_acc, report.extension_rate
            );
        }
        Command::Sample { ckpt, dataset, ids, steps, paste, out, seed } => {
            let params = load_checkpoint(&ckpt)?;
            let (dcfg, samples) = load_dataset(&dataset)?;
            if params.dataset_hash != 0 && params.dataset_hash != dcfg.hash() {
                return Err("checkpoint was trained on a different dataset config".into());
            }
            std::fs::create_dir_all(&out)?;
            let fcfg = posterlab::flow::FlowConfig { n_sample_steps: steps, paste_product: paste };
            for id in ids {
                let sample = samples.get(id).ok_or_else(|| format!("no sample {id}"))?;
                let mask = make_mask(sample, MaskRegime::Poster, sample.seed);
                let seq = build_token_sequence(
                    sample,
                    &mask,
                    params.cfg.cpe_enabled,
                    params.cfg.patch_size,
                )?;
                let img = posterlab::flow::sample(
                    &params,
                    &seq,
                    &fcfg,
                    posterlab::harness::mix_seed(&[seed, 10, id as u64]),
                );
                let path = out.join(format!("sample_{id}.png"));
                img.save_png(&path)?;
                eprintln!("wrote {}", path.display());
            }
        }
        Command::Eval { ckpt, testset, out } => {
            let params = load_checkpoint(&ckpt)?;
            let (dcfg, test_set) = load_dataset(&testset)?;
            let report =
                eval_suite(&params, &dcfg, &test_set, &posterlab::flow::FlowConfig::default(), 0)?;
            write_json(&out, &report)?;
            println!("{}", report.to_json());
        }
        Command::AblateCpe { spec, out } => {
            let spec = read_spec(&spec)?;
            let (dcfg, train_set, test_set) = load_pair(&spec)?;
            std::fs::create_dir_all(&out)?;
            let report = ablate_cpe(
                &train_set,
                &test_set,
                &dcfg,
                &spec.model,
                &spec.train,
                &spec.flow,
                spec.init_seed,
                spec.eval_seed,
            )?;
            write_json(&out.join("cpe_ablation.json"), &report)?;
            eprintln!(
                "sen_acc with/without position encoding: {:.4} / {:.4}",
                report.with_cpe.sen_acc, report.without_cpe.sen_acc
            );
        }
        Command::AblateExtension { spec, out } => {
            let spec = read_spec(&spec)?;
            let (dcfg, adapt_set, test_set) = load_pair(&spec)?;
            std::fs::create_dir_all(&out)?;
            let pretrain_set = match &spec.ablation.pretrain_dataset {
                Some(p) => {
                    let (cfg, set) = load_dataset(p)?;
                    if cfg.hash() != dcfg.hash() {
                        return Err("pretrain dataset uses a different config".into());
                    }
                    set
                }
                None => adapt_set.clone(),
            };
            let pretrain_tcfg = TrainConfig {
                mode: TrainMode::Full,
                epochs: spec.ablation.pretrain_epochs.unwrap_or(spec.train.epochs),
                ..spec.train.clone()
            };
            let report = ablate_extension(
                &pretrain_set,
                &adapt_set,
                &test_set,
                &dcfg,
                &spec.model,
                &pretrain_tcfg,
                &spec.train,
                spec.ablation.lora_rank,
                spec.ablation.adapter_blocks,
                &spec.flow,
                spec.init_seed,
                spec.eval_seed,
            )?;
            write_json(&out.join("extension_ablation.json"), &report)?;
            eprintln!(
                "extension rate baseline/adapter/lora/full: {:.4} / {:.4} / {:.4} / {:.4}",
                report.baseline.extension_rate,
                report.adapter_branch.extension_rate,
                report.lora.extension_rate,
                report.full.extension_rate
            );
        }
        Command::AblateDataScale { spec, out } => {
            let spec = read_spec(&spec)?;
            let (dcfg, adapt_set, test_set) = load_pair(&spec)?;
            std::fs::create_dir_all(&out)?;
            let pretrain_set = match &spec.ablation.pretrain_dataset {
                Some(p) => load_dataset(p)?.1,
                None => adapt_set.clone(),
            };
            let pretrain_tcfg = TrainConfig {
                mode: TrainMode::Full,
                epochs: spec.ablation.pretrain_epochs.unwrap_or(spec.train.epochs),
                ..spec.train.clone()
            };
            let base =
                pretrain_base(&pretrain_set, &dcfg, &spec.model, &pretrain_tcfg, spec.init_seed)?;
            let report = ablate_data_scale(
                &base,
                &adapt_set,
                &test_set,
                &dcfg,
                &spec.train,
                &spec.ablation.epoch_cells,
                &spec.flow,
                spec.eval_seed,
            )?;
            write_json(&out.join("data_scale.json"), &report)?;
            for cell in &report.cells {
                eprintln!("epochs {:>4}: extension rate {:.4}", cell.epochs, cell.report.extension_rate);
            }
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
