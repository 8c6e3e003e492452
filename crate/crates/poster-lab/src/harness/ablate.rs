//! Ablation protocols: tuning regimes vs extension rate, character position
//! encoding on/off vs text accuracy, and extension rate vs training budget.

use super::{eval_suite, mix_seed, train, HarnessError, TrainConfig};
use crate::data::{DatasetConfig, MaskRegime, PosterSample};
use crate::eval::EvalReport;
use crate::flow::FlowConfig;
use crate::model::{apply_mode, init_params, ModelConfig, ModelParams, TrainMode};
use serde::{Deserialize, Serialize};

/// Published full-scale extension rates for context: frozen baseline,
/// conditioning-branch adapter, low-rank tuning, full-parameter tuning.
pub const REFERENCE_EXTENSION_RATES: [(&str, f64); 4] =
    [("baseline", 0.41), ("adapter_branch", 0.236), ("lora", 0.028), ("full", 0.006)];

/// Published sentence accuracy with/without character position encoding.
pub const REFERENCE_SEN_ACC: (f64, f64) = (0.7133, 0.2494);

/// Published multi-line sentence accuracy with/without the encoding.
pub const REFERENCE_MULTI_LINE_SEN_ACC: (f64, f64) = (0.2571, 0.0461);

/// Published extension rates at a fixed 3K-image dataset across epoch
/// budgets (3 / 10 / 300 epochs).
pub const REFERENCE_DATA_SCALE: [(usize, f64); 3] = [(3, 0.173), (10, 0.093), (300, 0.036)];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CpeAblationReport {
    pub schema_version: u32,
    pub with_cpe: EvalReport,
    pub without_cpe: EvalReport,
    pub reference_sen_acc: (f64, f64),
    pub reference_multi_line_sen_acc: (f64, f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtensionAblationReport {
    pub schema_version: u32,
    pub baseline: EvalReport,
    pub adapter_branch: EvalReport,
    pub lora: EvalReport,
    pub full: EvalReport,
    pub reference_extension_rates: Vec<(String, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataScaleCell {
    pub epochs: usize,
    pub report: EvalReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataScaleReport {
    pub schema_version: u32,
    pub cells: Vec<DataScaleCell>,
    pub reference_extension_rates: Vec<(usize, f64)>,
}

/// Train two models differing only in whether character tokens carry their
/// layout coordinates, from one shared initialization, and evaluate both.
pub fn ablate_cpe(
    train_set: &[PosterSample],
    test_set: &[PosterSample],
    dcfg: &DatasetConfig,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    fcfg: &FlowConfig,
    init_seed: u64,
    eval_seed: u64,
) -> Result<CpeAblationReport, HarnessError> {
    let arm = |cpe: bool| -> Result<EvalReport, HarnessError> {
        let mut cfg = mcfg.clone();
        cfg.cpe_enabled = cpe;
        let params = init_params(&cfg, init_seed)?;
        let res = train(params, train_set, dcfg, tcfg)?;
        eval_suite(&res.params, dcfg, test_set, fcfg, eval_seed)
    };
    Ok(CpeAblationReport {
        schema_version: 1,
        with_cpe: arm(true)?,
        without_cpe: arm(false)?,
        reference_sen_acc: REFERENCE_SEN_ACC,
        reference_multi_line_sen_acc: REFERENCE_MULTI_LINE_SEN_ACC,
    })
}

/// Pretrain one base model on randomly masked patches, then adapt it to the
/// poster regime under each tuning mode with an identical budget, and report
/// extension rates per arm (baseline = the unadapted base).
#[allow(clippy::too_many_arguments)]
pub fn ablate_extension(
    pretrain_set: &[PosterSample],
    adapt_set: &[PosterSample],
    test_set: &[PosterSample],
    dcfg: &DatasetConfig,
    mcfg: &ModelConfig,
    pretrain_tcfg: &TrainConfig,
    adapt_tcfg: &TrainConfig,
    lora_rank: usize,
    adapter_blocks: usize,
    fcfg: &FlowConfig,
    init_seed: u64,
    eval_seed: u64,
) -> Result<ExtensionAblationReport, HarnessError> {
    let base = pretrain_base(pretrain_set, dcfg, mcfg, pretrain_tcfg, init_seed)?;

    let frozen = apply_mode(&base, TrainMode::Frozen, 0)?;
    let baseline = eval_suite(&frozen, dcfg, test_set, fcfg, eval_seed)?;

    let adapt = |mode: TrainMode| -> Result<EvalReport, HarnessError> {
        let seed = mix_seed(&[adapt_tcfg.seed, 20]);
        let params = apply_mode(&base, mode.clone(), seed)?;
        let tcfg = TrainConfig { mode, mask_regime: MaskRegime::Poster, ..adapt_tcfg.clone() };
        let res = train(params, adapt_set, dcfg, &tcfg)?;
        eval_suite(&res.params, dcfg, test_set, fcfg, eval_seed)
    };

    Ok(ExtensionAblationReport {
        schema_version: 1,
        baseline,
        adapter_branch: adapt(TrainMode::AdapterBranch { k_blocks: adapter_blocks })?,
        lora: adapt(TrainMode::Lora { rank: lora_rank })?,
        full: adapt(TrainMode::Full)?,
        reference_extension_rates: REFERENCE_EXTENSION_RATES
            .iter()
            .map(|(n, r)| (n.to_string(), *r))
            .collect(),
    })
}

/// Full-tune adaptations of one pretrained base at a fixed dataset size
/// across epoch budgets; extension rate per cell.
pub fn ablate_data_scale(
    base: &ModelParams,
    adapt_set: &[PosterSample],
    test_set: &[PosterSample],
    dcfg: &DatasetConfig,
    adapt_tcfg: &TrainConfig,
    epoch_cells: &[usize],
    fcfg: &FlowConfig,
    eval_seed: u64,
) -> Result<DataScaleReport, HarnessError> {
    if epoch_cells.is_empty() {
        return Err(HarnessError::InvalidSpec("no epoch cells given".into()));
    }
    let mut cells = Vec::new();
    for &epochs in epoch_cells {
        let params = apply_mode(base, TrainMode::Full, 0)?;
        let tcfg = TrainConfig {
            mode: TrainMode::Full,
            mask_regime: MaskRegime::Poster,
            epochs,
            ..adapt_tcfg.clone()
        };
        let res = train(params, adapt_set, dcfg, &tcfg)?;
        let report = eval_suite(&res.params, dcfg, test_set, fcfg, eval_seed)?;
        cells.push(DataScaleCell { epochs, report });
    }
    Ok(DataScaleReport {
        schema_version: 1,
        cells,
        reference_extension_rates: REFERENCE_DATA_SCALE.to_vec(),
    })
}

/// Initialize and pretrain a base model on the random-patch regime.
pub fn pretrain_base(
    pretrain_set: &[PosterSample],
    dcfg: &DatasetConfig,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    init_seed: u64,
) -> Result<ModelParams, HarnessError> {
    let params = init_params(mcfg, init_seed)?;
    let tcfg = TrainConfig {
        mode: TrainMode::Full,
        mask_regime: MaskRegime::RandomPatch,
        ..tcfg.clone()
    };
    Ok(train(params, pretrain_set, dcfg, &tcfg)?.params)
}
