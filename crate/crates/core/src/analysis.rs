//! Analysis instrumentation: layer-wise feature-consistency reports, the
//! parameter/FLOP accounting, the retention-ratio sweep and the ablation
//! matrix.
//!
//! FLOP accounting convention (shared by the closed-form estimate here
//! and the tape's instrumented counter):
//!   matmul [m,k]x[k,n]      2*m*k*n
//!   elementwise add/sub/mul/abs/relu/scale/add_const   numel
//!   gelu 10/elem, sigmoid 4/elem
//!   softmax over n kept entries   5*n
//!   layer norm   8/elem
//!   weighted sum of k tensors of s elements   2*k*s
//!   top-k selection over D values   D (charged outside the tape)
//!   gathers, slices, concats, reshapes, transposes   0
//! Estimates describe eval-mode forwards (dropout contributes nothing)
//! on an unpadded sequence.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use alloc::collections::BTreeSet;
use serde::{Deserialize, Serialize};

use crate::data::{split_dataset, Dataset, TaskTemplate};
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::model::{DualModel, ModelConfig, ModelVariant, ScoreHead};
use crate::train::{train_on_split, NoObserver, RunRecord, TrainConfig};

/// Per-layer stability of the selected-feature sets across epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRecord {
    pub layer_index: usize,
    /// |union| of the layer's selected sets over all recorded epochs.
    pub unique_features: usize,
    /// |intersection| over all recorded epochs.
    pub core_features: usize,
    /// core / unique; 1 exactly when every epoch selected the same set.
    pub consistency_ratio: f64,
    pub per_epoch: Vec<Vec<usize>>,
}

/// Consistency ratio per layer: |intersection| / |union| of the selected
/// feature sets across the run's epochs. Needs at least two epochs of
/// selection logs.
pub fn consistency_report(run: &RunRecord) -> Result<Vec<ConsistencyRecord>> {
    let with_logs: Vec<&Vec<Vec<usize>>> = run
        .epochs
        .iter()
        .map(|e| &e.selected_features)
        .filter(|s| !s.is_empty())
        .collect();
    if with_logs.len() < 2 {
        return Err(Error::Analysis {
            msg: format!(
                "need at least 2 epochs of selection logs, found {}",
                with_logs.len()
            ),
        });
    }
    let n_layers = with_logs[0].len();
    if with_logs.iter().any(|s| s.len() != n_layers) {
        return Err(Error::Analysis {
            msg: String::from("inconsistent layer counts across epochs"),
        });
    }
    let mut out = Vec::with_capacity(n_layers);
    for layer in 0..n_layers {
        let sets: Vec<BTreeSet<usize>> = with_logs
            .iter()
            .map(|s| s[layer].iter().copied().collect())
            .collect();
        let mut union = sets[0].clone();
        let mut core = sets[0].clone();
        for s in &sets[1..] {
            union.extend(s.iter().copied());
            core = core.intersection(s).copied().collect();
        }
        let unique_features = union.len();
        let core_features = core.len();
        out.push(ConsistencyRecord {
            layer_index: layer,
            unique_features,
            core_features,
            consistency_ratio: if unique_features == 0 {
                0.0
            } else {
                core_features as f64 / unique_features as f64
            },
            per_epoch: with_logs
                .iter()
                .map(|s| s[layer].clone())
                .collect(),
        });
    }
    Ok(out)
}

/// Mean consistency ratio of the deepest third of layers minus the
/// shallowest third; positive means the funnel direction holds.
pub fn funnel_gap(records: &[ConsistencyRecord]) -> f64 {
    let n = records.len();
    let third = (n / 3).max(1);
    let mean = |rs: &[ConsistencyRecord]| {
        rs.iter().map(|r| r.consistency_ratio).sum::<f64>() / rs.len() as f64
    };
    mean(&records[n - third..]) - mean(&records[..third])
}

// ── parameter and FLOP accounting ──────────────────────────────────────

/// Projection-branch parameter count:
/// n_taps * (D*D' + D' if bias) + n_taps logits when fusion is learned.
fn pf_branch_params(cfg: &ModelConfig, learned: bool) -> usize {
    let n_taps = cfg.encoder.n_taps();
    let d = cfg.encoder.d_model;
    let d_proj = cfg.d_proj();
    let per_tap = d * d_proj + if cfg.projection_bias { d_proj } else { 0 };
    n_taps * per_tap + if learned { n_taps } else { 0 }
}

/// Closed-form parameter count for a variant built on `cfg`'s encoder.
pub fn param_count(cfg: &ModelConfig, variant: ModelVariant) -> usize {
    let enc = cfg.encoder.param_count();
    let head = |d_in: usize| ScoreHead::param_count(d_in);
    match variant {
        ModelVariant::Baseline => enc + 2 * head(cfg.encoder.d_model),
        ModelVariant::PfOnly | ModelVariant::PfDfl => {
            2 * enc + 2 * pf_branch_params(cfg, true) + 2 * head(cfg.d_proj())
        }
        ModelVariant::DflOnly => {
            2 * enc + 2 * pf_branch_params(cfg, false) + 2 * head(cfg.d_proj())
        }
    }
}

/// Closed-form encoder forward FLOPs for an unpadded sequence of `l`
/// tokens. Mirrors the tape's per-op costs term by term.
fn encoder_flops(cfg: &ModelConfig, l: u64) -> u64 {
    let d = cfg.encoder.d_model as u64;
    let d_ff = cfg.encoder.d_ff as u64;
    let h = cfg.encoder.n_heads as u64;
    let n_layers = cfg.encoder.n_layers as u64;
    let embed_add = l * d;
    let per_layer = 8 * l * d * d            // q,k,v,out projections
        + 4 * l * l * d                      // scores + context over all heads
        + 6 * h * l * l                      // scale + masked softmax per head
        + 23 * l * d                         // norms, biases, residuals
        + 4 * l * d * d_ff                   // feed-forward matmuls
        + 11 * l * d_ff; // ff bias + gelu
    embed_add + n_layers * per_layer
}

fn head_flops(d_in: u64) -> u64 {
    let mid = d_in / 2;
    2 * d_in * mid + 21 * mid + 5
}

/// Closed-form forward FLOPs for one example of `seq_len` tokens under
/// `variant` (eval mode, no padding).
pub fn flops_estimate(cfg: &ModelConfig, variant: ModelVariant, seq_len: usize) -> u64 {
    let l = seq_len as u64;
    let d = cfg.encoder.d_model as u64;
    let d_proj = cfg.d_proj() as u64;
    let n_taps = cfg.encoder.n_taps() as u64;
    match variant {
        ModelVariant::Baseline => encoder_flops(cfg, l) + 2 * head_flops(d),
        _ => {
            let masking = if variant.masks_features() {
                5 * n_taps * d
            } else {
                0
            };
            let project_per_branch =
                n_taps * (2 * d * d_proj + if cfg.projection_bias { 2 * d_proj } else { d_proj });
            let fuse_per_branch = if variant.learns_fusion() {
                5 * n_taps + 2 * n_taps * d_proj
            } else {
                2 * n_taps * d_proj
            };
            let shared = if cfg.shared_fusion { 2 * d_proj } else { 0 };
            2 * encoder_flops(cfg, l)
                + masking
                + 2 * (project_per_branch + fuse_per_branch)
                + shared
                + 2 * head_flops(d_proj)
        }
    }
}

/// Runs one eval forward and reports the tape's instrumented FLOP count.
/// This is the oracle the closed-form estimate is checked against.
pub fn instrumented_flops(cfg: &ModelConfig, variant: ModelVariant, seq_len: usize) -> Result<u64> {
    let mut model_cfg = cfg.clone();
    model_cfg.variant = variant;
    let model = DualModel::init(model_cfg, 1)?;
    // any non-pad tokens work; flop counts do not depend on values
    let tokens: Vec<usize> = (0..seq_len)
        .map(|i| crate::data::FIRST_WORD_ID + (i % (cfg.encoder.vocab_size - crate::data::FIRST_WORD_ID).max(1)))
        .collect();
    let mut g = crate::tensor::Graph::new();
    let bound = model.bind(&mut g, false);
    let mut rng = crate::rng::Rng::seed_from(0);
    let policy = crate::dfl::RetentionPolicy::new(0.01)?;
    model.forward_example(&mut g, &bound, &tokens, policy, false, &mut rng)?;
    Ok(g.flops())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantComplexity {
    pub variant: String,
    pub params: usize,
    pub flops: u64,
    pub param_overhead_pct: f64,
    pub flop_overhead_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub seq_len: usize,
    pub rows: Vec<VariantComplexity>,
}

/// Parameter counts and forward FLOPs for all four variants, with
/// overhead percentages relative to the baseline row.
pub fn complexity_report(cfg: &ModelConfig, seq_len: usize) -> ComplexityReport {
    let base_params = param_count(cfg, ModelVariant::Baseline) as f64;
    let base_flops = flops_estimate(cfg, ModelVariant::Baseline, seq_len) as f64;
    let rows = ModelVariant::all()
        .iter()
        .map(|&v| {
            let params = param_count(cfg, v);
            let flops = flops_estimate(cfg, v, seq_len);
            VariantComplexity {
                variant: v.as_str().into(),
                params,
                flops,
                param_overhead_pct: (params as f64 - base_params) / base_params * 100.0,
                flop_overhead_pct: (flops as f64 - base_flops) / base_flops * 100.0,
            }
        })
        .collect();
    ComplexityReport { seq_len, rows }
}

// ── experiment harnesses ───────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub report: EvalReport,
}

/// One sweep cell: fresh model, fresh seed-derived split, full training
/// at the given retention ratio, final-epoch validation metrics. Cells
/// are independent, so callers may run them in parallel workers.
pub fn sweep_cell(
    dataset: &Dataset,
    template: TaskTemplate,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    alpha: f64,
) -> Result<SweepRow> {
    let mut cfg = train_cfg.clone();
    cfg.alpha = alpha;
    let mut mc = model_cfg.clone();
    mc.variant = cfg.variant;
    let mut model = DualModel::init(mc, cfg.seed)?;
    let split = split_dataset(dataset, cfg.seed);
    let record = train_on_split(&mut model, dataset, &split, template, &cfg, &mut NoObserver)?;
    let report = record
        .epochs
        .last()
        .map(|e| e.val.clone())
        .ok_or(Error::Analysis {
            msg: String::from("sweep cell trained for zero epochs"),
        })?;
    Ok(SweepRow { alpha, report })
}

/// One full train+eval per retention ratio; every cell shares the same
/// seed and therefore the same split and model init.
pub fn ratio_sweep(
    dataset: &Dataset,
    template: TaskTemplate,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    ratios: &[f64],
) -> Result<Vec<SweepRow>> {
    if ratios.is_empty() {
        return Err(Error::InvalidArgument {
            op: "ratio_sweep",
            msg: String::from("empty ratio list"),
        });
    }
    ratios
        .iter()
        .map(|&alpha| sweep_cell(dataset, template, model_cfg, train_cfg, alpha))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub params: usize,
    pub report: EvalReport,
}

/// One ablation cell: train the given variant from scratch and report
/// final-epoch validation metrics plus its parameter count.
pub fn ablation_cell(
    dataset: &Dataset,
    template: TaskTemplate,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    variant: ModelVariant,
) -> Result<AblationRow> {
    let mut cfg = train_cfg.clone();
    cfg.variant = variant;
    let mut mc = model_cfg.clone();
    mc.variant = variant;
    let params = param_count(&mc, variant);
    let mut model = DualModel::init(mc, cfg.seed)?;
    let split = split_dataset(dataset, cfg.seed);
    let record = train_on_split(&mut model, dataset, &split, template, &cfg, &mut NoObserver)?;
    let report = record
        .epochs
        .last()
        .map(|e| e.val.clone())
        .ok_or(Error::Analysis {
            msg: String::from("ablation cell trained for zero epochs"),
        })?;
    Ok(AblationRow {
        variant: variant.as_str().into(),
        params,
        report,
    })
}

/// Trains all four variants with one seed and shared split; reports
/// final-epoch validation metrics per variant.
pub fn ablation_matrix(
    dataset: &Dataset,
    template: TaskTemplate,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<Vec<AblationRow>> {
    ModelVariant::all()
        .iter()
        .map(|&v| ablation_cell(dataset, template, model_cfg, train_cfg, v))
        .collect()
}
