//! Training loop: AdamW with cosine annealing and gradient accumulation,
//! pairs co-batched so the contrastive term is always defined, per-epoch
//! validation and run-record emission.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{encode, split_dataset, Dataset, Split, TaskTemplate};
use crate::dfl::RetentionPolicy;
use crate::error::{Error, Result};
use crate::metrics::{classify_report, EvalReport};
use crate::model::{DualModel, ExampleNodes, LossWeights, ModelVariant, PairScores};
use crate::optim::{cosine_lr, AdamW, AdamWConfig};
use crate::rng::Rng;
use crate::tensor::Graph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Micro-batch size in examples; must be even so pairs stay together.
    pub batch_size: usize,
    /// Optimizer steps happen every this many micro-batches, with
    /// gradients averaged over the window.
    pub accumulation_steps: usize,
    pub lr_start: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    pub variant: ModelVariant,
    /// Feature retention ratio for DFL variants.
    pub alpha: f64,
    pub loss: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 16,
            accumulation_steps: 8,
            lr_start: 2e-5,
            lr_min: 1e-6,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.95,
            adam_epsilon: 1e-8,
            seed: 42,
            variant: ModelVariant::PfDfl,
            alpha: 0.01,
            loss: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Error::InvalidArgument {
            op: "train_config",
            msg,
        };
        if self.batch_size == 0 || self.batch_size % 2 != 0 {
            return Err(bad(format!(
                "batch_size {} must be positive and even (pairs are co-batched)",
                self.batch_size
            )));
        }
        if self.accumulation_steps == 0 {
            return Err(bad(String::from("accumulation_steps must be positive")));
        }
        if !(self.lr_min <= self.lr_start && self.lr_min > 0.0) {
            return Err(bad(format!(
                "need 0 < lr_min <= lr_start, got {} and {}",
                self.lr_min, self.lr_start
            )));
        }
        if self.weight_decay < 0.0 || self.adam_epsilon <= 0.0 {
            return Err(bad(String::from("weight_decay/epsilon out of range")));
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return Err(bad(String::from("betas must lie in (0,1)")));
        }
        RetentionPolicy::new(self.alpha)?;
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.adam_epsilon,
        }
    }
}

/// Per-epoch artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean micro-batch loss over the epoch.
    pub train_loss: f64,
    pub val: EvalReport,
    pub layer_weights_hall: Vec<f64>,
    pub layer_weights_fact: Vec<f64>,
    /// Per layer tap: sorted union of selected feature indices over the
    /// validation pass. Empty when the variant does not mask.
    pub selected_features: Vec<Vec<usize>>,
}

/// Everything a run leaves behind besides checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub variant: String,
    pub alpha: f64,
    pub seed: u64,
    pub configured_epochs: usize,
    pub epochs: Vec<EpochRecord>,
}

/// Called after initialization (epoch 0) and after each epoch, in order;
/// the file-writing side lives in the CLI crate.
pub trait TrainObserver {
    fn on_checkpoint(&mut self, epoch: usize, model: &DualModel) -> Result<()>;
}

/// No-op observer.
pub struct NoObserver;

impl TrainObserver for NoObserver {
    fn on_checkpoint(&mut self, _epoch: usize, _model: &DualModel) -> Result<()> {
        Ok(())
    }
}

/// Pre-encoded example ready for the loop.
struct Encoded {
    tokens: Vec<usize>,
    label: f64,
    pair_id_idx: usize,
}

/// Trains `model` on the dataset's train split, evaluating on the
/// validation split each epoch. Fully deterministic per config seed.
pub fn train(
    model: &mut DualModel,
    dataset: &Dataset,
    template: TaskTemplate,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<RunRecord> {
    cfg.validate()?;
    let split = split_dataset(dataset, cfg.seed);
    train_on_split(model, dataset, &split, template, cfg, observer)
}

/// As [`train`] but with an explicit split (the ratio sweep shares one).
pub fn train_on_split(
    model: &mut DualModel,
    dataset: &Dataset,
    split: &Split,
    template: TaskTemplate,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<RunRecord> {
    cfg.validate()?;
    let policy = RetentionPolicy::new(cfg.alpha)?;
    let max_len = model.config.encoder.max_len;

    let encode_split = |indices: &[usize]| -> Vec<Encoded> {
        indices
            .iter()
            .map(|&i| {
                let ex = &dataset.examples[i];
                let full = encode(ex, template, max_len, &dataset.tokenizer);
                Encoded {
                    tokens: DualModel::trim_padding(&full).to_vec(),
                    label: f64::from(ex.label),
                    pair_id_idx: i,
                }
            })
            .collect()
    };
    let train_set = encode_split(&split.train);
    let val_set = encode_split(&split.val);
    if train_set.is_empty() {
        return Err(Error::Data {
            msg: String::from("empty training split"),
        });
    }

    let mut master = Rng::seed_from(cfg.seed);
    let mut shuffle_rng = master.split();
    let mut dropout_rng = master.split();

    let n_pairs = train_set.len() / 2;
    let pairs_per_batch = cfg.batch_size / 2;
    let micro_batches_per_epoch = n_pairs.div_ceil(pairs_per_batch);
    let total_steps = cfg.epochs * micro_batches_per_epoch.div_ceil(cfg.accumulation_steps);

    let mut optimizer = AdamW::new(&model.store, cfg.adamw());
    let mut record = RunRecord {
        variant: model.variant().as_str().into(),
        alpha: cfg.alpha,
        seed: cfg.seed,
        configured_epochs: cfg.epochs,
        epochs: Vec::with_capacity(cfg.epochs),
    };

    observer.on_checkpoint(0, model)?;

    let mut grad_acc: Vec<Vec<f64>> = model
        .store
        .tensors()
        .iter()
        .map(|t| vec![0.0; t.numel()])
        .collect();
    let mut acc_count = 0usize;
    let mut opt_step = 0usize;

    for epoch in 1..=cfg.epochs {
        // co-batch pairs: shuffle pair order, keep members adjacent
        let mut pair_order: Vec<usize> = (0..n_pairs).collect();
        shuffle_rng.shuffle(&mut pair_order);

        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;

        for chunk in pair_order.chunks(pairs_per_batch) {
            let mut g = Graph::new();
            let bound = model.bind(&mut g, true);
            let mut nodes: Vec<ExampleNodes> = Vec::with_capacity(chunk.len() * 2);
            let mut labels: Vec<f64> = Vec::with_capacity(chunk.len() * 2);
            let mut pair_slots: Vec<(usize, usize)> = Vec::with_capacity(chunk.len());
            for &p in chunk {
                // train_set holds pair members adjacently: (factual, hallucinated)
                let mut slot = (0usize, 0usize);
                for member in [2 * p, 2 * p + 1] {
                    let ex = &train_set[member];
                    let out = model.forward_example(
                        &mut g,
                        &bound,
                        &ex.tokens,
                        policy,
                        true,
                        &mut dropout_rng,
                    )?;
                    if ex.label == 0.0 {
                        slot.0 = nodes.len();
                    } else {
                        slot.1 = nodes.len();
                    }
                    nodes.push(out);
                    labels.push(ex.label);
                }
                pair_slots.push(slot);
            }
            let loss = model.batch_loss(&mut g, &nodes, &labels, &pair_slots, &cfg.loss)?;
            let loss_value = g.value(loss).item();
            if !loss_value.is_finite() {
                return Err(Error::NonFinite { step: opt_step });
            }
            loss_sum += loss_value;
            loss_count += 1;
            g.backward(loss)?;
            for (acc, &id) in grad_acc.iter_mut().zip(bound.ids()) {
                for (a, g_val) in acc.iter_mut().zip(g.grad(id)) {
                    *a += g_val;
                }
            }
            acc_count += 1;

            if acc_count == cfg.accumulation_steps {
                apply_update(
                    model,
                    &mut optimizer,
                    &mut grad_acc,
                    &mut acc_count,
                    &mut opt_step,
                    total_steps,
                    cfg,
                );
            }
        }
        // flush the remainder window at epoch end
        if acc_count > 0 {
            apply_update(
                model,
                &mut optimizer,
                &mut grad_acc,
                &mut acc_count,
                &mut opt_step,
                total_steps,
                cfg,
            );
        }

        let (val_report, selected) = evaluate_encoded(model, &val_set, dataset, policy)?;
        let (w_hall, w_fact) = exported_layer_weights(model);
        record.epochs.push(EpochRecord {
            epoch,
            train_loss: if loss_count == 0 {
                0.0
            } else {
                loss_sum / loss_count as f64
            },
            val: val_report,
            layer_weights_hall: w_hall,
            layer_weights_fact: w_fact,
            selected_features: selected,
        });
        observer.on_checkpoint(epoch, model)?;
    }

    Ok(record)
}

#[allow(clippy::too_many_arguments)]
fn apply_update(
    model: &mut DualModel,
    optimizer: &mut AdamW,
    grad_acc: &mut [Vec<f64>],
    acc_count: &mut usize,
    opt_step: &mut usize,
    total_steps: usize,
    cfg: &TrainConfig,
) {
    let scale = 1.0 / *acc_count as f64;
    for acc in grad_acc.iter_mut() {
        for v in acc.iter_mut() {
            *v *= scale;
        }
    }
    let lr = cosine_lr(*opt_step, total_steps, cfg.lr_start, cfg.lr_min);
    optimizer.step(&mut model.store, grad_acc, lr);
    *opt_step += 1;
    for acc in grad_acc.iter_mut() {
        acc.iter_mut().for_each(|v| *v = 0.0);
    }
    *acc_count = 0;
}

fn exported_layer_weights(model: &DualModel) -> (Vec<f64>, Vec<f64>) {
    let (pf_h, pf_f) = model.pf_branches();
    (
        pf_h.map(|pf| pf.export_layer_weights(&model.store))
            .unwrap_or_default(),
        pf_f.map(|pf| pf.export_layer_weights(&model.store))
            .unwrap_or_default(),
    )
}

fn evaluate_encoded(
    model: &DualModel,
    set: &[Encoded],
    dataset: &Dataset,
    policy: RetentionPolicy,
) -> Result<(EvalReport, Vec<Vec<usize>>)> {
    let n_taps = model.config.encoder.n_taps();
    let mut unions: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n_taps];
    let mut predictions = Vec::with_capacity(set.len());
    let mut labels = Vec::with_capacity(set.len());
    let mut pair_ids: Vec<&str> = Vec::with_capacity(set.len());
    let mut eval_rng = Rng::seed_from(0);
    for ex in set {
        let mut g = Graph::new();
        let bound = model.bind(&mut g, false);
        let nodes =
            model.forward_example(&mut g, &bound, &ex.tokens, policy, false, &mut eval_rng)?;
        let s = PairScores::new(g.value(nodes.s_hall).item(), g.value(nodes.s_correct).item());
        predictions.push(s.predicted_label());
        labels.push(ex.label as u8);
        pair_ids.push(&dataset.examples[ex.pair_id_idx].pair_id);
        for mask in &nodes.selected {
            unions[mask.layer_index].extend(mask.indices.iter().copied());
        }
    }
    let report = classify_report(&predictions, &labels, &pair_ids)?;
    let selected = if model.variant().masks_features() {
        unions
            .into_iter()
            .map(|s| s.into_iter().collect())
            .collect()
    } else {
        Vec::new()
    };
    Ok((report, selected))
}

/// Eval-mode metrics over an arbitrary index list of the dataset.
pub fn evaluate(
    model: &DualModel,
    dataset: &Dataset,
    indices: &[usize],
    template: TaskTemplate,
    alpha: f64,
) -> Result<(EvalReport, Vec<Vec<usize>>)> {
    let policy = RetentionPolicy::new(alpha)?;
    let max_len = model.config.encoder.max_len;
    let set: Vec<Encoded> = indices
        .iter()
        .map(|&i| {
            let ex = &dataset.examples[i];
            let full = encode(ex, template, max_len, &dataset.tokenizer);
            Encoded {
                tokens: DualModel::trim_padding(&full).to_vec(),
                label: f64::from(ex.label),
                pair_id_idx: i,
            }
        })
        .collect();
    evaluate_encoded(model, &set, dataset, policy)
}
