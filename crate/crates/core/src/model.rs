//! The full dual-encoder classifier: two parallel encoders over identical
//! input, differential feature masking between them, per-branch projected
//! fusion, two confidence heads and the combined loss.
//!
//! Four variants share this code path:
//! - `baseline`: one encoder, final-layer CLS straight into both heads
//! - `pf`: dual encoders, learned fusion over unmasked taps
//! - `dfl`: dual encoders, masking, fixed uniform fusion (no logits)
//! - `pf_dfl`: dual encoders, masking, learned fusion
//!
//! Both encoders start from identical weights (one init seed); the
//! branches diverge because each feeds its own head. By default each
//! branch's fusion output feeds its own head; `shared_fusion` averages
//! the two fused vectors and feeds both heads the shared representation.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::PAD_ID;
use crate::dfl::{self, FeatureMask, RetentionPolicy};
use crate::encoder::{self, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::params::{Binding, ParamId, ParamStore};
use crate::pf::PfParams;
use crate::rng::Rng;
use crate::tensor::{Graph, Tensor, TensorId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    Baseline,
    PfOnly,
    DflOnly,
    PfDfl,
}

impl ModelVariant {
    pub fn parse(s: &str) -> Result<ModelVariant> {
        match s {
            "baseline" => Ok(ModelVariant::Baseline),
            "pf" | "pf_only" => Ok(ModelVariant::PfOnly),
            "dfl" | "dfl_only" => Ok(ModelVariant::DflOnly),
            "pf_dfl" | "pfdfl" => Ok(ModelVariant::PfDfl),
            other => Err(Error::InvalidArgument {
                op: "variant",
                msg: format!("unknown variant '{other}' (expected baseline|pf|dfl|pf_dfl)"),
            }),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelVariant::Baseline => "baseline",
            ModelVariant::PfOnly => "pf",
            ModelVariant::DflOnly => "dfl",
            ModelVariant::PfDfl => "pf_dfl",
        }
    }

    pub fn dual_encoder(&self) -> bool {
        !matches!(self, ModelVariant::Baseline)
    }

    pub fn masks_features(&self) -> bool {
        matches!(self, ModelVariant::DflOnly | ModelVariant::PfDfl)
    }

    pub fn learns_fusion(&self) -> bool {
        matches!(self, ModelVariant::PfOnly | ModelVariant::PfDfl)
    }

    pub fn all() -> [ModelVariant; 4] {
        [
            ModelVariant::Baseline,
            ModelVariant::PfOnly,
            ModelVariant::DflOnly,
            ModelVariant::PfDfl,
        ]
    }
}

/// Weights for the four loss terms plus the contrastive hinge margin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub hall: f64,
    pub correct: f64,
    pub diff: f64,
    pub contrastive: f64,
    pub margin: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            hall: 1.0,
            correct: 1.0,
            diff: 1.0,
            contrastive: 0.1,
            margin: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub variant: ModelVariant,
    /// Projection width D'; defaults to D.
    pub d_proj: Option<usize>,
    /// Projection bias on by default.
    pub projection_bias: bool,
    /// Feed both heads the mean of the two fused vectors instead of one
    /// fused vector per branch.
    pub shared_fusion: bool,
    /// Dropout inside the score heads.
    pub head_dropout: f64,
}

impl ModelConfig {
    pub fn new(encoder: EncoderConfig, variant: ModelVariant) -> ModelConfig {
        ModelConfig {
            encoder,
            variant,
            d_proj: None,
            projection_bias: true,
            shared_fusion: false,
            head_dropout: 0.1,
        }
    }

    pub fn d_proj(&self) -> usize {
        self.d_proj.unwrap_or(self.encoder.d_model)
    }

    /// Width of the vector entering the score heads.
    pub fn head_input_dim(&self) -> usize {
        if self.variant.dual_encoder() {
            self.d_proj()
        } else {
            self.encoder.d_model
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.head_input_dim() < 2 {
            return Err(Error::InvalidArgument {
                op: "model_config",
                msg: format!("head input dim {} too small", self.head_input_dim()),
            });
        }
        if !(0.0..1.0).contains(&self.head_dropout) {
            return Err(Error::InvalidArgument {
                op: "model_config",
                msg: format!("head_dropout {} outside [0,1)", self.head_dropout),
            });
        }
        Ok(())
    }
}

/// Two-layer perceptron head: d -> d/2 -> 1 with GELU, layer norm,
/// dropout and a sigmoid output in (0,1).
#[derive(Debug, Clone)]
pub struct ScoreHead {
    w1: ParamId,
    b1: ParamId,
    ln_gain: ParamId,
    ln_bias: ParamId,
    w2: ParamId,
    b2: ParamId,
    d_in: usize,
}

impl ScoreHead {
    fn init(store: &mut ParamStore, prefix: &str, d_in: usize, rng: &mut Rng) -> ScoreHead {
        let d_mid = d_in / 2;
        ScoreHead {
            w1: store.add(
                format!("{prefix}.w1"),
                Tensor::randn(alloc::vec![d_in, d_mid], 0.02, rng),
            ),
            b1: store.add(format!("{prefix}.b1"), Tensor::zeros(alloc::vec![d_mid])),
            ln_gain: store.add(
                format!("{prefix}.ln.gain"),
                Tensor::full(alloc::vec![d_mid], 1.0),
            ),
            ln_bias: store.add(format!("{prefix}.ln.bias"), Tensor::zeros(alloc::vec![d_mid])),
            w2: store.add(
                format!("{prefix}.w2"),
                Tensor::randn(alloc::vec![d_mid, 1], 0.02, rng),
            ),
            b2: store.add(format!("{prefix}.b2"), Tensor::zeros(alloc::vec![1])),
            d_in,
        }
    }

    /// Parameter count for a head with the given input width.
    pub fn param_count(d_in: usize) -> usize {
        let d_mid = d_in / 2;
        d_in * d_mid + d_mid + 2 * d_mid + d_mid + 1
    }

    fn forward(
        &self,
        g: &mut Graph,
        bound: &Binding,
        x: TensorId,
        dropout_p: f64,
        train: bool,
        rng: &mut Rng,
    ) -> Result<TensorId> {
        let d_mid = self.d_in / 2;
        let row = g.reshape(x, alloc::vec![1, self.d_in])?;
        let h = g.matmul(row, bound.id(self.w1))?;
        let h = g.add_bias(h, bound.id(self.b1))?;
        let h = g.gelu(h);
        let h = g.layernorm(h, bound.id(self.ln_gain), bound.id(self.ln_bias))?;
        let h = g.dropout(h, dropout_p, train, rng)?;
        let s = g.matmul(h, bound.id(self.w2))?;
        let s = g.add_bias(s, bound.id(self.b2))?;
        let s = g.reshape(s, alloc::vec![1])?;
        let _ = d_mid;
        Ok(g.sigmoid(s))
    }
}

/// Confidence scores for one example plus the decision rule: the example
/// is called hallucinated iff s_hall - s_correct > 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairScores {
    pub s_hall: f64,
    pub s_correct: f64,
    pub decision: bool,
}

impl PairScores {
    pub fn new(s_hall: f64, s_correct: f64) -> PairScores {
        PairScores {
            s_hall,
            s_correct,
            decision: s_hall - s_correct > 0.0,
        }
    }

    pub fn predicted_label(&self) -> u8 {
        u8::from(self.decision)
    }
}

/// On-graph outputs of one example forward pass.
pub struct ExampleNodes {
    pub s_hall: TensorId,
    pub s_correct: TensorId,
    /// One mask per layer tap when the variant masks features.
    pub selected: Vec<FeatureMask>,
}

pub struct DualModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    enc_hall: EncoderParams,
    enc_fact: Option<EncoderParams>,
    pf_hall: Option<PfParams>,
    pf_fact: Option<PfParams>,
    head_hall: ScoreHead,
    head_correct: ScoreHead,
}

impl DualModel {
    /// Allocates parameters for the configured variant. The two encoders
    /// are initialized with identical weights from one derived seed.
    pub fn init(config: ModelConfig, seed: u64) -> Result<DualModel> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut master = Rng::seed_from(seed);
        let enc_seed = master.next_u64();

        let enc_hall = EncoderParams::init(
            &mut store,
            "enc_hall",
            &config.encoder,
            &mut Rng::seed_from(enc_seed),
        );
        let enc_fact = config.variant.dual_encoder().then(|| {
            EncoderParams::init(
                &mut store,
                "enc_fact",
                &config.encoder,
                &mut Rng::seed_from(enc_seed),
            )
        });

        let n_taps = config.encoder.n_taps();
        let d = config.encoder.d_model;
        let d_proj = config.d_proj();
        let learned = config.variant.learns_fusion();
        let mut pf_rng = master.split();
        let pf_hall = config.variant.dual_encoder().then(|| {
            PfParams::init(
                &mut store,
                "pf_hall",
                n_taps,
                d,
                d_proj,
                config.projection_bias,
                learned,
                &mut pf_rng,
            )
        });
        let pf_fact = config.variant.dual_encoder().then(|| {
            PfParams::init(
                &mut store,
                "pf_fact",
                n_taps,
                d,
                d_proj,
                config.projection_bias,
                learned,
                &mut pf_rng,
            )
        });

        let mut head_rng = master.split();
        let d_head = config.head_input_dim();
        let head_hall = ScoreHead::init(&mut store, "head_hall", d_head, &mut head_rng);
        let head_correct = ScoreHead::init(&mut store, "head_correct", d_head, &mut head_rng);

        Ok(DualModel {
            config,
            store,
            enc_hall,
            enc_fact,
            pf_hall,
            pf_fact,
            head_hall,
            head_correct,
        })
    }

    pub fn variant(&self) -> ModelVariant {
        self.config.variant
    }

    /// Fusion branch for weight export: (hallucination, factual).
    pub fn pf_branches(&self) -> (Option<&PfParams>, Option<&PfParams>) {
        (self.pf_hall.as_ref(), self.pf_fact.as_ref())
    }

    /// Encoder parameters: (hallucination branch, factual branch).
    pub fn encoders(&self) -> (&EncoderParams, Option<&EncoderParams>) {
        (&self.enc_hall, self.enc_fact.as_ref())
    }

    pub fn bind(&self, g: &mut Graph, requires_grad: bool) -> Binding {
        self.store.bind(g, requires_grad)
    }

    /// Forward pass under the model's configured variant.
    pub fn forward_example(
        &self,
        g: &mut Graph,
        bound: &Binding,
        tokens: &[usize],
        policy: RetentionPolicy,
        train: bool,
        rng: &mut Rng,
    ) -> Result<ExampleNodes> {
        self.forward_example_as(self.config.variant, g, bound, tokens, policy, train, rng)
    }

    /// Forward pass under `variant`, which must not need parameters the
    /// model was built without. A `pf_dfl` model can run any variant; a
    /// `baseline` model only itself.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_example_as(
        &self,
        variant: ModelVariant,
        g: &mut Graph,
        bound: &Binding,
        tokens: &[usize],
        policy: RetentionPolicy,
        train: bool,
        rng: &mut Rng,
    ) -> Result<ExampleNodes> {
        if variant.dual_encoder() && self.enc_fact.is_none() {
            return Err(Error::InvalidArgument {
                op: "forward",
                msg: format!(
                    "variant {} needs dual encoders but the model was built as {}",
                    variant.as_str(),
                    self.config.variant.as_str()
                ),
            });
        }
        if variant.learns_fusion()
            && self
                .pf_hall
                .as_ref()
                .is_none_or(|pf| pf.layer_logits.is_none())
        {
            return Err(Error::InvalidArgument {
                op: "forward",
                msg: format!(
                    "variant {} needs layer logits but the model was built as {}",
                    variant.as_str(),
                    self.config.variant.as_str()
                ),
            });
        }

        let cfg = &self.config;
        if !variant.dual_encoder() {
            let out = encoder::forward(g, bound, &self.enc_hall, &cfg.encoder, tokens, train, rng)?;
            let cls = *out.stack.states.last().expect("at least one tap");
            let s_hall =
                self.head_hall
                    .forward(g, bound, cls, cfg.head_dropout, train, rng)?;
            let s_correct =
                self.head_correct
                    .forward(g, bound, cls, cfg.head_dropout, train, rng)?;
            return Ok(ExampleNodes {
                s_hall,
                s_correct,
                selected: Vec::new(),
            });
        }

        let out_h = encoder::forward(g, bound, &self.enc_hall, &cfg.encoder, tokens, train, rng)?;
        let out_f = encoder::forward(
            g,
            bound,
            self.enc_fact.as_ref().expect("dual encoder"),
            &cfg.encoder,
            tokens,
            train,
            rng,
        )?;
        let pf_h = self.pf_hall.as_ref().expect("dual encoder has pf");
        let pf_f = self.pf_fact.as_ref().expect("dual encoder has pf");

        let n_taps = cfg.encoder.n_taps();
        let mut selected = Vec::new();
        let mut proj_h = Vec::with_capacity(n_taps);
        let mut proj_f = Vec::with_capacity(n_taps);
        for tap in 0..n_taps {
            let mut h_h = out_h.stack.states[tap];
            let mut h_f = out_f.stack.states[tap];
            if variant.masks_features() {
                let delta = dfl::diff(g, h_h, h_f)?;
                // top-k selection pass over D values
                g.add_flops(cfg.encoder.d_model as u64);
                let mask = dfl::select(g, delta, tap, policy)?;
                h_h = dfl::apply(g, h_h, &mask)?;
                h_f = dfl::apply(g, h_f, &mask)?;
                selected.push(mask);
            }
            proj_h.push(pf_h.project(g, bound, h_h, tap)?);
            proj_f.push(pf_f.project(g, bound, h_f, tap)?);
        }

        let fuse_branch = |g: &mut Graph, pf: &PfParams, proj: &[TensorId]| -> Result<TensorId> {
            if variant.learns_fusion() {
                crate::pf::fuse(g, proj, bound.id(pf.layer_logits.expect("learned fusion")))
            } else {
                let w = g.constant(Tensor::full(
                    alloc::vec![proj.len()],
                    1.0 / proj.len() as f64,
                ));
                g.weighted_sum(proj, w)
            }
        };
        let fused_h = fuse_branch(g, pf_h, &proj_h)?;
        let fused_f = fuse_branch(g, pf_f, &proj_f)?;

        let (head_in_h, head_in_f) = if cfg.shared_fusion {
            let sum = g.add(fused_h, fused_f)?;
            let shared = g.scale(sum, 0.5);
            (shared, shared)
        } else {
            (fused_h, fused_f)
        };

        let s_hall = self
            .head_hall
            .forward(g, bound, head_in_h, cfg.head_dropout, train, rng)?;
        let s_correct =
            self.head_correct
                .forward(g, bound, head_in_f, cfg.head_dropout, train, rng)?;
        Ok(ExampleNodes {
            s_hall,
            s_correct,
            selected,
        })
    }

    /// Eval-mode scores on a private graph.
    pub fn scores(&self, tokens: &[usize], policy: RetentionPolicy) -> Result<(PairScores, Vec<FeatureMask>)> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let mut rng = Rng::seed_from(0);
        let nodes = self.forward_example(&mut g, &bound, tokens, policy, false, &mut rng)?;
        Ok((
            PairScores::new(g.value(nodes.s_hall).item(), g.value(nodes.s_correct).item()),
            nodes.selected,
        ))
    }

    /// Combined loss over a micro-batch:
    ///
    ///   L = w_hall * BCE(s_hall, y) + w_correct * BCE(s_correct, 1-y)
    ///     + w_diff * MSE(s_hall - s_correct, 2y-1)
    ///     + w_contrastive * mean over pairs of max(0, margin - (d_pos - d_neg))
    ///
    /// where d = s_hall - s_correct, d_pos is the hallucinated member and
    /// d_neg the factual one. `pairs` lists (factual, hallucinated) index
    /// pairs within `examples`; members without a partner contribute
    /// nothing to the contrastive term.
    pub fn batch_loss(
        &self,
        g: &mut Graph,
        examples: &[ExampleNodes],
        labels: &[f64],
        pairs: &[(usize, usize)],
        weights: &LossWeights,
    ) -> Result<TensorId> {
        if examples.is_empty() || labels.len() != examples.len() {
            return Err(Error::Data {
                msg: format!(
                    "batch of {} examples with {} labels",
                    examples.len(),
                    labels.len()
                ),
            });
        }
        if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::Data {
                msg: String::from("labels must be 0 or 1"),
            });
        }

        let as_row = |g: &mut Graph, id: TensorId| g.reshape(id, alloc::vec![1, 1]);
        let mut hall_rows = Vec::with_capacity(examples.len());
        let mut corr_rows = Vec::with_capacity(examples.len());
        for ex in examples {
            hall_rows.push(as_row(g, ex.s_hall)?);
            corr_rows.push(as_row(g, ex.s_correct)?);
        }
        let n = examples.len();
        let hall_mat = g.concat_cols(&hall_rows)?;
        let s_hall = g.reshape(hall_mat, alloc::vec![n])?;
        let corr_mat = g.concat_cols(&corr_rows)?;
        let s_correct = g.reshape(corr_mat, alloc::vec![n])?;

        let bce_hall = g.bce_loss(s_hall, labels)?;
        let flipped: Vec<f64> = labels.iter().map(|y| 1.0 - y).collect();
        let bce_correct = g.bce_loss(s_correct, &flipped)?;

        let d_vec = g.sub(s_hall, s_correct)?;
        let target = g.constant(Tensor::vector(
            labels.iter().map(|y| 2.0 * y - 1.0).collect(),
        ));
        let l_diff = g.mse_loss(d_vec, target)?;

        let contrastive = if pairs.is_empty() || weights.contrastive == 0.0 {
            g.constant(Tensor::scalar(0.0))
        } else {
            let mut acc: Option<TensorId> = None;
            for &(fact_idx, hall_idx) in pairs {
                let d_pos = g.sub(examples[hall_idx].s_hall, examples[hall_idx].s_correct)?;
                let d_neg = g.sub(examples[fact_idx].s_hall, examples[fact_idx].s_correct)?;
                let gap = g.sub(d_pos, d_neg)?;
                let neg_gap = g.scale(gap, -1.0);
                let arg = g.add_const(neg_gap, weights.margin);
                let hinge = g.relu(arg);
                acc = Some(match acc {
                    Some(a) => g.add(a, hinge)?,
                    None => hinge,
                });
            }
            g.scale(acc.expect("non-empty pairs"), 1.0 / pairs.len() as f64)
        };

        let t1 = g.scale(bce_hall, weights.hall);
        let t2 = g.scale(bce_correct, weights.correct);
        let t3 = g.scale(l_diff, weights.diff);
        let t4 = g.scale(contrastive, weights.contrastive);
        let s12 = g.add(t1, t2)?;
        let s123 = g.add(s12, t3)?;
        g.add(s123, t4)
    }

    /// Trims trailing padding; attention masking makes the result
    /// identical and the forward pass cheaper.
    pub fn trim_padding(tokens: &[usize]) -> &[usize] {
        let mut end = tokens.len();
        while end > 1 && tokens[end - 1] == PAD_ID {
            end -= 1;
        }
        &tokens[..end]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CLS_ID, SEP_ID};
    use alloc::vec;

    pub(crate) fn tiny_encoder() -> EncoderConfig {
        EncoderConfig {
            vocab_size: 32,
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            d_ff: 16,
            max_len: 12,
            dropout_p: 0.0,
        }
    }

    fn policy(alpha: f64) -> RetentionPolicy {
        RetentionPolicy::new(alpha).unwrap()
    }

    fn tokens() -> Vec<usize> {
        vec![CLS_ID, 5, 6, SEP_ID, 7, 8, SEP_ID, 9, 10, 11]
    }

    #[test]
    fn deterministic_scores_per_seed() {
        let cfg = ModelConfig::new(tiny_encoder(), ModelVariant::PfDfl);
        let m1 = DualModel::init(cfg.clone(), 11).unwrap();
        let m2 = DualModel::init(cfg, 11).unwrap();
        let (s1, _) = m1.scores(&tokens(), policy(0.25)).unwrap();
        let (s2, _) = m2.scores(&tokens(), policy(0.25)).unwrap();
        assert_eq!(s1, s2);
        assert!(s1.s_hall > 0.0 && s1.s_hall < 1.0);
        assert!(s1.s_correct > 0.0 && s1.s_correct < 1.0);
    }

    #[test]
    fn decision_follows_score_difference() {
        let s = PairScores::new(0.7, 0.2);
        assert!(s.decision);
        let s = PairScores::new(0.2, 0.7);
        assert!(!s.decision);
        let s = PairScores::new(0.5, 0.5);
        assert!(!s.decision);
    }

    #[test]
    fn encoders_start_identical() {
        let cfg = ModelConfig::new(tiny_encoder(), ModelVariant::PfDfl);
        let m = DualModel::init(cfg, 3).unwrap();
        // matching parameter names must hold identical values
        let pairs: Vec<(&str, &crate::tensor::Tensor)> = m.store.iter().collect();
        for (name, tensor) in &pairs {
            if let Some(rest) = name.strip_prefix("enc_hall.") {
                let twin = format!("enc_fact.{rest}");
                let other = pairs
                    .iter()
                    .find(|(n, _)| *n == twin)
                    .map(|(_, t)| *t)
                    .expect("twin parameter");
                assert_eq!(tensor.data(), other.data(), "mismatch at {name}");
            }
        }
    }

    #[test]
    fn alpha_one_pf_dfl_matches_pf_only_bitwise() {
        let cfg = ModelConfig::new(tiny_encoder(), ModelVariant::PfDfl);
        let m = DualModel::init(cfg, 7).unwrap();
        let toks = tokens();

        let run = |variant: ModelVariant| {
            let mut g = Graph::new();
            let bound = m.bind(&mut g, false);
            let mut rng = Rng::seed_from(0);
            let nodes = m
                .forward_example_as(variant, &mut g, &bound, &toks, policy(1.0), false, &mut rng)
                .unwrap();
            (
                g.value(nodes.s_hall).item(),
                g.value(nodes.s_correct).item(),
            )
        };
        let (h1, c1) = run(ModelVariant::PfDfl);
        let (h2, c2) = run(ModelVariant::PfOnly);
        assert_eq!(h1.to_bits(), h2.to_bits());
        assert_eq!(c1.to_bits(), c2.to_bits());
    }

    #[test]
    fn baseline_ignores_fusion_parameters() {
        let cfg = ModelConfig::new(tiny_encoder(), ModelVariant::PfDfl);
        let mut m = DualModel::init(cfg, 5).unwrap();
        let toks = tokens();
        let run_baseline = |m: &DualModel| {
            let mut g = Graph::new();
            let bound = m.bind(&mut g, false);
            let mut rng = Rng::seed_from(0);
            let nodes = m
                .forward_example_as(
                    ModelVariant::Baseline,
                    &mut g,
                    &bound,
                    &toks,
                    policy(0.5),
                    false,
                    &mut rng,
                )
                .unwrap();
            (
                g.value(nodes.s_hall).item(),
                g.value(nodes.s_correct).item(),
            )
        };
        let before = run_baseline(&m);
        // perturb every fusion parameter and the factual encoder
        let ids: Vec<crate::params::ParamId> = (0..m.store.len())
            .map(crate::params::ParamId)
            .filter(|&id| {
                let n = m.store.name(id);
                n.starts_with("pf_") || n.starts_with("enc_fact.")
            })
            .collect();
        for id in ids {
            for v in m.store.get_mut(id).data_mut() {
                *v += 3.5;
            }
        }
        let after = run_baseline(&m);
        assert_eq!(before, after);
    }

    #[test]
    fn dfl_only_forward_ignores_logit_free_fusion() {
        let cfg = ModelConfig::new(tiny_encoder(), ModelVariant::DflOnly);
        let m = DualModel::init(cfg, 9).unwrap();
        // dfl model has no layer logits
        assert!(m.pf_hall.as_ref().unwrap().layer_logits.is_none());
        let (s, masks) = m.scores(&tokens(), policy(0.25)).unwrap();
        assert!(s.s_hall > 0.0 && s.s_hall < 1.0);
        assert_eq!(masks.len(), 3);
        for mask in &masks {
            assert_eq!(mask.k, 2); // ceil(0.25 * 8)
        }
        // asking for learned fusion must fail
        let mut g = Graph::new();
        let bound = m.bind(&mut g, false);
        let mut rng = Rng::seed_from(0);
        assert!(m
            .forward_example_as(
                ModelVariant::PfOnly,
                &mut g,
                &bound,
                &tokens(),
                policy(1.0),
                false,
                &mut rng
            )
            .is_err());
    }

    #[test]
    fn baseline_model_cannot_run_dual_variants() {
        let cfg = ModelConfig::new(tiny_encoder(), ModelVariant::Baseline);
        let m = DualModel::init(cfg, 1).unwrap();
        let mut g = Graph::new();
        let bound = m.bind(&mut g, false);
        let mut rng = Rng::seed_from(0);
        assert!(m
            .forward_example_as(
                ModelVariant::PfDfl,
                &mut g,
                &bound,
                &tokens(),
                policy(0.5),
                false,
                &mut rng
            )
            .is_err());
    }

    #[test]
    fn loss_at_indifferent_scores_matches_hand_value() {
        // s_hall = s_correct = 0.5 everywhere: BCE terms 2 ln 2, MSE 1,
        // contrastive hinge max(0, 0.5) weighted by 0.1
        let cfg = ModelConfig::new(tiny_encoder(), ModelVariant::Baseline);
        let m = DualModel::init(cfg, 1).unwrap();
        let mut g = Graph::new();
        let mk = |g: &mut Graph| ExampleNodes {
            s_hall: g.leaf(Tensor::scalar(0.5), false),
            s_correct: g.leaf(Tensor::scalar(0.5), false),
            selected: Vec::new(),
        };
        let examples = vec![mk(&mut g), mk(&mut g)];
        let labels = vec![0.0, 1.0];
        let pairs = vec![(0usize, 1usize)];
        let loss = m
            .batch_loss(&mut g, &examples, &labels, &pairs, &LossWeights::default())
            .unwrap();
        let expect = 2.0 * libm::log(2.0) + 1.0 + 0.1 * 0.5;
        assert!(
            (g.value(loss).item() - expect).abs() < 1e-12,
            "got {}, want {expect}",
            g.value(loss).item()
        );
        // spec's rounded figure
        assert!((g.value(loss).item() - 2.4363).abs() < 1e-4);
    }

    #[test]
    fn perfect_pair_loss_approaches_zero() {
        let cfg = ModelConfig::new(tiny_encoder(), ModelVariant::Baseline);
        let m = DualModel::init(cfg, 1).unwrap();
        let mut g = Graph::new();
        let mk = |g: &mut Graph, h: f64, c: f64| ExampleNodes {
            s_hall: g.leaf(Tensor::scalar(h), false),
            s_correct: g.leaf(Tensor::scalar(c), false),
            selected: Vec::new(),
        };
        let eps = 1e-9;
        let examples = vec![mk(&mut g, eps, 1.0 - eps), mk(&mut g, 1.0 - eps, eps)];
        let labels = vec![0.0, 1.0];
        let pairs = vec![(0usize, 1usize)];
        let loss = m
            .batch_loss(&mut g, &examples, &labels, &pairs, &LossWeights::default())
            .unwrap();
        assert!(g.value(loss).item() < 1e-4, "loss {}", g.value(loss).item());
    }

    #[test]
    fn duplicating_every_sample_leaves_loss_unchanged() {
        let cfg = ModelConfig::new(tiny_encoder(), ModelVariant::Baseline);
        let m = DualModel::init(cfg, 1).unwrap();
        let mut g = Graph::new();
        let mk = |g: &mut Graph, h: f64, c: f64| ExampleNodes {
            s_hall: g.leaf(Tensor::scalar(h), false),
            s_correct: g.leaf(Tensor::scalar(c), false),
            selected: Vec::new(),
        };
        let base = [(0.3, 0.6), (0.8, 0.4)];
        let single: Vec<ExampleNodes> =
            base.iter().map(|&(h, c)| mk(&mut g, h, c)).collect();
        let double: Vec<ExampleNodes> = base
            .iter()
            .chain(base.iter())
            .map(|&(h, c)| mk(&mut g, h, c))
            .collect();
        let w = LossWeights::default();
        let l1 = m
            .batch_loss(&mut g, &single, &[0.0, 1.0], &[(0, 1)], &w)
            .unwrap();
        let l2 = m
            .batch_loss(
                &mut g,
                &double,
                &[0.0, 1.0, 0.0, 1.0],
                &[(0, 1), (2, 3)],
                &w,
            )
            .unwrap();
        assert!((g.value(l1).item() - g.value(l2).item()).abs() < 1e-12);
    }

    #[test]
    fn labels_outside_zero_one_are_a_data_error() {
        let cfg = ModelConfig::new(tiny_encoder(), ModelVariant::Baseline);
        let m = DualModel::init(cfg, 1).unwrap();
        let mut g = Graph::new();
        let ex = ExampleNodes {
            s_hall: g.leaf(Tensor::scalar(0.5), false),
            s_correct: g.leaf(Tensor::scalar(0.5), false),
            selected: Vec::new(),
        };
        let err = m.batch_loss(&mut g, &[ex], &[0.5], &[], &LossWeights::default());
        assert!(matches!(err, Err(Error::Data { .. })));
    }

    #[test]
    fn trim_padding_preserves_content() {
        let toks = vec![CLS_ID, 5, SEP_ID, PAD_ID, PAD_ID];
        assert_eq!(DualModel::trim_padding(&toks), &[CLS_ID, 5, SEP_ID]);
        let all_pad = vec![PAD_ID, PAD_ID];
        assert_eq!(DualModel::trim_padding(&all_pad), &[PAD_ID]);
    }

    #[test]
    fn shared_fusion_feeds_both_heads_one_vector() {
        let mut cfg = ModelConfig::new(tiny_encoder(), ModelVariant::PfDfl);
        cfg.shared_fusion = true;
        let m = DualModel::init(cfg, 13).unwrap();
        let (s, _) = m.scores(&tokens(), policy(0.5)).unwrap();
        assert!(s.s_hall > 0.0 && s.s_hall < 1.0);
    }

    #[test]
    fn per_sample_masks_differ_across_inputs() {
        let cfg = ModelConfig::new(tiny_encoder(), ModelVariant::PfDfl);
        let m = DualModel::init(cfg, 23).unwrap();
        // nudge the factual encoder so diffs are nonzero
        let ids: Vec<crate::params::ParamId> = (0..m.store.len())
            .map(crate::params::ParamId)
            .filter(|&id| m.store.name(id).starts_with("enc_fact."))
            .collect();
        let mut m = m;
        let mut rng = Rng::seed_from(99);
        for id in ids {
            for v in m.store.get_mut(id).data_mut() {
                *v += 0.5 * rng.normal();
            }
        }
        let (_, masks_a) = m.scores(&tokens(), policy(0.25)).unwrap();
        let other = vec![CLS_ID, 20, 21, SEP_ID, 22, 23, SEP_ID, 24, 25, 26];
        let (_, masks_b) = m.scores(&other, policy(0.25)).unwrap();
        // the embedding tap (layer 0) sees only CLS + position 0 and is
        // input-independent; deeper taps must vary with the input
        assert!(
            masks_a
                .iter()
                .zip(&masks_b)
                .skip(1)
                .any(|(a, b)| a.indices != b.indices),
            "expected at least one deep layer to select different features"
        );
    }
}
