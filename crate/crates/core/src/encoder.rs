//! Minimal bidirectional transformer encoder that exposes the position-0
//! ("CLS") representation at every depth: after the embedding layer and
//! after each transformer layer, n_layers + 1 taps in total.
//!
//! Blocks are pre-norm residual with learned absolute position
//! embeddings. Padding positions are attention-masked out, so trailing
//! padding never changes any tap.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::PAD_ID;
use crate::error::{Error, Result};
use crate::params::{Binding, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Graph, Tensor, TensorId};

/// Weight initialization scale for projection matrices.
const INIT_STD: f64 = 0.02;
/// Token embeddings start larger than position embeddings so attention
/// scores are content-dominated from the first step.
const TOK_EMB_STD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub dropout_p: f64,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Error::InvalidArgument {
            op: "encoder_config",
            msg,
        };
        if self.vocab_size == 0 || self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return Err(bad(format!("all dimensions must be positive: {self:?}")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(bad(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.max_len < 3 {
            return Err(bad(format!(
                "max_len {} too small for CLS + token + SEP",
                self.max_len
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(bad(format!("dropout_p {} outside [0,1)", self.dropout_p)));
        }
        Ok(())
    }

    /// Number of hidden-state taps: embedding output plus each layer.
    pub fn n_taps(&self) -> usize {
        self.n_layers + 1
    }

    /// Closed-form parameter count; must equal runtime enumeration exactly.
    ///
    /// embeddings: vocab*D + max_len*D
    /// per layer:  2 LayerNorms (2*2D), Q/K/V/O projections (4*(D*D+D)),
    ///             feed-forward (D*d_ff + d_ff + d_ff*D + D)
    pub fn param_count(&self) -> usize {
        let d = self.d_model;
        let embeddings = self.vocab_size * d + self.max_len * d;
        let per_layer =
            2 * 2 * d + 4 * (d * d + d) + (d * self.d_ff + self.d_ff + self.d_ff * d + d);
        embeddings + self.n_layers * per_layer
    }
}

#[derive(Debug, Clone)]
pub struct LayerParams {
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
    pub w_ff1: ParamId,
    pub b_ff1: ParamId,
    pub w_ff2: ParamId,
    pub b_ff2: ParamId,
}

#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub tok_emb: ParamId,
    pub pos_emb: ParamId,
    pub layers: Vec<LayerParams>,
}

impl EncoderParams {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &EncoderConfig,
        rng: &mut Rng,
    ) -> EncoderParams {
        let d = cfg.d_model;
        let tok_emb = store.add(
            format!("{prefix}.tok_emb"),
            Tensor::randn(alloc::vec![cfg.vocab_size, d], TOK_EMB_STD, rng),
        );
        let pos_emb = store.add(
            format!("{prefix}.pos_emb"),
            Tensor::randn(alloc::vec![cfg.max_len, d], INIT_STD, rng),
        );
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let w = |store: &mut ParamStore, rng: &mut Rng, name: &str, r: usize, c: usize| {
                store.add(
                    format!("{prefix}.layer{l}.{name}"),
                    Tensor::randn(alloc::vec![r, c], INIT_STD, rng),
                )
            };
            let zeros = |store: &mut ParamStore, name: &str, n: usize| {
                store.add(
                    format!("{prefix}.layer{l}.{name}"),
                    Tensor::zeros(alloc::vec![n]),
                )
            };
            let ones = |store: &mut ParamStore, name: &str, n: usize| {
                store.add(
                    format!("{prefix}.layer{l}.{name}"),
                    Tensor::full(alloc::vec![n], 1.0),
                )
            };
            let ln1_gain = ones(store, "ln1.gain", d);
            let ln1_bias = zeros(store, "ln1.bias", d);
            // Q, K and V start as identity maps (plus noise): attention
            // scores then begin as the dot-product kernel of the
            // normalized stream, which scores same-content positions
            // highest from the first step. Random projections here bury
            // that content-matching prior and the toy-scale budget is
            // nowhere near enough steps to rediscover it.
            let eye = |rng: &mut Rng| {
                let mut t = Tensor::randn(alloc::vec![d, d], INIT_STD, rng);
                for i in 0..d {
                    t.data_mut()[i * d + i] += 1.0;
                }
                t
            };
            let wq = store.add(format!("{prefix}.layer{l}.attn.wq"), eye(rng));
            let bq = zeros(store, "attn.bq", d);
            let wk = store.add(format!("{prefix}.layer{l}.attn.wk"), eye(rng));
            let bk = zeros(store, "attn.bk", d);
            let wv = store.add(format!("{prefix}.layer{l}.attn.wv"), eye(rng));
            layers.push(LayerParams {
                ln1_gain,
                ln1_bias,
                wq,
                bq,
                wk,
                bk,
                wv,
                bv: zeros(store, "attn.bv", d),
                wo: w(store, rng, "attn.wo", d, d),
                bo: zeros(store, "attn.bo", d),
                ln2_gain: ones(store, "ln2.gain", d),
                ln2_bias: zeros(store, "ln2.bias", d),
                w_ff1: w(store, rng, "ff.w1", d, cfg.d_ff),
                b_ff1: zeros(store, "ff.b1", cfg.d_ff),
                w_ff2: w(store, rng, "ff.w2", cfg.d_ff, d),
                b_ff2: zeros(store, "ff.b2", d),
            });
        }
        EncoderParams {
            tok_emb,
            pos_emb,
            layers,
        }
    }
}

/// Ordered per-depth CLS representations: n_layers + 1 tensors of `[D]`.
#[derive(Debug, Clone)]
pub struct HiddenStack {
    pub states: Vec<TensorId>,
}

/// Forward output: the CLS tap stack plus the post-softmax attention
/// matrices (one per layer and head) for inspection in tests.
pub struct EncoderOutput {
    pub stack: HiddenStack,
    pub attn_probs: Vec<TensorId>,
}

/// Runs the encoder over `tokens` on graph `g` with parameters bound in
/// `bound`. Sequences longer than `max_len` are truncated; ids at or
/// beyond `vocab_size` are a vocabulary error. Positions holding `PAD_ID`
/// are masked out of attention.
pub fn forward(
    g: &mut Graph,
    bound: &Binding,
    params: &EncoderParams,
    cfg: &EncoderConfig,
    tokens: &[usize],
    train: bool,
    rng: &mut Rng,
) -> Result<EncoderOutput> {
    if tokens.is_empty() {
        return Err(Error::InvalidArgument {
            op: "encoder_forward",
            msg: alloc::string::String::from("empty token sequence"),
        });
    }
    let tokens = if tokens.len() > cfg.max_len {
        &tokens[..cfg.max_len]
    } else {
        tokens
    };
    for &t in tokens {
        if t >= cfg.vocab_size {
            return Err(Error::Vocabulary {
                token_id: t,
                vocab_size: cfg.vocab_size,
            });
        }
    }
    let seq_len = tokens.len();
    let keep: Vec<bool> = tokens.iter().map(|&t| t != PAD_ID).collect();
    let positions: Vec<usize> = (0..seq_len).collect();

    let tok = g.embed(bound.id(params.tok_emb), tokens)?;
    let pos = g.embed(bound.id(params.pos_emb), &positions)?;
    let mut x = g.add(tok, pos)?;

    let mut states = Vec::with_capacity(cfg.n_layers + 1);
    states.push(g.row(x, 0)?);
    let mut attn_probs = Vec::new();

    let d = cfg.d_model;
    let d_head = d / cfg.n_heads;
    let scale = 1.0 / libm::sqrt(d_head as f64);

    for layer in &params.layers {
        // attention sublayer, pre-norm
        let h = g.layernorm(x, bound.id(layer.ln1_gain), bound.id(layer.ln1_bias))?;
        let q = g.matmul(h, bound.id(layer.wq))?;
        let q = g.add_bias(q, bound.id(layer.bq))?;
        let k = g.matmul(h, bound.id(layer.wk))?;
        let k = g.add_bias(k, bound.id(layer.bk))?;
        let v = g.matmul(h, bound.id(layer.wv))?;
        let v = g.add_bias(v, bound.id(layer.bv))?;

        let mut head_ctx = Vec::with_capacity(cfg.n_heads);
        for hd in 0..cfg.n_heads {
            let qh = g.slice_cols(q, hd * d_head, d_head)?;
            let kh = g.slice_cols(k, hd * d_head, d_head)?;
            let vh = g.slice_cols(v, hd * d_head, d_head)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, scale);
            let probs = g.masked_row_softmax(scores, &keep)?;
            attn_probs.push(probs);
            head_ctx.push(g.matmul(probs, vh)?);
        }
        let ctx = g.concat_cols(&head_ctx)?;
        let attn_out = g.matmul(ctx, bound.id(layer.wo))?;
        let attn_out = g.add_bias(attn_out, bound.id(layer.bo))?;
        let attn_out = g.dropout(attn_out, cfg.dropout_p, train, rng)?;
        x = g.add(x, attn_out)?;

        // feed-forward sublayer, pre-norm
        let h2 = g.layernorm(x, bound.id(layer.ln2_gain), bound.id(layer.ln2_bias))?;
        let ff = g.matmul(h2, bound.id(layer.w_ff1))?;
        let ff = g.add_bias(ff, bound.id(layer.b_ff1))?;
        let ff = g.gelu(ff);
        let ff = g.matmul(ff, bound.id(layer.w_ff2))?;
        let ff = g.add_bias(ff, bound.id(layer.b_ff2))?;
        let ff = g.dropout(ff, cfg.dropout_p, train, rng)?;
        x = g.add(x, ff)?;

        states.push(g.row(x, 0)?);
    }

    Ok(EncoderOutput {
        stack: HiddenStack { states },
        attn_probs,
    })
}
