//! Projected fusion: per-layer linear projection into a common space,
//! learnable layer-importance logits normalized by softmax, and a
//! weighted sum over layers.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::{Binding, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Graph, Tensor, TensorId};

/// Projection weights plus layer logits for one fusion branch.
///
/// Layer logits are zero-initialized, so fusion starts from uniform
/// weights. `layer_logits` is `None` when fusion is fixed uniform (the
/// DFL-only variant); then no logit parameter exists at all.
#[derive(Debug, Clone)]
pub struct PfParams {
    pub weights: Vec<ParamId>,
    /// One bias per layer when projection bias is enabled.
    pub biases: Option<Vec<ParamId>>,
    pub layer_logits: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl PfParams {
    /// Allocates projections for `n_taps` layer taps (embedding plus each
    /// transformer layer).
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        n_taps: usize,
        d_in: usize,
        d_out: usize,
        projection_bias: bool,
        learned_logits: bool,
        rng: &mut Rng,
    ) -> PfParams {
        let mut weights = Vec::with_capacity(n_taps);
        let mut biases = projection_bias.then(|| Vec::with_capacity(n_taps));
        for i in 0..n_taps {
            // identity-dominated init (square case): the projection starts
            // as a pass-through so gradients reach the encoders at full
            // strength; a small-random init attenuates the learning signal
            // below the batch noise floor at toy scale
            let mut w = Tensor::randn(alloc::vec![d_in, d_out], 0.02, rng);
            for j in 0..d_in.min(d_out) {
                w.data_mut()[j * d_out + j] += 1.0;
            }
            weights.push(store.add(format!("{prefix}.proj{i}.w"), w));
            if let Some(bs) = biases.as_mut() {
                bs.push(store.add(
                    format!("{prefix}.proj{i}.b"),
                    Tensor::zeros(alloc::vec![d_out]),
                ));
            }
        }
        let layer_logits = learned_logits.then(|| {
            store.add(
                format!("{prefix}.layer_logits"),
                Tensor::zeros(alloc::vec![n_taps]),
            )
        });
        PfParams {
            weights,
            biases,
            layer_logits,
            d_in,
            d_out,
        }
    }

    pub fn n_taps(&self) -> usize {
        self.weights.len()
    }

    /// p = relu(h W + b) for the given layer's projection.
    pub fn project(
        &self,
        g: &mut Graph,
        bound: &Binding,
        h: TensorId,
        layer_index: usize,
    ) -> Result<TensorId> {
        if layer_index >= self.n_taps() {
            return Err(Error::InvalidArgument {
                op: "pf_project",
                msg: format!("layer index {layer_index} out of {}", self.n_taps()),
            });
        }
        let row = g.reshape(h, alloc::vec![1, self.d_in])?;
        let mut p = g.matmul(row, bound.id(self.weights[layer_index]))?;
        if let Some(bs) = &self.biases {
            p = g.add_bias(p, bound.id(bs[layer_index]))?;
        }
        let p = g.reshape(p, alloc::vec![self.d_out])?;
        Ok(g.relu(p))
    }

    /// Fuses projected taps: softmax over the learned logits when present,
    /// otherwise fixed uniform weights.
    pub fn fuse_all(
        &self,
        g: &mut Graph,
        bound: &Binding,
        projected: &[TensorId],
    ) -> Result<TensorId> {
        match self.layer_logits {
            Some(logits) => fuse(g, projected, bound.id(logits)),
            None => {
                let n = projected.len();
                if n == 0 {
                    return Err(Error::InvalidArgument {
                        op: "pf_fuse",
                        msg: String::from("empty projection list"),
                    });
                }
                let w = g.constant(Tensor::full(alloc::vec![n], 1.0 / n as f64));
                g.weighted_sum(projected, w)
            }
        }
    }

    /// Softmax-normalized layer weights in layer order, read from the
    /// current parameter values (uniform when fusion is fixed).
    pub fn export_layer_weights(&self, store: &ParamStore) -> Vec<f64> {
        match self.layer_logits {
            Some(id) => softmax_values(store.get(id).data()),
            None => {
                let n = self.n_taps();
                alloc::vec![1.0 / n as f64; n]
            }
        }
    }
}

/// sum_i softmax(logits)_i * projected_i.
pub fn fuse(g: &mut Graph, projected: &[TensorId], layer_logits: TensorId) -> Result<TensorId> {
    if projected.is_empty() {
        return Err(Error::InvalidArgument {
            op: "pf_fuse",
            msg: String::from("empty projection list"),
        });
    }
    let weights = g.softmax(layer_logits)?;
    g.weighted_sum(projected, weights)
}

/// Plain softmax over a slice (max-subtracted), used for weight export.
pub fn softmax_values(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = xs.iter().map(|&x| libm::exp(x - max)).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}
