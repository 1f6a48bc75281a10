//! Differential feature learning: per-layer absolute differences between
//! the two encoder branches, per-sample top-k selection, and masking of
//! both branches with the same mask.
//!
//! Selection is a stop-gradient: the mask enters the tape as a constant,
//! so after backward the masked-out coordinates of both branches hold
//! exactly zero gradient.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{topk_indices, Graph, Tensor, TensorId};

/// Binary selection of exactly `k` of `d` feature dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureMask {
    pub layer_index: usize,
    /// Selected dimensions, strictly increasing.
    pub indices: Vec<usize>,
    pub k: usize,
    pub d: usize,
}

impl FeatureMask {
    /// 0/1 vector view of the mask.
    pub fn dense(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.d];
        for &i in &self.indices {
            m[i] = 1.0;
        }
        m
    }
}

/// Feature retention ratio alpha in (0, 1]; k = max(1, ceil(alpha * d)).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetentionPolicy {
    alpha: f64,
}

impl RetentionPolicy {
    pub fn new(alpha: f64) -> Result<RetentionPolicy> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidArgument {
                op: "retention_policy",
                msg: alloc::format!("alpha={alpha} outside (0, 1]"),
            });
        }
        Ok(RetentionPolicy { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Number of dimensions retained for feature width `d`.
    pub fn k_for(&self, d: usize) -> usize {
        let k = libm::ceil(self.alpha * d as f64) as usize;
        k.clamp(1, d)
    }
}

/// Elementwise absolute difference |h_hall - h_fact|.
pub fn diff(g: &mut Graph, h_hall: TensorId, h_fact: TensorId) -> Result<TensorId> {
    let d = g.sub(h_hall, h_fact)?;
    Ok(g.abs(d))
}

/// Selects the top-k dimensions of `delta` under `policy`. Reads the
/// forward value only; gradients never flow through the selection.
pub fn select(
    g: &Graph,
    delta: TensorId,
    layer_index: usize,
    policy: RetentionPolicy,
) -> Result<FeatureMask> {
    let value = g.value(delta);
    let d = value.numel();
    let k = policy.k_for(d);
    let indices = topk_indices(value.data(), k)?;
    Ok(FeatureMask {
        layer_index,
        indices,
        k,
        d,
    })
}

/// Zeroes every non-selected coordinate of `h`; selected coordinates pass
/// through bit-identical. Both branches must be given the same mask.
pub fn apply(g: &mut Graph, h: TensorId, mask: &FeatureMask) -> Result<TensorId> {
    if g.value(h).numel() != mask.d {
        return Err(Error::ShapeMismatch {
            op: "dfl_apply",
            lhs: g.value(h).shape().to_vec(),
            rhs: vec![mask.d],
        });
    }
    let m = g.constant(Tensor::new(g.value(h).shape().to_vec(), mask.dense())?);
    g.mul(h, m)
}
