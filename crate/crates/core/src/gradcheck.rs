//! Finite-difference gradient verification.
//!
//! Central differences with step `h` give an autodiff-independent oracle:
//! for a scalar function `f` of a parameter vector, df/dx_i is estimated
//! as `(f(x + h e_i) - f(x - h e_i)) / 2h`. The comparison metric is
//! relative error with an absolute floor so that near-zero gradients do
//! not blow up the ratio.
//!
//! `abs` and `relu` have kinks at 0 where the subgradient convention
//! (0 at 0) disagrees with any finite difference; checks skip coordinates
//! whose input sits within `KINK_GUARD` of a kink.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::{Graph, Tensor, TensorId};

/// Step size for central differences.
pub const FD_STEP: f64 = 1e-5;
/// Maximum allowed relative error between autodiff and finite differences.
pub const FD_TOLERANCE: f64 = 1e-4;
/// Inputs closer than this to a kink (0 for abs/relu) are skipped.
pub const KINK_GUARD: f64 = 1e-3;

/// One failed gradient comparison.
#[derive(Debug, Clone)]
pub struct GradMismatch {
    pub case: String,
    pub coordinate: usize,
    pub autodiff: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Relative error with an absolute floor of 1.0 in the denominator scale.
pub fn rel_error(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(1.0);
    (a - b).abs() / denom
}

/// Checks autodiff gradients of `build` against central finite differences.
///
/// `build` receives a graph plus leaf ids for each input tensor and must
/// return a scalar loss id. `inputs` supplies the base points; every
/// coordinate of every input is perturbed unless `skip` returns true for
/// that (input, coordinate) pair.
pub fn check_gradients<F>(
    case: &str,
    inputs: &[Tensor],
    mut build: F,
    skip: &dyn Fn(usize, usize, f64) -> bool,
) -> Result<Vec<GradMismatch>>
where
    F: FnMut(&mut Graph, &[TensorId]) -> Result<TensorId>,
{
    // autodiff pass
    let mut g = Graph::new();
    let ids: Vec<TensorId> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = build(&mut g, &ids)?;
    g.backward(loss)?;
    let autodiff: Vec<Vec<f64>> = ids.iter().map(|&id| g.grad(id).to_vec()).collect();

    let mut mismatches = Vec::new();
    for (ti, base) in inputs.iter().enumerate() {
        for ci in 0..base.numel() {
            if skip(ti, ci, base.data()[ci]) {
                continue;
            }
            let mut eval = |delta: f64| -> Result<f64> {
                let mut g = Graph::new();
                let ids: Vec<TensorId> = inputs
                    .iter()
                    .enumerate()
                    .map(|(i, t)| {
                        let mut t = t.clone();
                        if i == ti {
                            t.data_mut()[ci] += delta;
                        }
                        g.leaf(t, false)
                    })
                    .collect();
                let loss = build(&mut g, &ids)?;
                Ok(g.value(loss).item())
            };
            let plus = eval(FD_STEP)?;
            let minus = eval(-FD_STEP)?;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let got = autodiff[ti][ci];
            let err = rel_error(got, numeric);
            if err > FD_TOLERANCE {
                mismatches.push(GradMismatch {
                    case: format!("{case}[input {ti}]"),
                    coordinate: ci,
                    autodiff: got,
                    numeric,
                    rel_error: err,
                });
            }
        }
    }
    Ok(mismatches)
}

/// Randomized gradient checks for every differentiable engine operation.
/// Returns all mismatches across `trials` random cases per operation.
pub fn check_engine_ops(trials: usize, seed: u64) -> Result<Vec<GradMismatch>> {
    let mut rng = Rng::seed_from(seed);
    let mut bad = Vec::new();
    let no_skip = |_: usize, _: usize, _: f64| false;
    let kink_skip = |_: usize, _: usize, x: f64| x.abs() < KINK_GUARD;

    for trial in 0..trials {
        let r = &mut rng;
        let rand_t = |shape: Vec<usize>, r: &mut Rng| {
            let numel: usize = shape.iter().product();
            Tensor::new(shape, (0..numel).map(|_| r.range(-2.0, 2.0)).collect()).unwrap()
        };

        // matmul + sum
        let a = rand_t(alloc::vec![3, 4], r);
        let b = rand_t(alloc::vec![4, 2], r);
        bad.extend(check_gradients(
            &format!("matmul/{trial}"),
            &[a, b],
            |g, ids| {
                let c = g.matmul(ids[0], ids[1])?;
                Ok(g.sum(c))
            },
            &no_skip,
        )?);

        // elementwise chain: mul, add, sub
        let a = rand_t(alloc::vec![6], r);
        let b = rand_t(alloc::vec![6], r);
        bad.extend(check_gradients(
            &format!("elementwise/{trial}"),
            &[a, b],
            |g, ids| {
                let p = g.mul(ids[0], ids[1])?;
                let s = g.add(p, ids[0])?;
                let d = g.sub(s, ids[1])?;
                Ok(g.sum(d))
            },
            &no_skip,
        )?);

        // abs (skip kink region)
        let a = rand_t(alloc::vec![8], r);
        bad.extend(check_gradients(
            &format!("abs/{trial}"),
            &[a],
            |g, ids| {
                let y = g.abs(ids[0]);
                Ok(g.sum(y))
            },
            &kink_skip,
        )?);

        // relu (skip kink region)
        let a = rand_t(alloc::vec![8], r);
        bad.extend(check_gradients(
            &format!("relu/{trial}"),
            &[a],
            |g, ids| {
                let y = g.relu(ids[0]);
                Ok(g.sum(y))
            },
            &kink_skip,
        )?);

        // gelu
        let a = rand_t(alloc::vec![8], r);
        bad.extend(check_gradients(
            &format!("gelu/{trial}"),
            &[a],
            |g, ids| {
                let y = g.gelu(ids[0]);
                Ok(g.sum(y))
            },
            &no_skip,
        )?);

        // sigmoid then bce against fixed targets
        let a = rand_t(alloc::vec![6], r);
        let targets: Vec<f64> = (0..6).map(|_| if r.bernoulli(0.5) { 1.0 } else { 0.0 }).collect();
        bad.extend(check_gradients(
            &format!("sigmoid+bce/{trial}"),
            &[a],
            |g, ids| {
                let p = g.sigmoid(ids[0]);
                g.bce_loss(p, &targets)
            },
            &no_skip,
        )?);

        // softmax: weighted projection onto a fixed random direction
        let a = rand_t(alloc::vec![7], r);
        let probe = rand_t(alloc::vec![7], r);
        let probe_vals = probe.data().to_vec();
        bad.extend(check_gradients(
            &format!("softmax/{trial}"),
            &[a],
            |g, ids| {
                let y = g.softmax(ids[0])?;
                let w = g.constant(Tensor::vector(probe_vals.clone()));
                let p = g.mul(y, w)?;
                Ok(g.sum(p))
            },
            &no_skip,
        )?);

        // layernorm with affine params
        let x = rand_t(alloc::vec![2, 5], r);
        let gain = rand_t(alloc::vec![5], r);
        let bias = rand_t(alloc::vec![5], r);
        bad.extend(check_gradients(
            &format!("layernorm/{trial}"),
            &[x, gain, bias],
            |g, ids| {
                let y = g.layernorm(ids[0], ids[1], ids[2])?;
                let sq = g.mul(y, y)?;
                Ok(g.sum(sq))
            },
            &no_skip,
        )?);

        // mse between two tensors
        let a = rand_t(alloc::vec![5], r);
        let b = rand_t(alloc::vec![5], r);
        bad.extend(check_gradients(
            &format!("mse/{trial}"),
            &[a, b],
            |g, ids| g.mse_loss(ids[0], ids[1]),
            &no_skip,
        )?);

        // weighted_sum over three items
        let i0 = rand_t(alloc::vec![4], r);
        let i1 = rand_t(alloc::vec![4], r);
        let i2 = rand_t(alloc::vec![4], r);
        let w = rand_t(alloc::vec![3], r);
        bad.extend(check_gradients(
            &format!("weighted_sum/{trial}"),
            &[i0, i1, i2, w],
            |g, ids| {
                let y = g.weighted_sum(&[ids[0], ids[1], ids[2]], ids[3])?;
                let sq = g.mul(y, y)?;
                Ok(g.sum(sq))
            },
            &no_skip,
        )?);

        // masked row softmax through a quadratic readout
        let x = rand_t(alloc::vec![3, 5], r);
        let keep = [true, true, false, true, true];
        bad.extend(check_gradients(
            &format!("masked_softmax/{trial}"),
            &[x],
            |g, ids| {
                let y = g.masked_row_softmax(ids[0], &keep)?;
                let sq = g.mul(y, y)?;
                Ok(g.sum(sq))
            },
            &no_skip,
        )?);

        // bias add + slice + concat + transpose chain
        let m = rand_t(alloc::vec![3, 4], r);
        let bias = rand_t(alloc::vec![4], r);
        bad.extend(check_gradients(
            &format!("structural/{trial}"),
            &[m, bias],
            |g, ids| {
                let y = g.add_bias(ids[0], ids[1])?;
                let left = g.slice_cols(y, 0, 2)?;
                let right = g.slice_cols(y, 2, 2)?;
                let swapped = g.concat_cols(&[right, left])?;
                let t = g.transpose(swapped)?;
                let sq = g.mul(t, t)?;
                Ok(g.sum(sq))
            },
            &no_skip,
        )?);

        // embedding gather
        let table = rand_t(alloc::vec![5, 3], r);
        let ids_vec: Vec<usize> = (0..4).map(|_| r.below(5)).collect();
        bad.extend(check_gradients(
            &format!("embed/{trial}"),
            &[table],
            |g, ids| {
                let e = g.embed(ids[0], &ids_vec)?;
                let sq = g.mul(e, e)?;
                Ok(g.sum(sq))
            },
            &no_skip,
        )?);
    }
    Ok(bad)
}

/// Finite-difference check of every parameter gradient of a small
/// dual-encoder model (2 layers, D=16, one matched pair of length-16
/// sequences, full combined loss).
///
/// The factual encoder is jittered away from the hallucination encoder:
/// at the identical-initialization point every |h_hall - h_fact| is zero,
/// which puts the abs subgradient and the top-k tie-break at their
/// non-generic kinks where no finite difference can agree.
pub fn check_full_model(seed: u64) -> Result<Vec<GradMismatch>> {
    use crate::data::{CLS_ID, SEP_ID};
    use crate::dfl::RetentionPolicy;
    use crate::encoder::EncoderConfig;
    use crate::model::{DualModel, LossWeights, ModelConfig, ModelVariant};

    let enc = EncoderConfig {
        vocab_size: 64,
        d_model: 16,
        n_layers: 2,
        n_heads: 2,
        d_ff: 32,
        max_len: 16,
        dropout_p: 0.0,
    };
    let mut config = ModelConfig::new(enc, ModelVariant::PfDfl);
    config.head_dropout = 0.0;
    let mut model = DualModel::init(config, seed)?;

    let mut jitter = Rng::seed_from(seed ^ 0x9e37_79b9);
    for i in 0..model.store.len() {
        let id = crate::params::ParamId(i);
        if model.store.name(id).starts_with("enc_fact.") {
            for v in model.store.get_mut(id).data_mut() {
                *v += 0.1 * jitter.normal();
            }
        }
    }

    let mut toks = Rng::seed_from(seed ^ 0x5bd1_e995);
    let mut mk_tokens = |_: usize| -> Vec<usize> {
        let mut t = alloc::vec![CLS_ID];
        t.extend((0..14).map(|_| 4 + toks.below(60)));
        t.push(SEP_ID);
        t
    };
    let pair = [mk_tokens(0), mk_tokens(1)];
    let labels = [0.0, 1.0];
    let policy = RetentionPolicy::new(0.25)?;
    let weights = LossWeights::default();

    let grads: Vec<Vec<f64>> = {
        let mut g = Graph::new();
        let bound = model.bind(&mut g, true);
        let mut rng = Rng::seed_from(0);
        let mut nodes = Vec::with_capacity(2);
        for tokens in &pair {
            nodes.push(model.forward_example(&mut g, &bound, tokens, policy, false, &mut rng)?);
        }
        let loss = model.batch_loss(&mut g, &nodes, &labels, &[(0, 1)], &weights)?;
        g.backward(loss)?;
        bound.ids().iter().map(|&id| g.grad(id).to_vec()).collect()
    };

    let forward_only = |model: &DualModel| -> Result<f64> {
        let mut g = Graph::new();
        let bound = model.bind(&mut g, false);
        let mut rng = Rng::seed_from(0);
        let mut nodes = Vec::with_capacity(2);
        for tokens in &pair {
            nodes.push(model.forward_example(&mut g, &bound, tokens, policy, false, &mut rng)?);
        }
        let loss = model.batch_loss(&mut g, &nodes, &labels, &[(0, 1)], &weights)?;
        Ok(g.value(loss).item())
    };

    let mut mismatches = Vec::new();
    for p in 0..model.store.len() {
        let id = crate::params::ParamId(p);
        let numel = model.store.get(id).numel();
        let name: String = model.store.name(id).into();
        for c in 0..numel {
            let original = model.store.get(id).data()[c];
            model.store.get_mut(id).data_mut()[c] = original + FD_STEP;
            let plus = forward_only(&model)?;
            model.store.get_mut(id).data_mut()[c] = original - FD_STEP;
            let minus = forward_only(&model)?;
            model.store.get_mut(id).data_mut()[c] = original;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let got = grads[p][c];
            let err = rel_error(got, numeric);
            if err > FD_TOLERANCE {
                mismatches.push(GradMismatch {
                    case: name.clone(),
                    coordinate: c,
                    autodiff: got,
                    numeric,
                    rel_error: err,
                });
            }
        }
    }
    Ok(mismatches)
}
