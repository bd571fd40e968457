//! Scaled dot-product attention and the three attention stages of the
//! model.
//!
//! All stages share one primitive: `softmax(Q K^T / sqrt(d)) V` with
//! bias-free learned projections for Q, K and V. Invalid (padded) keys are
//! excluded twice over: their logits get a large negative additive bias
//! before the softmax, and their weights are multiplied by an exact zero
//! afterwards, so no padded slot can leak probability mass.
//!
//! Row reductions on the attention path (softmax denominators and the
//! weighted-value aggregation) accumulate in a canonical value order, so
//! permuting shots within a segment permutes the outputs bit-for-bit
//! rather than perturbing them.
//!
//! The three stages:
//! * local self-attention: shots of one segment attend to each other,
//!   batched over segments;
//! * query-guided segment attention: the query embedding is the only
//!   attention query; each segment's shots are aggregated into a single
//!   query-conditioned segment feature;
//! * global attention: every shot attends over all segment features,
//!   mixing information across segment boundaries.

use crate::error::{Error, Result};
use crate::layers::{Linear, VisitParams};
use crate::tensor::rng::SplitMix64;
use crate::tensor::{Tape, TensorId};

/// Additive logit bias applied to masked keys before the softmax.
pub const MASK_BIAS: f64 = -1e9;

/// Validity of reduced-resolution temporal slots after pooling.
///
/// `slot_valid[s][r]` is true when slot `r` of segment `s` covers at least
/// one real (unpadded) shot; `seg_valid[s]` is true when the segment has
/// at least one valid slot.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedMask {
    pub slot_valid: Vec<Vec<bool>>,
    pub seg_valid: Vec<bool>,
}

impl ReducedMask {
    pub fn from_slots(slot_valid: Vec<Vec<bool>>) -> Result<ReducedMask> {
        if slot_valid.is_empty() {
            return Err(Error::Contract("reduced mask with zero segments".into()));
        }
        let r = slot_valid[0].len();
        if slot_valid.iter().any(|row| row.len() != r) {
            return Err(Error::Contract(
                "reduced mask rows have differing slot counts".into(),
            ));
        }
        let seg_valid = slot_valid.iter().map(|row| row.iter().any(|&v| v)).collect();
        Ok(ReducedMask {
            slot_valid,
            seg_valid,
        })
    }

    pub fn all_valid(segments: usize, slots: usize) -> ReducedMask {
        ReducedMask {
            slot_valid: vec![vec![true; slots]; segments],
            seg_valid: vec![true; segments],
        }
    }

    pub fn segments(&self) -> usize {
        self.slot_valid.len()
    }

    pub fn slots(&self) -> usize {
        self.slot_valid[0].len()
    }
}

/// Constant mask tensors for one attention call: an additive logit bias
/// and a 0/1 post-softmax multiplier, both shaped like the weight matrix.
#[derive(Debug, Clone, Copy)]
pub struct KeyMask {
    pub bias: TensorId,
    pub keep: TensorId,
}

impl KeyMask {
    /// Builds mask tensors of shape `[groups, lq, lk]` from per-group key
    /// validity. Every group must keep at least one valid key; a fully
    /// masked group would make its softmax rows meaningless.
    pub fn per_group(tape: &mut Tape, valid: &[Vec<bool>], lq: usize) -> Result<KeyMask> {
        let groups = valid.len();
        let lk = valid.first().map_or(0, |v| v.len());
        let mut bias = Vec::with_capacity(groups * lq * lk);
        let mut keep = Vec::with_capacity(groups * lq * lk);
        for (g, keys) in valid.iter().enumerate() {
            if keys.len() != lk {
                return Err(Error::Contract(
                    "key mask groups have differing key counts".into(),
                ));
            }
            if !keys.iter().any(|&v| v) {
                return Err(Error::Contract(format!(
                    "attention group {g} has no valid keys"
                )));
            }
            for _ in 0..lq {
                for &ok in keys {
                    bias.push(if ok { 0.0 } else { MASK_BIAS });
                    keep.push(if ok { 1.0 } else { 0.0 });
                }
            }
        }
        let shape = [groups, lq, lk];
        Ok(KeyMask {
            bias: tape.leaf(bias, &shape)?,
            keep: tape.leaf(keep, &shape)?,
        })
    }

    /// Builds 2-d mask tensors of shape `[lq, lk]` from flat key validity.
    pub fn flat(tape: &mut Tape, valid: &[bool], lq: usize) -> Result<KeyMask> {
        if !valid.iter().any(|&v| v) {
            return Err(Error::Contract("attention has no valid keys".into()));
        }
        let lk = valid.len();
        let mut bias = Vec::with_capacity(lq * lk);
        let mut keep = Vec::with_capacity(lq * lk);
        for _ in 0..lq {
            for &ok in valid {
                bias.push(if ok { 0.0 } else { MASK_BIAS });
                keep.push(if ok { 1.0 } else { 0.0 });
            }
        }
        let shape = [lq, lk];
        Ok(KeyMask {
            bias: tape.leaf(bias, &shape)?,
            keep: tape.leaf(keep, &shape)?,
        })
    }
}

/// Output of one attention application.
#[derive(Debug, Clone, Copy)]
pub struct Attended {
    pub output: TensorId,
    /// Post-mask attention weights, rows summing to 1 over valid keys.
    pub weights: TensorId,
}

/// Core primitive: `softmax(q k^T / sqrt(d)) v` over the last two axes,
/// with optional key masking.
///
/// Shapes: q `[.., lq, d]`, k `[.., lk, d]`, v `[.., lk, dv]`; the mask, if
/// given, must match the weight shape `[.., lq, lk]` exactly.
pub fn scaled_dot_attention(
    tape: &mut Tape,
    q: TensorId,
    k: TensorId,
    v: TensorId,
    mask: Option<&KeyMask>,
) -> Result<Attended> {
    let qs = tape.shape(q).to_vec();
    let ks = tape.shape(k).to_vec();
    let vs = tape.shape(v).to_vec();
    let d = *qs.last().ok_or_else(|| Error::Contract("rank-0 query".into()))?;
    if ks.last() != Some(&d) {
        return Err(Error::ShapeMismatch {
            op: "attention q/k dims",
            lhs: qs,
            rhs: ks,
        });
    }
    if vs[vs.len() - 2] != ks[ks.len() - 2] {
        return Err(Error::ShapeMismatch {
            op: "attention k/v lengths",
            lhs: ks,
            rhs: vs,
        });
    }
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let mut logits = tape.affine(scores, 1.0 / (d as f64).sqrt(), 0.0);
    if let Some(m) = mask {
        if tape.shape(m.bias) != tape.shape(logits) {
            return Err(Error::ShapeMismatch {
                op: "attention mask",
                lhs: tape.shape(m.bias).to_vec(),
                rhs: tape.shape(logits).to_vec(),
            });
        }
        logits = tape.add(logits, m.bias)?;
    }
    let axis = tape.shape(logits).len() - 1;
    let mut weights = tape.softmax(logits, axis)?;
    if let Some(m) = mask {
        weights = tape.mul(weights, m.keep)?;
    }
    let output = tape.matmul_canonical(weights, v)?;
    Ok(Attended { output, weights })
}

/// Learned bias-free projections for one attention stage.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub w_q: Linear,
    pub w_k: Linear,
    pub w_v: Linear,
    pub dim: usize,
}

impl AttentionParams {
    /// `query_in` and `key_in` are the raw feature widths on the query and
    /// key/value sides; all three projections map into `dim`.
    pub fn new(
        name: &str,
        query_in: usize,
        key_in: usize,
        dim: usize,
        rng: &mut SplitMix64,
    ) -> Self {
        AttentionParams {
            w_q: Linear::new(&format!("{name}.wq"), query_in, dim, false, rng),
            w_k: Linear::new(&format!("{name}.wk"), key_in, dim, false, rng),
            w_v: Linear::new(&format!("{name}.wv"), key_in, dim, false, rng),
            dim,
        }
    }
}

impl VisitParams for AttentionParams {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut Vec<f64>, bool)) {
        self.w_q.visit_params(f);
        self.w_k.visit_params(f);
        self.w_v.visit_params(f);
    }
}

/// Self-attention among the slots of each segment, batched over segments.
/// `c_v` is `[S, R, C]`; the result output is `[S, R, dim]`.
pub fn local_self_attention(
    tape: &mut Tape,
    params: &AttentionParams,
    c_v: TensorId,
    mask: &ReducedMask,
) -> Result<Attended> {
    let shape = tape.shape(c_v).to_vec();
    if shape.len() != 3 || shape[0] != mask.segments() || shape[1] != mask.slots() {
        return Err(Error::Contract(format!(
            "local attention features {:?} do not match mask {}x{}",
            shape,
            mask.segments(),
            mask.slots()
        )));
    }
    let q = params.w_q.forward(tape, c_v)?;
    let k = params.w_k.forward(tape, c_v)?;
    let v = params.w_v.forward(tape, c_v)?;
    let key_mask = KeyMask::per_group(tape, &mask.slot_valid, mask.slots())?;
    scaled_dot_attention(tape, q, k, v, Some(&key_mask))
}

/// Output of query-guided segment attention.
#[derive(Debug, Clone, Copy)]
pub struct QuerySegmentAttended {
    /// Attended value broadcast back to every slot, `[S, R, dim]`.
    pub c_q: TensorId,
    /// One query-conditioned feature per segment, `[S, dim]`.
    pub c_sq: TensorId,
    /// Attention weights `[S, 1, R]`.
    pub weights: TensorId,
}

/// The query embedding attends over each segment's slots; the attended
/// value is shared by all slots of the segment, and its masked mean over
/// slots yields the per-segment feature. Because every slot carries the
/// same attended value, that mean equals the attended value itself; the
/// mean is computed literally to keep the masking semantics explicit.
pub fn query_guided_segment_attention(
    tape: &mut Tape,
    params: &AttentionParams,
    c_v: TensorId,
    h_q: TensorId,
    mask: &ReducedMask,
) -> Result<QuerySegmentAttended> {
    let shape = tape.shape(c_v).to_vec();
    let (s, r) = (mask.segments(), mask.slots());
    if shape.len() != 3 || shape[0] != s || shape[1] != r {
        return Err(Error::Contract(format!(
            "segment attention features {:?} do not match mask {s}x{r}",
            shape
        )));
    }
    if tape.shape(h_q).len() != 2 || tape.shape(h_q)[0] != 1 {
        return Err(Error::Contract(format!(
            "query embedding must be [1, d], got {:?}",
            tape.shape(h_q)
        )));
    }
    let q1 = params.w_q.forward(tape, h_q)?;
    let q3 = tape.reshape(q1, &[1, 1, params.dim])?;
    let q = tape.repeat(q3, 0, s)?;
    let k = params.w_k.forward(tape, c_v)?;
    let v = params.w_v.forward(tape, c_v)?;
    let key_mask = KeyMask::per_group(tape, &mask.slot_valid, 1)?;
    let att = scaled_dot_attention(tape, q, k, v, Some(&key_mask))?;
    let c_q = tape.repeat(att.output, 1, r)?;
    // Masked mean over slots: weight 1/n_valid on valid slots, 0 elsewhere.
    let mut mean_w = Vec::with_capacity(s * r * params.dim);
    for row in &mask.slot_valid {
        let n = row.iter().filter(|&&v| v).count() as f64;
        for &ok in row {
            let w = if ok { 1.0 / n } else { 0.0 };
            mean_w.extend(std::iter::repeat(w).take(params.dim));
        }
    }
    let mean_w = tape.leaf(mean_w, &[s, r, params.dim])?;
    let weighted = tape.mul(c_q, mean_w)?;
    let c_sq = tape.sum(weighted, Some(1))?;
    Ok(QuerySegmentAttended {
        c_q,
        c_sq,
        weights: att.weights,
    })
}

/// Every slot of every segment attends over all per-segment features.
/// `c_v` is `[S, R, C]`, `c_sq` is `[S, d]`; the output is `[S, R, dim]`
/// and the weights are `[S*R, S]` in slot-major order.
pub fn global_attention(
    tape: &mut Tape,
    params: &AttentionParams,
    c_v: TensorId,
    c_sq: TensorId,
    mask: &ReducedMask,
) -> Result<Attended> {
    let shape = tape.shape(c_v).to_vec();
    let (s, r) = (mask.segments(), mask.slots());
    if shape.len() != 3 || shape[0] != s || shape[1] != r {
        return Err(Error::Contract(format!(
            "global attention features {:?} do not match mask {s}x{r}",
            shape
        )));
    }
    let sq_shape = tape.shape(c_sq).to_vec();
    if sq_shape.len() != 2 || sq_shape[0] != s {
        return Err(Error::Contract(format!(
            "segment features must be [S, d], got {sq_shape:?}"
        )));
    }
    let c = shape[2];
    let flat = tape.reshape(c_v, &[s * r, c])?;
    let q = params.w_q.forward(tape, flat)?;
    let k = params.w_k.forward(tape, c_sq)?;
    let v = params.w_v.forward(tape, c_sq)?;
    let key_mask = KeyMask::flat(tape, &mask.seg_valid, s * r)?;
    let att = scaled_dot_attention(tape, q, k, v, Some(&key_mask))?;
    let output = tape.reshape(att.output, &[s, r, params.dim])?;
    Ok(Attended {
        output,
        weights: att.weights,
    })
}

/// Channel-wise concatenation `[c_v || c_s || c_g]` of the raw encoder
/// features and the two attention outputs, all `[S, R, *]`.
pub fn concat_features(
    tape: &mut Tape,
    c_v: TensorId,
    c_s: TensorId,
    c_g: TensorId,
) -> Result<TensorId> {
    tape.concat(&[c_v, c_s, c_g], 2)
}

#[cfg(test)]
mod tests;
