//! Forward implementations of all tape operations.
//!
//! Shape conventions:
//! * matmul operands are `[batch.., m, k]` and `[batch.., k, n]` with
//!   broadcasting over the leading batch dims;
//! * temporal ops (conv, pool, batch norm) use channels-first `[B, C, L]`;
//! * elementwise binary ops require identical shapes, except that either
//!   side may be a single-element scalar.

use super::{numel, BnSaved, Mode, Op, Tape, TensorId};
use crate::error::{Error, Result};
use crate::tensor::rng::SplitMix64;

/// Running mean/variance tracked by a batch norm layer across steps.
///
/// The variance stored here is the unbiased estimate, matching common
/// deep-learning framework behaviour; normalisation itself always uses the
/// biased batch variance.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BnStats {
    pub fn new(channels: usize) -> Self {
        BnStats {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }
}

/// Strides (in units of matrices) used to map a broadcast batch index back
/// onto each matmul operand; 0 marks a broadcast dim.
pub(crate) struct BatchMap {
    out_dims: Vec<usize>,
    a_strides: Vec<usize>,
    b_strides: Vec<usize>,
}

/// Builds the batch broadcast map from full matmul operand shapes.
pub(crate) fn batch_map_for(ashape: &[usize], bshape: &[usize]) -> Option<BatchMap> {
    BatchMap::new(&ashape[..ashape.len() - 2], &bshape[..bshape.len() - 2])
}

impl BatchMap {
    fn new(a_batch: &[usize], b_batch: &[usize]) -> Option<BatchMap> {
        let rank = a_batch.len().max(b_batch.len());
        let pad = |dims: &[usize]| {
            let mut v = vec![1; rank - dims.len()];
            v.extend_from_slice(dims);
            v
        };
        let a = pad(a_batch);
        let b = pad(b_batch);
        let mut out_dims = vec![0; rank];
        for i in 0..rank {
            out_dims[i] = match (a[i], b[i]) {
                (x, y) if x == y => x,
                (1, y) => y,
                (x, 1) => x,
                _ => return None,
            };
        }
        let strides_for = |dims: &[usize]| {
            let mut strides = vec![0; rank];
            let mut acc = 1;
            for i in (0..rank).rev() {
                strides[i] = if dims[i] == 1 { 0 } else { acc };
                acc *= dims[i];
            }
            strides
        };
        Some(BatchMap {
            out_dims,
            a_strides: strides_for(&a),
            b_strides: strides_for(&b),
        })
    }

    pub(crate) fn batch_count(&self) -> usize {
        self.out_dims.iter().product()
    }

    /// Maps a flat output batch index to the two operand batch indices.
    pub(crate) fn map(&self, mut flat: usize) -> (usize, usize) {
        let mut a = 0;
        let mut b = 0;
        for i in (0..self.out_dims.len()).rev() {
            let coord = flat % self.out_dims[i];
            flat /= self.out_dims[i];
            a += coord * self.a_strides[i];
            b += coord * self.b_strides[i];
        }
        (a, b)
    }
}

/// Splits a shape into (outer, len, inner) products around one axis.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Sums values after sorting them into a canonical order, so the result
/// depends only on the multiset of addends, not their arrangement.
fn canonical_sum(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().sum()
}

impl Tape {
    /// Batched matrix product with broadcasting over leading dims.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.matmul_impl(a, b, false)
    }

    /// Matrix product whose inner sums are accumulated in a canonical
    /// (value-sorted) order, making the result invariant under consistent
    /// permutations of the contracted axis. Attention uses this for its
    /// weighted-value aggregation so that reordering shots permutes outputs
    /// bit-for-bit instead of perturbing them in the last ulp.
    pub fn matmul_canonical(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: TensorId, b: TensorId, canonical: bool) -> Result<TensorId> {
        let (ashape, bshape) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let mismatch = || Error::ShapeMismatch {
            op: "matmul",
            lhs: ashape.clone(),
            rhs: bshape.clone(),
        };
        if ashape.len() < 2 || bshape.len() < 2 {
            return Err(mismatch());
        }
        let (m, ka) = (ashape[ashape.len() - 2], ashape[ashape.len() - 1]);
        let (kb, n) = (bshape[bshape.len() - 2], bshape[bshape.len() - 1]);
        if ka != kb {
            return Err(mismatch());
        }
        let map = BatchMap::new(&ashape[..ashape.len() - 2], &bshape[..bshape.len() - 2])
            .ok_or_else(mismatch)?;
        let mut out_shape = map.out_dims.clone();
        out_shape.push(m);
        out_shape.push(n);
        let mut out = vec![0.0; numel(&out_shape)];
        let (adata, bdata) = (self.value(a), self.value(b));
        let mut terms = Vec::new();
        for ob in 0..map.batch_count() {
            let (ab, bb) = map.map(ob);
            let amat = &adata[ab * m * ka..(ab + 1) * m * ka];
            let bmat = &bdata[bb * ka * n..(bb + 1) * ka * n];
            let omat = &mut out[ob * m * n..(ob + 1) * m * n];
            if canonical {
                for i in 0..m {
                    for j in 0..n {
                        terms.clear();
                        for kk in 0..ka {
                            terms.push(amat[i * ka + kk] * bmat[kk * n + j]);
                        }
                        omat[i * n + j] = canonical_sum(&mut terms);
                    }
                }
            } else {
                for i in 0..m {
                    for kk in 0..ka {
                        let av = amat[i * ka + kk];
                        if av == 0.0 {
                            continue;
                        }
                        let brow = &bmat[kk * n..(kk + 1) * n];
                        let orow = &mut omat[i * n..(i + 1) * n];
                        for j in 0..n {
                            orow[j] += av * brow[j];
                        }
                    }
                }
            }
        }
        Ok(self.push(out_shape, out, Op::Matmul { a, b }))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: TensorId) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::Contract(format!(
                "transpose requires rank >= 2, got shape {:?}",
                shape
            )));
        }
        let (r, c) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let batch: usize = shape[..shape.len() - 2].iter().product();
        let mut out_shape = shape.clone();
        let rank = out_shape.len();
        out_shape.swap(rank - 2, rank - 1);
        let data = self.value(x);
        let mut out = vec![0.0; data.len()];
        for bidx in 0..batch {
            let src = &data[bidx * r * c..(bidx + 1) * r * c];
            let dst = &mut out[bidx * r * c..(bidx + 1) * r * c];
            for i in 0..r {
                for j in 0..c {
                    dst[j * r + i] = src[i * c + j];
                }
            }
        }
        Ok(self.push(out_shape, out, Op::Transpose { x }))
    }

    /// 1-d convolution: x `[B, Cin, L]`, w `[Cout, Cin, K]`, bias `[Cout]`.
    /// Output length is `(L + 2*pad - K) / stride + 1` (floor).
    pub fn conv1d(
        &mut self,
        x: TensorId,
        w: TensorId,
        b: TensorId,
        stride: usize,
        pad: usize,
    ) -> Result<TensorId> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let bs = self.shape(b).to_vec();
        if xs.len() != 3 || ws.len() != 3 || xs[1] != ws[1] {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                lhs: xs,
                rhs: ws,
            });
        }
        let (bsz, cin, l) = (xs[0], xs[1], xs[2]);
        let (cout, _, k) = (ws[0], ws[1], ws[2]);
        if bs != [cout] {
            return Err(Error::ShapeMismatch {
                op: "conv1d bias",
                lhs: bs,
                rhs: vec![cout],
            });
        }
        if stride == 0 || l + 2 * pad < k {
            return Err(Error::Contract(format!(
                "conv1d: invalid geometry L={l} pad={pad} K={k} stride={stride}"
            )));
        }
        let lout = (l + 2 * pad - k) / stride + 1;
        let mut out = vec![0.0; bsz * cout * lout];
        let xd = self.value(x);
        let wd = self.value(w);
        let bd = self.value(b);
        for bi in 0..bsz {
            for co in 0..cout {
                for t in 0..lout {
                    let mut acc = bd[co];
                    for ci in 0..cin {
                        let xrow = &xd[(bi * cin + ci) * l..(bi * cin + ci + 1) * l];
                        let wrow = &wd[(co * cin + ci) * k..(co * cin + ci + 1) * k];
                        for j in 0..k {
                            let src = t * stride + j;
                            if src < pad || src - pad >= l {
                                continue;
                            }
                            acc += wrow[j] * xrow[src - pad];
                        }
                    }
                    out[(bi * cout + co) * lout + t] = acc;
                }
            }
        }
        Ok(self.push(
            vec![bsz, cout, lout],
            out,
            Op::Conv1d { x, w, b, stride, pad },
        ))
    }

    /// Transposed 1-d convolution: x `[B, Cin, R]`, w `[Cin, Cout, K]`.
    /// Output length is `(R - 1) * stride + K`. Bias-free.
    pub fn conv1d_transpose(&mut self, x: TensorId, w: TensorId, stride: usize) -> Result<TensorId> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 3 || ws.len() != 3 || xs[1] != ws[0] {
            return Err(Error::ShapeMismatch {
                op: "conv1d_transpose",
                lhs: xs,
                rhs: ws,
            });
        }
        if stride == 0 || xs[2] == 0 {
            return Err(Error::Contract(format!(
                "conv1d_transpose: invalid geometry R={} stride={stride}",
                xs[2]
            )));
        }
        let (bsz, cin, r) = (xs[0], xs[1], xs[2]);
        let (_, cout, k) = (ws[0], ws[1], ws[2]);
        let lout = (r - 1) * stride + k;
        let mut out = vec![0.0; bsz * cout * lout];
        let xd = self.value(x);
        let wd = self.value(w);
        for bi in 0..bsz {
            for ci in 0..cin {
                let xrow = &xd[(bi * cin + ci) * r..(bi * cin + ci + 1) * r];
                for co in 0..cout {
                    let wrow = &wd[(ci * cout + co) * k..(ci * cout + co + 1) * k];
                    let orow = &mut out[(bi * cout + co) * lout..(bi * cout + co + 1) * lout];
                    for t in 0..r {
                        let xv = xrow[t];
                        if xv == 0.0 {
                            continue;
                        }
                        for j in 0..k {
                            orow[t * stride + j] += xv * wrow[j];
                        }
                    }
                }
            }
        }
        Ok(self.push(vec![bsz, cout, lout], out, Op::ConvTranspose1d { x, w, stride }))
    }

    /// Max pooling over the last axis of `[B, C, L]`. Ties go to the first
    /// (earliest) position in the window.
    pub fn maxpool1d(&mut self, x: TensorId, kernel: usize, stride: usize) -> Result<TensorId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 {
            return Err(Error::Contract(format!(
                "maxpool1d expects [B, C, L], got {:?}",
                xs
            )));
        }
        let (bsz, c, l) = (xs[0], xs[1], xs[2]);
        if kernel == 0 || stride == 0 || l < kernel {
            return Err(Error::Contract(format!(
                "maxpool1d: invalid geometry L={l} kernel={kernel} stride={stride}"
            )));
        }
        let lout = (l - kernel) / stride + 1;
        let xd = self.value(x);
        let mut out = vec![0.0; bsz * c * lout];
        let mut argmax = vec![0usize; bsz * c * lout];
        for row in 0..bsz * c {
            let xrow = &xd[row * l..(row + 1) * l];
            for t in 0..lout {
                let start = t * stride;
                let mut best = start;
                for j in start + 1..start + kernel {
                    if xrow[j] > xrow[best] {
                        best = j;
                    }
                }
                out[row * lout + t] = xrow[best];
                argmax[row * lout + t] = row * l + best;
            }
        }
        Ok(self.push(vec![bsz, c, lout], out, Op::MaxPool1d { x, argmax }))
    }

    /// Batch normalisation over `[B, C, L]` with per-channel affine.
    ///
    /// Train mode normalises with biased batch statistics over the `B*L`
    /// values of each channel and updates `stats` in place with momentum.
    /// Eval mode normalises with the running statistics and leaves them
    /// untouched.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm1d(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        stats: &mut BnStats,
        mode: Mode,
        momentum: f64,
        eps: f64,
    ) -> Result<TensorId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 {
            return Err(Error::Contract(format!(
                "batchnorm1d expects [B, C, L], got {:?}",
                xs
            )));
        }
        let (bsz, c, l) = (xs[0], xs[1], xs[2]);
        if self.shape(gamma) != [c] || self.shape(beta) != [c] || stats.running_mean.len() != c {
            return Err(Error::ShapeMismatch {
                op: "batchnorm1d affine",
                lhs: self.shape(gamma).to_vec(),
                rhs: vec![c],
            });
        }
        let m = bsz * l;
        if m == 0 {
            return Err(Error::Contract("batchnorm1d: empty batch".into()));
        }
        let xd = self.value(x).to_vec();
        let gd = self.value(gamma).to_vec();
        let bd = self.value(beta).to_vec();
        let (mean, invstd) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut sum = 0.0;
                    for bi in 0..bsz {
                        let row = &xd[(bi * c + ch) * l..(bi * c + ch + 1) * l];
                        sum += row.iter().sum::<f64>();
                    }
                    let mu = sum / m as f64;
                    let mut sq = 0.0;
                    for bi in 0..bsz {
                        let row = &xd[(bi * c + ch) * l..(bi * c + ch + 1) * l];
                        for &v in row {
                            sq += (v - mu) * (v - mu);
                        }
                    }
                    mean[ch] = mu;
                    var[ch] = sq / m as f64;
                }
                for ch in 0..c {
                    let unbiased = if m > 1 {
                        var[ch] * m as f64 / (m - 1) as f64
                    } else {
                        var[ch]
                    };
                    stats.running_mean[ch] =
                        (1.0 - momentum) * stats.running_mean[ch] + momentum * mean[ch];
                    stats.running_var[ch] =
                        (1.0 - momentum) * stats.running_var[ch] + momentum * unbiased;
                }
                let invstd: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
                (mean, invstd)
            }
            Mode::Eval => {
                let invstd = stats
                    .running_var
                    .iter()
                    .map(|v| 1.0 / (v + eps).sqrt())
                    .collect();
                (stats.running_mean.clone(), invstd)
            }
        };
        let mut out = vec![0.0; xd.len()];
        for bi in 0..bsz {
            for ch in 0..c {
                let base = (bi * c + ch) * l;
                for t in 0..l {
                    out[base + t] = gd[ch] * (xd[base + t] - mean[ch]) * invstd[ch] + bd[ch];
                }
            }
        }
        let saved = BnSaved {
            mean,
            invstd,
            train: mode == Mode::Train,
        };
        Ok(self.push(xs, out, Op::BatchNorm { x, gamma, beta, saved }))
    }

    pub fn relu(&mut self, x: TensorId) -> TensorId {
        let shape = self.shape(x).to_vec();
        let out = self.value(x).iter().map(|&v| v.max(0.0)).collect();
        self.push(shape, out, Op::Relu { x })
    }

    pub fn sigmoid(&mut self, x: TensorId) -> TensorId {
        let shape = self.shape(x).to_vec();
        let out = self
            .value(x)
            .iter()
            .map(|&v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        self.push(shape, out, Op::Sigmoid { x })
    }

    /// Natural log. The caller is responsible for keeping inputs positive
    /// (e.g. via [`Tape::clamp`]).
    pub fn log(&mut self, x: TensorId) -> TensorId {
        let shape = self.shape(x).to_vec();
        let out = self.value(x).iter().map(|&v| v.ln()).collect();
        self.push(shape, out, Op::Log { x })
    }

    /// Elementwise clamp into `[lo, hi]`. Gradient passes through inside
    /// the (closed) interval and is zero outside.
    pub fn clamp(&mut self, x: TensorId, lo: f64, hi: f64) -> Result<TensorId> {
        if !(lo <= hi) {
            return Err(Error::Contract(format!("clamp: lo {lo} > hi {hi}")));
        }
        let shape = self.shape(x).to_vec();
        let out = self.value(x).iter().map(|&v| v.clamp(lo, hi)).collect();
        Ok(self.push(shape, out, Op::Clamp { x, lo, hi }))
    }

    /// Elementwise `x * scale + shift` with constant scalars.
    pub fn affine(&mut self, x: TensorId, scale: f64, shift: f64) -> TensorId {
        let shape = self.shape(x).to_vec();
        let out = self.value(x).iter().map(|&v| v * scale + shift).collect();
        self.push(shape, out, Op::Affine { x, scale })
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: TensorId, axis: usize) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Contract(format!(
                "softmax axis {axis} out of range for shape {:?}",
                shape
            )));
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        let xd = self.value(x);
        let mut out = vec![0.0; xd.len()];
        let mut exps = vec![0.0; n];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * n + a) * inner + i;
                let mut mx = f64::NEG_INFINITY;
                for a in 0..n {
                    mx = mx.max(xd[at(a)]);
                }
                for a in 0..n {
                    let e = (xd[at(a)] - mx).exp();
                    out[at(a)] = e;
                    exps[a] = e;
                }
                // Canonical-order denominator keeps softmax invariant under
                // permutation of the normalised axis.
                let denom = canonical_sum(&mut exps);
                for a in 0..n {
                    out[at(a)] /= denom;
                }
            }
        }
        Ok(self.push(shape, out, Op::Softmax { x, axis }))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_elementwise(a, b, "add")
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_elementwise(a, b, "mul")
    }

    /// Shared shape logic for add/mul: identical shapes, or one side a
    /// single-element scalar.
    fn binary_elementwise(
        &mut self,
        a: TensorId,
        b: TensorId,
        which: &'static str,
    ) -> Result<TensorId> {
        let (ashape, bshape) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (an, bn) = (numel(&ashape), numel(&bshape));
        if ashape != bshape && an != 1 && bn != 1 {
            return Err(Error::ShapeMismatch {
                op: which,
                lhs: ashape,
                rhs: bshape,
            });
        }
        let out_shape = if an >= bn { ashape } else { bshape };
        let ad = self.value(a);
        let bd = self.value(b);
        let n = numel(&out_shape);
        let mut out = vec![0.0; n];
        for i in 0..n {
            let av = ad[if an == 1 { 0 } else { i }];
            let bv = bd[if bn == 1 { 0 } else { i }];
            out[i] = match which {
                "add" => av + bv,
                _ => av * bv,
            };
        }
        let op = if which == "add" {
            Op::Add { a, b }
        } else {
            Op::Mul { a, b }
        };
        Ok(self.push(out_shape, out, op))
    }

    /// Concatenates tensors along `axis`; all other dims must match.
    pub fn concat(&mut self, parts: &[TensorId], axis: usize) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::Contract("concat of zero tensors".into()));
        }
        let first = self.shape(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::Contract(format!(
                "concat axis {axis} out of range for shape {:?}",
                first
            )));
        }
        let mut axis_total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(i, (x, y))| i != axis && x != y)
            {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first,
                    rhs: s.to_vec(),
                });
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let (outer, _, inner) = axis_split(&out_shape, axis);
        let mut out = vec![0.0; numel(&out_shape)];
        let mut offset = 0;
        for &p in parts {
            let plen = self.shape(p)[axis];
            let pd = self.value(p);
            for o in 0..outer {
                for a in 0..plen {
                    let src = (o * plen + a) * inner;
                    let dst = (o * axis_total + offset + a) * inner;
                    out[dst..dst + inner].copy_from_slice(&pd[src..src + inner]);
                }
            }
            offset += plen;
        }
        Ok(self.push(
            out_shape,
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    /// Sum over one axis (removing it) or over all elements (`None`,
    /// producing shape `[1]`).
    pub fn sum(&mut self, x: TensorId, axis: Option<usize>) -> Result<TensorId> {
        self.reduce(x, axis, false)
    }

    /// Arithmetic mean with the same axis semantics as [`Tape::sum`].
    pub fn mean(&mut self, x: TensorId, axis: Option<usize>) -> Result<TensorId> {
        self.reduce(x, axis, true)
    }

    fn reduce(&mut self, x: TensorId, axis: Option<usize>, mean: bool) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        let xd = self.value(x);
        let (out_shape, out) = match axis {
            None => {
                let total: f64 = xd.iter().sum();
                let v = if mean { total / xd.len() as f64 } else { total };
                (vec![1], vec![v])
            }
            Some(ax) => {
                if ax >= shape.len() {
                    return Err(Error::Contract(format!(
                        "reduce axis {ax} out of range for shape {:?}",
                        shape
                    )));
                }
                let (outer, n, inner) = axis_split(&shape, ax);
                let mut out = vec![0.0; outer * inner];
                for o in 0..outer {
                    for a in 0..n {
                        for i in 0..inner {
                            out[o * inner + i] += xd[(o * n + a) * inner + i];
                        }
                    }
                }
                if mean {
                    for v in &mut out {
                        *v /= n as f64;
                    }
                }
                let mut out_shape: Vec<usize> = shape[..ax].to_vec();
                out_shape.extend_from_slice(&shape[ax + 1..]);
                if out_shape.is_empty() {
                    out_shape.push(1);
                }
                (out_shape, out)
            }
        };
        let op = if mean {
            Op::Mean { x, axis }
        } else {
            Op::Sum { x, axis }
        };
        Ok(self.push(out_shape, out, op))
    }

    /// Inverted-scaling dropout. In eval mode or at `p == 0` this is the
    /// identity and returns `x` itself without recording a node.
    pub fn dropout(
        &mut self,
        x: TensorId,
        p: f64,
        mode: Mode,
        rng: &mut SplitMix64,
    ) -> Result<TensorId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Contract(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let shape = self.shape(x).to_vec();
        let keep_scale = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..numel(&shape))
            .map(|_| if rng.next_f64() < p { 0.0 } else { keep_scale })
            .collect();
        let out = self
            .value(x)
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v * m)
            .collect();
        Ok(self.push(shape, out, Op::Dropout { x, mask }))
    }

    /// Tiles a size-1 axis `count` times.
    pub fn repeat(&mut self, x: TensorId, axis: usize, count: usize) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] != 1 || count == 0 {
            return Err(Error::Contract(format!(
                "repeat: axis {axis} count {count} invalid for shape {:?}",
                shape
            )));
        }
        let (outer, _, inner) = axis_split(&shape, axis);
        let xd = self.value(x);
        let mut out_shape = shape.clone();
        out_shape[axis] = count;
        let mut out = vec![0.0; numel(&out_shape)];
        for o in 0..outer {
            let src = &xd[o * inner..(o + 1) * inner];
            for a in 0..count {
                let dst = (o * count + a) * inner;
                out[dst..dst + inner].copy_from_slice(src);
            }
        }
        Ok(self.push(out_shape, out, Op::Repeat { x, axis }))
    }

    /// Reinterprets the data with a new shape of equal element count.
    pub fn reshape(&mut self, x: TensorId, new_shape: &[usize]) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        if numel(&shape) != numel(new_shape) {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: shape,
                rhs: new_shape.to_vec(),
            });
        }
        let data = self.value(x).to_vec();
        Ok(self.push(new_shape.to_vec(), data, Op::Reshape { x }))
    }
}
