//! Backward (vector-Jacobian product) rules for every tape op.

use super::ops::axis_split;
use super::{numel, Op, Tape, TensorId};

impl Tape {
    /// Propagates the gradient `dy` of node `idx` into its parents'
    /// scratch slots.
    pub(crate) fn backward_step(
        &self,
        idx: usize,
        dy: &[f64],
        scratch: &mut [Option<Vec<f64>>],
    ) {
        let op = self.nodes[idx].op.clone();
        match op {
            Op::Leaf => unreachable!("leaf handled by the backward driver"),
            Op::Matmul { a, b } => self.backward_matmul(a, b, dy, scratch),
            Op::Transpose { x } => {
                let shape = self.shape(x);
                let (r, c) = (shape[shape.len() - 2], shape[shape.len() - 1]);
                let batch: usize = shape[..shape.len() - 2].iter().product();
                let mut dx = vec![0.0; dy.len()];
                for bi in 0..batch {
                    let src = &dy[bi * r * c..(bi + 1) * r * c];
                    let dst = &mut dx[bi * r * c..(bi + 1) * r * c];
                    for i in 0..c {
                        for j in 0..r {
                            dst[j * c + i] = src[i * r + j];
                        }
                    }
                }
                self.acc(scratch, x, &dx);
            }
            Op::Conv1d { x, w, b, stride, pad } => {
                self.backward_conv1d(idx, x, w, b, stride, pad, dy, scratch)
            }
            Op::ConvTranspose1d { x, w, stride } => {
                self.backward_conv1d_transpose(idx, x, w, stride, dy, scratch)
            }
            Op::MaxPool1d { x, argmax } => {
                let mut dx = vec![0.0; self.value(x).len()];
                for (i, &src) in argmax.iter().enumerate() {
                    dx[src] += dy[i];
                }
                self.acc(scratch, x, &dx);
            }
            Op::BatchNorm { x, gamma, beta, saved } => {
                let xs = self.shape(x).to_vec();
                let (bsz, c, l) = (xs[0], xs[1], xs[2]);
                let m = (bsz * l) as f64;
                let xd = self.value(x);
                let gd = self.value(gamma);
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                let mut dx = vec![0.0; xd.len()];
                for ch in 0..c {
                    let (mu, istd) = (saved.mean[ch], saved.invstd[ch]);
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for bi in 0..bsz {
                        let base = (bi * c + ch) * l;
                        for t in 0..l {
                            let xhat = (xd[base + t] - mu) * istd;
                            let g = dy[base + t];
                            dgamma[ch] += g * xhat;
                            dbeta[ch] += g;
                            let dxhat = g * gd[ch];
                            sum_dxhat += dxhat;
                            sum_dxhat_xhat += dxhat * xhat;
                        }
                    }
                    for bi in 0..bsz {
                        let base = (bi * c + ch) * l;
                        for t in 0..l {
                            let dxhat = dy[base + t] * gd[ch];
                            if saved.train {
                                let xhat = (xd[base + t] - mu) * istd;
                                dx[base + t] = istd / m
                                    * (m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat);
                            } else {
                                dx[base + t] = dxhat * istd;
                            }
                        }
                    }
                }
                self.acc(scratch, x, &dx);
                self.acc(scratch, gamma, &dgamma);
                self.acc(scratch, beta, &dbeta);
            }
            Op::Relu { x } => {
                let xd = self.value(x);
                let dx: Vec<f64> = dy
                    .iter()
                    .zip(xd)
                    .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                self.acc(scratch, x, &dx);
            }
            Op::Sigmoid { x } => {
                let yd = &self.nodes[idx].data;
                let dx: Vec<f64> = dy.iter().zip(yd).map(|(&g, &y)| g * y * (1.0 - y)).collect();
                self.acc(scratch, x, &dx);
            }
            Op::Log { x } => {
                let xd = self.value(x);
                let dx: Vec<f64> = dy.iter().zip(xd).map(|(&g, &v)| g / v).collect();
                self.acc(scratch, x, &dx);
            }
            Op::Clamp { x, lo, hi } => {
                let xd = self.value(x);
                let dx: Vec<f64> = dy
                    .iter()
                    .zip(xd)
                    .map(|(&g, &v)| if v >= lo && v <= hi { g } else { 0.0 })
                    .collect();
                self.acc(scratch, x, &dx);
            }
            Op::Affine { x, scale } => {
                let dx: Vec<f64> = dy.iter().map(|&g| g * scale).collect();
                self.acc(scratch, x, &dx);
            }
            Op::Softmax { x, axis } => {
                let shape = self.shape(x);
                let (outer, n, inner) = axis_split(shape, axis);
                let yd = &self.nodes[idx].data;
                let mut dx = vec![0.0; dy.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |a: usize| (o * n + a) * inner + i;
                        let mut dot = 0.0;
                        for a in 0..n {
                            dot += dy[at(a)] * yd[at(a)];
                        }
                        for a in 0..n {
                            dx[at(a)] = yd[at(a)] * (dy[at(a)] - dot);
                        }
                    }
                }
                self.acc(scratch, x, &dx);
            }
            Op::Add { a, b } => {
                self.acc_elementwise(scratch, a, dy, None);
                self.acc_elementwise(scratch, b, dy, None);
            }
            Op::Mul { a, b } => {
                let bd = self.value(b).to_vec();
                let ad = self.value(a).to_vec();
                self.acc_elementwise(scratch, a, dy, Some(&bd));
                self.acc_elementwise(scratch, b, dy, Some(&ad));
            }
            Op::Concat { parts, axis } => {
                let out_shape = self.shape(TensorId(idx)).to_vec();
                let (outer, total, inner) = axis_split(&out_shape, axis);
                let mut offset = 0;
                for p in parts {
                    let plen = self.shape(p)[axis];
                    let mut dpart = vec![0.0; self.value(p).len()];
                    for o in 0..outer {
                        for a in 0..plen {
                            let src = (o * total + offset + a) * inner;
                            let dst = (o * plen + a) * inner;
                            dpart[dst..dst + inner].copy_from_slice(&dy[src..src + inner]);
                        }
                    }
                    self.acc(scratch, p, &dpart);
                    offset += plen;
                }
            }
            Op::Sum { x, axis } | Op::Mean { x, axis } => {
                let is_mean = matches!(self.nodes[idx].op, Op::Mean { .. });
                let shape = self.shape(x).to_vec();
                let mut dx = vec![0.0; numel(&shape)];
                match axis {
                    None => {
                        let scale = if is_mean { 1.0 / dx.len() as f64 } else { 1.0 };
                        dx.fill(dy[0] * scale);
                    }
                    Some(ax) => {
                        let (outer, n, inner) = axis_split(&shape, ax);
                        let scale = if is_mean { 1.0 / n as f64 } else { 1.0 };
                        for o in 0..outer {
                            for a in 0..n {
                                for i in 0..inner {
                                    dx[(o * n + a) * inner + i] = dy[o * inner + i] * scale;
                                }
                            }
                        }
                    }
                }
                self.acc(scratch, x, &dx);
            }
            Op::Dropout { x, mask } => {
                let dx: Vec<f64> = dy.iter().zip(&mask).map(|(&g, &m)| g * m).collect();
                self.acc(scratch, x, &dx);
            }
            Op::Repeat { x, axis } => {
                let xshape = self.shape(x).to_vec();
                let count = self.shape(TensorId(idx))[axis];
                let (outer, _, inner) = axis_split(&xshape, axis);
                let mut dx = vec![0.0; numel(&xshape)];
                for o in 0..outer {
                    for a in 0..count {
                        for i in 0..inner {
                            dx[o * inner + i] += dy[(o * count + a) * inner + i];
                        }
                    }
                }
                self.acc(scratch, x, &dx);
            }
            Op::Reshape { x } => {
                self.acc(scratch, x, dy);
            }
        }
    }

    /// Routes an elementwise gradient to a parent, summing if that parent
    /// is a broadcast scalar. `factor` carries the other operand for mul.
    fn acc_elementwise(
        &self,
        scratch: &mut [Option<Vec<f64>>],
        parent: TensorId,
        dy: &[f64],
        factor: Option<&[f64]>,
    ) {
        if !self.nodes[parent.0].requires_grad {
            return;
        }
        let pn = self.value(parent).len();
        let term = |i: usize| match factor {
            Some(f) => dy[i] * f[if f.len() == 1 { 0 } else { i }],
            None => dy[i],
        };
        if pn == dy.len() {
            let dx: Vec<f64> = (0..dy.len()).map(term).collect();
            self.acc(scratch, parent, &dx);
        } else {
            debug_assert_eq!(pn, 1);
            let total: f64 = (0..dy.len()).map(term).sum();
            self.acc(scratch, parent, &[total]);
        }
    }

    fn backward_matmul(
        &self,
        a: TensorId,
        b: TensorId,
        dy: &[f64],
        scratch: &mut [Option<Vec<f64>>],
    ) {
        let ashape = self.shape(a).to_vec();
        let bshape = self.shape(b).to_vec();
        let (m, k) = (ashape[ashape.len() - 2], ashape[ashape.len() - 1]);
        let n = bshape[bshape.len() - 1];
        let map = super::ops::batch_map_for(&ashape, &bshape)
            .expect("matmul shapes were validated in forward");
        let adata = self.value(a);
        let bdata = self.value(b);
        let need_a = self.nodes[a.0].requires_grad;
        let need_b = self.nodes[b.0].requires_grad;
        let mut da = if need_a { vec![0.0; adata.len()] } else { Vec::new() };
        let mut db = if need_b { vec![0.0; bdata.len()] } else { Vec::new() };
        for ob in 0..map.batch_count() {
            let (ab, bb) = map.map(ob);
            let dmat = &dy[ob * m * n..(ob + 1) * m * n];
            if need_a {
                let bmat = &bdata[bb * k * n..(bb + 1) * k * n];
                let amat = &mut da[ab * m * k..(ab + 1) * m * k];
                for i in 0..m {
                    for j in 0..n {
                        let g = dmat[i * n + j];
                        if g == 0.0 {
                            continue;
                        }
                        for kk in 0..k {
                            amat[i * k + kk] += g * bmat[kk * n + j];
                        }
                    }
                }
            }
            if need_b {
                let amat = &adata[ab * m * k..(ab + 1) * m * k];
                let bmat = &mut db[bb * k * n..(bb + 1) * k * n];
                for i in 0..m {
                    for kk in 0..k {
                        let av = amat[i * k + kk];
                        if av == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            bmat[kk * n + j] += av * dmat[i * n + j];
                        }
                    }
                }
            }
        }
        if need_a {
            self.acc(scratch, a, &da);
        }
        if need_b {
            self.acc(scratch, b, &db);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_conv1d(
        &self,
        idx: usize,
        x: TensorId,
        w: TensorId,
        b: TensorId,
        stride: usize,
        pad: usize,
        dy: &[f64],
        scratch: &mut [Option<Vec<f64>>],
    ) {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let (bsz, cin, l) = (xs[0], xs[1], xs[2]);
        let (cout, _, k) = (ws[0], ws[1], ws[2]);
        let lout = self.shape(TensorId(idx))[2];
        let xd = self.value(x);
        let wd = self.value(w);
        let mut dx = vec![0.0; xd.len()];
        let mut dw = vec![0.0; wd.len()];
        let mut db = vec![0.0; cout];
        for bi in 0..bsz {
            for co in 0..cout {
                let drow = &dy[(bi * cout + co) * lout..(bi * cout + co + 1) * lout];
                for t in 0..lout {
                    let g = drow[t];
                    db[co] += g;
                    if g == 0.0 {
                        continue;
                    }
                    for ci in 0..cin {
                        let xbase = (bi * cin + ci) * l;
                        let wbase = (co * cin + ci) * k;
                        for j in 0..k {
                            let src = t * stride + j;
                            if src < pad || src - pad >= l {
                                continue;
                            }
                            dx[xbase + src - pad] += g * wd[wbase + j];
                            dw[wbase + j] += g * xd[xbase + src - pad];
                        }
                    }
                }
            }
        }
        self.acc(scratch, x, &dx);
        self.acc(scratch, w, &dw);
        self.acc(scratch, b, &db);
    }

    fn backward_conv1d_transpose(
        &self,
        idx: usize,
        x: TensorId,
        w: TensorId,
        stride: usize,
        dy: &[f64],
        scratch: &mut [Option<Vec<f64>>],
    ) {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let (bsz, cin, r) = (xs[0], xs[1], xs[2]);
        let (_, cout, k) = (ws[0], ws[1], ws[2]);
        let lout = self.shape(TensorId(idx))[2];
        let xd = self.value(x);
        let wd = self.value(w);
        let mut dx = vec![0.0; xd.len()];
        let mut dw = vec![0.0; wd.len()];
        for bi in 0..bsz {
            for ci in 0..cin {
                let xbase = (bi * cin + ci) * r;
                for co in 0..cout {
                    let wbase = (ci * cout + co) * k;
                    let dbase = (bi * cout + co) * lout;
                    for t in 0..r {
                        for j in 0..k {
                            let g = dy[dbase + t * stride + j];
                            dx[xbase + t] += g * wd[wbase + j];
                            dw[wbase + j] += g * xd[xbase + t];
                        }
                    }
                }
            }
        }
        self.acc(scratch, x, &dx);
        self.acc(scratch, w, &dw);
    }
}
