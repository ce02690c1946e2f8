use super::conv::{self, Conv2dOptions, ConvGeometry};
use super::tensor::lanes;
use super::{accumulate, Node, Op, Tape, Tensor, Var, EPS};
use crate::error::{Error, Result};

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn check_axis(op: &'static str, t: &Tensor, axis: usize) -> Result<()> {
    if axis >= t.ndim() {
        return Err(Error::dim(op, format!("axis {axis} out of range for shape {:?}", t.shape())));
    }
    Ok(())
}

fn tensor(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
    Tensor::new(shape, data).expect("op produced consistent shape")
}

impl Tape {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("add", x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let out = tensor(x.shape().to_vec(), data);
        Ok(self.record(out, &[a, b], Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("sub", x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p - q).collect();
        let out = tensor(x.shape().to_vec(), data);
        Ok(self.record(out, &[a, b], Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("mul", x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let out = tensor(x.shape().to_vec(), data);
        Ok(self.record(out, &[a, b], Op::Mul(a, b)))
    }

    pub fn mul_scalar(&mut self, a: Var, s: f64) -> Var {
        let x = self.value(a);
        let out = tensor(x.shape().to_vec(), x.data().iter().map(|v| v * s).collect());
        self.record(out, &[a], Op::MulScalar(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let x = self.value(a);
        let out = tensor(x.shape().to_vec(), x.data().iter().map(|v| v + s).collect());
        self.record(out, &[a], Op::AddScalar(a))
    }

    /// Adds a 1-D `bias` broadcast along `axis` of `input`.
    pub fn add_bias(&mut self, input: Var, bias: Var, axis: usize) -> Result<Var> {
        let (x, b) = (self.value(input), self.value(bias));
        check_axis("add_bias", x, axis)?;
        if b.ndim() != 1 || b.numel() != x.shape()[axis] {
            return Err(Error::dim(
                "add_bias",
                format!("bias {:?} does not match axis {axis} of {:?}", b.shape(), x.shape()),
            ));
        }
        let (outer, n, inner) = lanes(x.shape(), axis);
        let mut data = x.data().to_vec();
        for o in 0..outer {
            for k in 0..n {
                let base = (o * n + k) * inner;
                for v in &mut data[base..base + inner] {
                    *v += b.data()[k];
                }
            }
        }
        let out = tensor(x.shape().to_vec(), data);
        Ok(self.record(out, &[input, bias], Op::AddBias { input, bias, axis }))
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.ndim() != 2 || y.ndim() != 2 || x.shape()[1] != y.shape()[0] {
            return Err(Error::dim("matmul", format!("{:?} x {:?}", x.shape(), y.shape())));
        }
        let (m, k, n) = (x.shape()[0], x.shape()[1], y.shape()[1]);
        let data = matmul_raw(x.data(), y.data(), m, k, n);
        let out = tensor(vec![m, n], data);
        Ok(self.record(out, &[a, b], Op::Matmul(a, b)))
    }

    /// Grouped 2-D cross-correlation over `[batch, channels, height, width]` with a
    /// `[out_channels, in_channels / groups, kh, kw]` kernel and optional per-channel bias.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, opts: Conv2dOptions) -> Result<Var> {
        let (x, w) = (self.value(input), self.value(weight));
        let geo = ConvGeometry::resolve(x.shape(), w.shape(), opts)?;
        let bias_data = match bias {
            Some(b) => {
                let bt = self.value(b);
                if bt.ndim() != 1 || bt.numel() != geo.out_ch {
                    return Err(Error::dim(
                        "conv2d",
                        format!("bias {:?} for {} output channels", bt.shape(), geo.out_ch),
                    ));
                }
                Some(bt.data())
            }
            None => None,
        };
        let data = conv::forward(&geo, x.data(), w.data(), bias_data);
        let out = tensor(geo.output_shape(), data);
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        Ok(self.record(out, &inputs, Op::Conv2d { input, weight, bias, geo }))
    }

    /// 1-D cross-correlation of `[batch, in_ch, len]` with `[out_ch, in_ch, k]`,
    /// no padding.
    pub fn conv1d(&mut self, input: Var, kernel: Var, dilation: usize, stride: usize) -> Result<Var> {
        self.conv1d_padded(input, kernel, dilation, stride, 0)
    }

    /// [`Tape::conv1d`] with `padding` zeros on both ends of the time axis.
    pub fn conv1d_padded(
        &mut self,
        input: Var,
        kernel: Var,
        dilation: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (xs, ks) = (self.shape(input).to_vec(), self.shape(kernel).to_vec());
        if xs.len() != 3 || ks.len() != 3 {
            return Err(Error::dim("conv1d", format!("expected 3-D input and kernel, got {xs:?} and {ks:?}")));
        }
        let x4 = self.reshape(input, vec![xs[0], xs[1], 1, xs[2]])?;
        let k4 = self.reshape(kernel, vec![ks[0], ks[1], 1, ks[2]])?;
        let opts = Conv2dOptions {
            stride: (1, stride),
            dilation: (1, dilation),
            padding: (0, padding),
            groups: 1,
        };
        let y = self.conv2d(x4, k4, None, opts)?;
        let ys = self.shape(y).to_vec();
        self.reshape(y, vec![ys[0], ys[1], ys[3]])
    }

    /// Per-channel 1-D convolution producing `multiplier` outputs for each input
    /// channel. `kernel` is `[in_ch * multiplier, 1, k]`; output channel
    /// `c * multiplier + j` reads input channel `c`. Length-preserving for odd `k`.
    pub fn depthwise_conv1d(&mut self, input: Var, kernel: Var, multiplier: usize) -> Result<Var> {
        let (xs, ks) = (self.shape(input).to_vec(), self.shape(kernel).to_vec());
        if xs.len() != 3 || ks.len() != 3 || ks[1] != 1 || ks[0] != xs[1] * multiplier {
            return Err(Error::dim(
                "depthwise_conv1d",
                format!("input {xs:?}, kernel {ks:?}, multiplier {multiplier}"),
            ));
        }
        let x4 = self.reshape(input, vec![xs[0], xs[1], 1, xs[2]])?;
        let k4 = self.reshape(kernel, vec![ks[0], 1, 1, ks[2]])?;
        let opts = Conv2dOptions {
            padding: (0, (ks[2] - 1) / 2),
            groups: xs[1],
            ..Conv2dOptions::default()
        };
        let y = self.conv2d(x4, k4, None, opts)?;
        let ys = self.shape(y).to_vec();
        self.reshape(y, vec![ys[0], ys[1], ys[3]])
    }

    /// Non-overlapping average pooling along the last axis; a trailing partial
    /// window is dropped.
    pub fn avg_pool(&mut self, input: Var, window: usize) -> Result<Var> {
        let x = self.value(input);
        if window == 0 {
            return Err(Error::Contract("avg_pool window must be >= 1".into()));
        }
        let Some(&len) = x.shape().last() else {
            return Err(Error::dim("avg_pool", "scalar input"));
        };
        let out_len = len / window;
        if out_len == 0 {
            return Err(Error::dim("avg_pool", format!("last axis {len} shorter than window {window}")));
        }
        let rows = x.numel() / len;
        let mut data = Vec::with_capacity(rows * out_len);
        for r in 0..rows {
            let row = &x.data()[r * len..(r + 1) * len];
            for j in 0..out_len {
                data.push(row[j * window..(j + 1) * window].iter().sum::<f64>() / window as f64);
            }
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = out_len;
        let out = tensor(shape, data);
        Ok(self.record(out, &[input], Op::AvgPool { input, window }))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let out = tensor(x.shape().to_vec(), x.data().iter().map(|&v| if v < 0.0 { 0.0 } else { v }).collect());
        self.record(out, &[a], Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let out = tensor(x.shape().to_vec(), x.data().iter().map(|v| v.exp()).collect());
        self.record(out, &[a], Op::Exp(a))
    }

    /// `ln(x + EPS)`; fails when any `x + EPS <= 0`.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if let Some(bad) = x.data().iter().find(|v| !(**v + EPS > 0.0)) {
            return Err(Error::Domain { op: "log", detail: format!("argument {bad}") });
        }
        let out = tensor(x.shape().to_vec(), x.data().iter().map(|v| (v + EPS).ln()).collect());
        Ok(self.record(out, &[a], Op::Log(a)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.record(Tensor::scalar(s), &[a], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let m = x.data().iter().sum::<f64>() / x.numel().max(1) as f64;
        self.record(Tensor::scalar(m), &[a], Op::Mean(a))
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let x = self.value(a);
        check_axis("sum_axis", x, axis)?;
        let (outer, n, inner) = lanes(x.shape(), axis);
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let base = (o * n + k) * inner;
                for i in 0..inner {
                    data[o * inner + i] += x.data()[base + i];
                }
            }
        }
        let mut shape = x.shape().to_vec();
        shape.remove(axis);
        let out = tensor(shape, data);
        Ok(self.record(out, &[a], Op::SumAxis { input: a, axis }))
    }

    /// Mean over `axis`, removing it.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let n = {
            let x = self.value(a);
            check_axis("mean_axis", x, axis)?;
            x.shape()[axis]
        };
        let s = self.sum_axis(a, axis)?;
        Ok(self.mul_scalar(s, 1.0 / n.max(1) as f64))
    }

    /// Scales each lane along `axis` to unit L2 norm: `x / (‖x‖ + EPS)`.
    pub fn l2_normalize(&mut self, a: Var, axis: usize) -> Result<Var> {
        let x = self.value(a);
        check_axis("l2_normalize", x, axis)?;
        let (outer, n, inner) = lanes(x.shape(), axis);
        let mut norms = vec![0.0; outer * inner];
        let mut data = x.data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * n + k) * inner + i;
                let norm = (0..n).map(|k| x.data()[idx(k)].powi(2)).sum::<f64>().sqrt();
                norms[o * inner + i] = norm;
                for k in 0..n {
                    data[idx(k)] /= norm + EPS;
                }
            }
        }
        let out = tensor(x.shape().to_vec(), data);
        Ok(self.record(out, &[a], Op::L2Normalize { input: a, axis, norms }))
    }

    /// `[n, d] x [m, d] -> [n, m]` matrix of row cosine similarities.
    pub fn cosine_similarity_matrix(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::dim("cosine_similarity_matrix", format!("{sa:?} vs {sb:?}")));
        }
        let na = self.l2_normalize(a, 1)?;
        let nb = if a == b { na } else { self.l2_normalize(b, 1)? };
        let nbt = self.transpose(nb)?;
        self.matmul(na, nbt)
    }

    /// Max-shifted softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let x = self.value(a);
        check_axis("softmax", x, axis)?;
        let (outer, n, inner) = lanes(x.shape(), axis);
        let mut data = vec![0.0; x.numel()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * n + k) * inner + i;
                let max = (0..n).map(|k| x.data()[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for k in 0..n {
                    let e = (x.data()[idx(k)] - max).exp();
                    data[idx(k)] = e;
                    total += e;
                }
                for k in 0..n {
                    data[idx(k)] /= total;
                }
            }
        }
        let out = tensor(x.shape().to_vec(), data);
        Ok(self.record(out, &[a], Op::Softmax { input: a, axis }))
    }

    /// Row-wise `ln Σ_{k: mask[r,k]} exp(x[r,k])` of a 2-D input, evaluated with
    /// max subtraction. Rows with an empty mask yield 0 and pass no gradient.
    pub fn masked_logsumexp(&mut self, a: Var, mask: Vec<bool>) -> Result<Var> {
        let x = self.value(a);
        if x.ndim() != 2 || mask.len() != x.numel() {
            return Err(Error::dim(
                "masked_logsumexp",
                format!("input {:?} with mask of {} entries", x.shape(), mask.len()),
            ));
        }
        let (rows, cols) = (x.shape()[0], x.shape()[1]);
        let data = (0..rows)
            .map(|r| {
                let row = &x.data()[r * cols..(r + 1) * cols];
                let m = &mask[r * cols..(r + 1) * cols];
                masked_lse(row, m).unwrap_or(0.0)
            })
            .collect();
        let out = tensor(vec![rows], data);
        Ok(self.record(out, &[a], Op::MaskedLogSumExp { input: a, mask }))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return Err(Error::Contract("concat of zero tensors".into()));
        };
        let base = self.value(first).shape().to_vec();
        check_axis("concat", self.value(first), axis)?;
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let conform = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (p, q))| d == axis || p == q);
            if !conform {
                return Err(Error::dim("concat", format!("{s:?} vs {base:?} along axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = lanes(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let out = tensor(shape, data);
        Ok(self.record(out, inputs, Op::Concat { inputs: inputs.to_vec(), axis }))
    }

    /// Entries `start..end` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let x = self.value(a);
        check_axis("slice", x, axis)?;
        let (outer, n, inner) = lanes(x.shape(), axis);
        if start > end || end > n {
            return Err(Error::dim("slice", format!("range {start}..{end} on axis of extent {n}")));
        }
        let mut data = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            data.extend_from_slice(&x.data()[(o * n + start) * inner..(o * n + end) * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = end - start;
        let out = tensor(shape, data);
        Ok(self.record(out, &[a], Op::Slice { input: a, axis, start }))
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.ndim() != 2 {
            return Err(Error::dim("transpose", format!("expected 2-D, got {:?}", x.shape())));
        }
        let (r, c) = (x.shape()[0], x.shape()[1]);
        let out = tensor(vec![c, r], transpose_raw(x.data(), r, c));
        Ok(self.record(out, &[a], Op::Transpose(a)))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(a).clone().reshaped(shape)?;
        Ok(self.record(out, &[a], Op::Reshape(a)))
    }
}

fn masked_lse(row: &[f64], mask: &[bool]) -> Option<f64> {
    let max = row
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|(v, _)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    let s: f64 = row.iter().zip(mask).filter(|(_, m)| **m).map(|(v, _)| (v - max).exp()).sum();
    Some(max + s.ln())
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

/// Propagates the upstream gradient `g` of node `idx` into its inputs.
pub(super) fn backward_op(nodes: &[Node], idx: usize, op: &Op, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let val = |v: Var| &nodes[v.0].value;
    let out = &nodes[idx].value;
    let add_into = |slot: &mut [f64], src: &[f64]| {
        for (s, x) in slot.iter_mut().zip(src) {
            *s += x;
        }
    };
    match op {
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, |s| add_into(s, g));
            accumulate(nodes, grads, *b, |s| add_into(s, g));
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, |s| add_into(s, g));
            accumulate(nodes, grads, *b, |s| {
                for (s, x) in s.iter_mut().zip(g) {
                    *s -= x;
                }
            });
        }
        Op::Mul(a, b) => {
            let (x, y) = (val(*a).data(), val(*b).data());
            accumulate(nodes, grads, *a, |s| {
                for ((s, gv), yv) in s.iter_mut().zip(g).zip(y) {
                    *s += gv * yv;
                }
            });
            accumulate(nodes, grads, *b, |s| {
                for ((s, gv), xv) in s.iter_mut().zip(g).zip(x) {
                    *s += gv * xv;
                }
            });
        }
        Op::MulScalar(a, k) => accumulate(nodes, grads, *a, |s| {
            for (s, gv) in s.iter_mut().zip(g) {
                *s += gv * k;
            }
        }),
        Op::AddScalar(a) | Op::Reshape(a) => accumulate(nodes, grads, *a, |s| add_into(s, g)),
        Op::AddBias { input, bias, axis } => {
            accumulate(nodes, grads, *input, |s| add_into(s, g));
            let (outer, n, inner) = lanes(val(*input).shape(), *axis);
            accumulate(nodes, grads, *bias, |s| {
                for o in 0..outer {
                    for (k, sk) in s.iter_mut().enumerate().take(n) {
                        let base = (o * n + k) * inner;
                        *sk += g[base..base + inner].iter().sum::<f64>();
                    }
                }
            });
        }
        Op::Matmul(a, b) => {
            let (x, y) = (val(*a), val(*b));
            let (m, k, n) = (x.shape()[0], x.shape()[1], y.shape()[1]);
            if nodes[a.0].requires_grad {
                let bt = transpose_raw(y.data(), k, n);
                let ga = matmul_raw(g, &bt, m, n, k);
                accumulate(nodes, grads, *a, |s| add_into(s, &ga));
            }
            if nodes[b.0].requires_grad {
                let at = transpose_raw(x.data(), m, k);
                let gb = matmul_raw(&at, g, k, m, n);
                accumulate(nodes, grads, *b, |s| add_into(s, &gb));
            }
        }
        Op::Conv2d { input, weight, bias, geo } => {
            let (gin, gw, gb) = conv::backward(
                geo,
                val(*input).data(),
                val(*weight).data(),
                g,
                nodes[input.0].requires_grad,
                nodes[weight.0].requires_grad,
            );
            if let Some(gin) = gin {
                accumulate(nodes, grads, *input, |s| add_into(s, &gin));
            }
            if let Some(gw) = gw {
                accumulate(nodes, grads, *weight, |s| add_into(s, &gw));
            }
            if let Some(b) = bias {
                accumulate(nodes, grads, *b, |s| add_into(s, &gb));
            }
        }
        Op::AvgPool { input, window } => {
            let len = *val(*input).shape().last().unwrap();
            let out_len = *out.shape().last().unwrap();
            let w = *window;
            accumulate(nodes, grads, *input, |s| {
                for (r, grow) in g.chunks(out_len).enumerate() {
                    for (j, gv) in grow.iter().enumerate() {
                        let base = r * len + j * w;
                        for si in &mut s[base..base + w] {
                            *si += gv / w as f64;
                        }
                    }
                }
            });
        }
        Op::Relu(a) => {
            let x = val(*a).data();
            accumulate(nodes, grads, *a, |s| {
                for ((s, gv), xv) in s.iter_mut().zip(g).zip(x) {
                    if *xv > 0.0 {
                        *s += gv;
                    }
                }
            });
        }
        Op::Exp(a) => accumulate(nodes, grads, *a, |s| {
            for ((s, gv), yv) in s.iter_mut().zip(g).zip(out.data()) {
                *s += gv * yv;
            }
        }),
        Op::Log(a) => {
            let x = val(*a).data();
            accumulate(nodes, grads, *a, |s| {
                for ((s, gv), xv) in s.iter_mut().zip(g).zip(x) {
                    *s += gv / (xv + EPS);
                }
            });
        }
        Op::Sum(a) => accumulate(nodes, grads, *a, |s| s.iter_mut().for_each(|v| *v += g[0])),
        Op::Mean(a) => {
            let n = s_len(val(*a));
            accumulate(nodes, grads, *a, |s| s.iter_mut().for_each(|v| *v += g[0] / n));
        }
        Op::SumAxis { input, axis } => {
            let (outer, n, inner) = lanes(val(*input).shape(), *axis);
            accumulate(nodes, grads, *input, |s| {
                for o in 0..outer {
                    for k in 0..n {
                        let base = (o * n + k) * inner;
                        for i in 0..inner {
                            s[base + i] += g[o * inner + i];
                        }
                    }
                }
            });
        }
        Op::L2Normalize { input, axis, norms } => {
            let x = val(*input).data();
            let (outer, n, inner) = lanes(val(*input).shape(), *axis);
            accumulate(nodes, grads, *input, |s| {
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * n + k) * inner + i;
                        let norm = norms[o * inner + i];
                        let denom = norm + EPS;
                        let xg: f64 = (0..n).map(|k| x[idx(k)] * g[idx(k)]).sum();
                        let radial = if norm > 0.0 { xg / (norm * denom * denom) } else { 0.0 };
                        for k in 0..n {
                            s[idx(k)] += g[idx(k)] / denom - x[idx(k)] * radial;
                        }
                    }
                }
            });
        }
        Op::Softmax { input, axis } => {
            let y = out.data();
            let (outer, n, inner) = lanes(out.shape(), *axis);
            accumulate(nodes, grads, *input, |s| {
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * n + k) * inner + i;
                        let dot: f64 = (0..n).map(|k| g[idx(k)] * y[idx(k)]).sum();
                        for k in 0..n {
                            s[idx(k)] += y[idx(k)] * (g[idx(k)] - dot);
                        }
                    }
                }
            });
        }
        Op::MaskedLogSumExp { input, mask } => {
            let x = val(*input);
            let cols = x.shape()[1];
            accumulate(nodes, grads, *input, |s| {
                for (r, gv) in g.iter().enumerate() {
                    let row = &x.data()[r * cols..(r + 1) * cols];
                    let m = &mask[r * cols..(r + 1) * cols];
                    let Some(lse) = masked_lse(row, m) else { continue };
                    for c in 0..cols {
                        if m[c] {
                            s[r * cols + c] += gv * (row[c] - lse).exp();
                        }
                    }
                }
            });
        }
        Op::Concat { inputs, axis } => {
            let (outer, total, inner) = lanes(out.shape(), *axis);
            let mut offset = 0;
            for v in inputs {
                let ext = val(*v).shape()[*axis];
                accumulate(nodes, grads, *v, |s| {
                    for o in 0..outer {
                        let src = &g[(o * total + offset) * inner..(o * total + offset + ext) * inner];
                        add_into(&mut s[o * ext * inner..(o + 1) * ext * inner], src);
                    }
                });
                offset += ext;
            }
        }
        Op::Slice { input, axis, start } => {
            let (outer, n, inner) = lanes(val(*input).shape(), *axis);
            let ext = out.shape()[*axis];
            accumulate(nodes, grads, *input, |s| {
                for o in 0..outer {
                    let dst = &mut s[(o * n + start) * inner..(o * n + start + ext) * inner];
                    add_into(dst, &g[o * ext * inner..(o + 1) * ext * inner]);
                }
            });
        }
        Op::Transpose(a) => {
            let (r, c) = (val(*a).shape()[0], val(*a).shape()[1]);
            let gt = transpose_raw(g, c, r);
            accumulate(nodes, grads, *a, |s| add_into(s, &gt));
        }
    }
}

fn s_len(t: &Tensor) -> f64 {
    t.numel().max(1) as f64
}
