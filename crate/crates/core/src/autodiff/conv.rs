//! Direct (non-FFT) grouped 2-D cross-correlation over `[batch, channels, height, width]`.
//!
//! The width axis is the contiguous one, so the inner loops run over row
//! slices. Everything else is a plain nested loop.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dOptions {
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
}

impl Default for Conv2dOptions {
    fn default() -> Self {
        Conv2dOptions { stride: (1, 1), dilation: (1, 1), padding: (0, 0), groups: 1 }
    }
}

/// Fully resolved extents of one convolution call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub in_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_ch: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub opts: Conv2dOptions,
}

fn out_extent(input: usize, kernel: usize, stride: usize, dilation: usize, pad: usize) -> Option<usize> {
    let span = dilation * (kernel - 1) + 1;
    let padded = input + 2 * pad;
    if padded < span {
        None
    } else {
        Some((padded - span) / stride + 1)
    }
}

impl ConvGeometry {
    pub fn resolve(input: &[usize], weight: &[usize], opts: Conv2dOptions) -> Result<Self> {
        if input.len() != 4 || weight.len() != 4 {
            return Err(Error::dim(
                "conv2d",
                format!("expected 4-D input and weight, got {input:?} and {weight:?}"),
            ));
        }
        let (s, d) = (opts.stride, opts.dilation);
        if s.0 == 0 || s.1 == 0 || d.0 == 0 || d.1 == 0 || opts.groups == 0 {
            return Err(Error::Contract(format!(
                "conv2d stride {s:?}, dilation {d:?} and groups {} must be >= 1",
                opts.groups
            )));
        }
        let [batch, in_ch, in_h, in_w] = [input[0], input[1], input[2], input[3]];
        let [out_ch, cin_g, k_h, k_w] = [weight[0], weight[1], weight[2], weight[3]];
        let g = opts.groups;
        if in_ch % g != 0 || out_ch % g != 0 || in_ch / g != cin_g {
            return Err(Error::dim(
                "conv2d",
                format!("{in_ch} input channels, {out_ch} output channels, weight expects {cin_g} per group, groups {g}"),
            ));
        }
        if k_h == 0 || k_w == 0 {
            return Err(Error::dim("conv2d", format!("empty kernel {k_h}x{k_w}")));
        }
        let out_h = out_extent(in_h, k_h, s.0, d.0, opts.padding.0);
        let out_w = out_extent(in_w, k_w, s.1, d.1, opts.padding.1);
        match (out_h, out_w) {
            (Some(out_h), Some(out_w)) => Ok(ConvGeometry {
                batch,
                in_ch,
                in_h,
                in_w,
                out_ch,
                k_h,
                k_w,
                out_h,
                out_w,
                opts,
            }),
            _ => Err(Error::dim(
                "conv2d",
                format!("input {in_h}x{in_w} smaller than dilated kernel {k_h}x{k_w} (dilation {d:?})"),
            )),
        }
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.batch, self.out_ch, self.out_h, self.out_w]
    }

    fn in_per_group(&self) -> usize {
        self.in_ch / self.opts.groups
    }

    fn out_per_group(&self) -> usize {
        self.out_ch / self.opts.groups
    }

    /// Input row touched by output row `oh` through kernel row `kh`.
    fn in_row(&self, oh: usize, kh: usize) -> Option<usize> {
        let pos = (oh * self.opts.stride.0 + kh * self.opts.dilation.0) as isize
            - self.opts.padding.0 as isize;
        (pos >= 0 && (pos as usize) < self.in_h).then_some(pos as usize)
    }

    /// Output columns `[lo, hi)` whose input column through tap `kw` is in range,
    /// plus the input column of `lo`.
    fn col_range(&self, kw: usize) -> (usize, usize, usize) {
        let sw = self.opts.stride.1 as isize;
        let offset = (kw * self.opts.dilation.1) as isize - self.opts.padding.1 as isize;
        // need 0 <= ow*sw + offset < in_w
        let lo = if offset >= 0 { 0 } else { ((-offset) + sw - 1) / sw };
        let hi_excl = {
            let limit = self.in_w as isize - offset; // ow*sw < limit
            if limit <= 0 {
                0
            } else {
                ((limit + sw - 1) / sw).min(self.out_w as isize)
            }
        };
        let lo = lo.min(self.out_w as isize);
        if hi_excl <= lo {
            return (0, 0, 0);
        }
        (lo as usize, hi_excl as usize, (lo * sw + offset) as usize)
    }
}

pub(crate) fn forward(geo: &ConvGeometry, input: &[f64], weight: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let g = geo;
    let mut out = vec![0.0; g.batch * g.out_ch * g.out_h * g.out_w];
    let (cin_g, cout_g) = (g.in_per_group(), g.out_per_group());
    let sw = g.opts.stride.1;
    let in_plane = g.in_h * g.in_w;
    let out_plane = g.out_h * g.out_w;
    for b in 0..g.batch {
        for co in 0..g.out_ch {
            let group = co / cout_g;
            let out_base = (b * g.out_ch + co) * out_plane;
            if let Some(bias) = bias {
                out[out_base..out_base + out_plane].fill(bias[co]);
            }
            for ci_local in 0..cin_g {
                let ci = group * cin_g + ci_local;
                let in_base = (b * g.in_ch + ci) * in_plane;
                for kh in 0..g.k_h {
                    for kw in 0..g.k_w {
                        let w = weight[((co * cin_g + ci_local) * g.k_h + kh) * g.k_w + kw];
                        let (lo, hi, iw0) = g.col_range(kw);
                        if lo == hi {
                            continue;
                        }
                        for oh in 0..g.out_h {
                            let Some(ih) = g.in_row(oh, kh) else { continue };
                            let orow = &mut out[out_base + oh * g.out_w + lo..out_base + oh * g.out_w + hi];
                            let irow = &input[in_base + ih * g.in_w..in_base + (ih + 1) * g.in_w];
                            if sw == 1 {
                                for (o, x) in orow.iter_mut().zip(&irow[iw0..iw0 + (hi - lo)]) {
                                    *o += w * x;
                                }
                            } else {
                                for (j, o) in orow.iter_mut().enumerate() {
                                    *o += w * irow[iw0 + j * sw];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients with respect to input, weight and bias given the upstream gradient.
pub(crate) fn backward(
    geo: &ConvGeometry,
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    need_input: bool,
    need_weight: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>, Vec<f64>) {
    let g = geo;
    let (cin_g, cout_g) = (g.in_per_group(), g.out_per_group());
    let sw = g.opts.stride.1;
    let in_plane = g.in_h * g.in_w;
    let out_plane = g.out_h * g.out_w;
    let mut gin = need_input.then(|| vec![0.0; input.len()]);
    let mut gw = need_weight.then(|| vec![0.0; weight.len()]);
    let mut gb = vec![0.0; g.out_ch];
    for b in 0..g.batch {
        for co in 0..g.out_ch {
            let group = co / cout_g;
            let out_base = (b * g.out_ch + co) * out_plane;
            gb[co] += grad_out[out_base..out_base + out_plane].iter().sum::<f64>();
            for ci_local in 0..cin_g {
                let ci = group * cin_g + ci_local;
                let in_base = (b * g.in_ch + ci) * in_plane;
                for kh in 0..g.k_h {
                    for kw in 0..g.k_w {
                        let widx = ((co * cin_g + ci_local) * g.k_h + kh) * g.k_w + kw;
                        let w = weight[widx];
                        let (lo, hi, iw0) = g.col_range(kw);
                        if lo == hi {
                            continue;
                        }
                        let mut acc = 0.0;
                        for oh in 0..g.out_h {
                            let Some(ih) = g.in_row(oh, kh) else { continue };
                            let go = &grad_out[out_base + oh * g.out_w + lo..out_base + oh * g.out_w + hi];
                            let row_start = in_base + ih * g.in_w;
                            if sw == 1 {
                                let irow = &input[row_start + iw0..row_start + iw0 + (hi - lo)];
                                if need_weight {
                                    acc += go.iter().zip(irow).map(|(a, b)| a * b).sum::<f64>();
                                }
                                if let Some(gin) = gin.as_mut() {
                                    let grow = &mut gin[row_start + iw0..row_start + iw0 + (hi - lo)];
                                    for (gi, gval) in grow.iter_mut().zip(go) {
                                        *gi += w * gval;
                                    }
                                }
                            } else {
                                for (j, gval) in go.iter().enumerate() {
                                    let idx = row_start + iw0 + j * sw;
                                    acc += gval * input[idx];
                                    if let Some(gin) = gin.as_mut() {
                                        gin[idx] += w * gval;
                                    }
                                }
                            }
                        }
                        if let Some(gw) = gw.as_mut() {
                            gw[widx] += acc;
                        }
                    }
                }
            }
        }
    }
    (gin, gw, gb)
}
