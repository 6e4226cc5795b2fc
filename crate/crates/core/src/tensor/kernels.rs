// Slice-level forward/backward kernels. The tape owns shapes and
// bookkeeping; everything here works on flat row-major buffers.

use crate::error::{Error, Result};
use crate::exec;

/// Shape bookkeeping for a (grouped) 2-D cross-correlation.
///
/// Output extents use floor semantics: `(H + 2p - K) / s + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(
        op: &'static str,
        input: [usize; 4],
        weight: [usize; 4],
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Self> {
        let [batch, in_channels, in_h, in_w] = input;
        let [out_channels, per_group, kh, kw] = weight;
        if stride == 0 {
            return Err(Error::shape(op, "stride must be positive"));
        }
        if groups == 0 || in_channels % groups != 0 || out_channels % groups != 0 {
            return Err(Error::shape(
                op,
                format!("{groups} groups do not divide in_channels {in_channels} / out_channels {out_channels}"),
            ));
        }
        if per_group != in_channels / groups {
            return Err(Error::shape(
                op,
                format!(
                    "weight dim 1 is {per_group} but input has {in_channels} channels ({} per group)",
                    in_channels / groups
                ),
            ));
        }
        if kh != kw {
            return Err(Error::shape(op, format!("kernel must be square, got {kh}x{kw}")));
        }
        let extent = |size: usize, dim: &str| -> Result<usize> {
            let padded = size + 2 * padding;
            if padded < kh {
                return Err(Error::shape(
                    op,
                    format!("{dim} extent {size} with padding {padding} is smaller than kernel {kh}"),
                ));
            }
            Ok((padded - kh) / stride + 1)
        };
        let out_h = extent(in_h, "height")?;
        let out_w = extent(in_w, "width")?;
        Ok(ConvGeometry {
            batch,
            in_channels,
            in_h,
            in_w,
            out_channels,
            kernel: kh,
            stride,
            padding,
            groups,
            out_h,
            out_w,
        })
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.out_channels, self.out_h, self.out_w]
    }

    fn in_per_group(&self) -> usize {
        self.in_channels / self.groups
    }

    fn out_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    /// Output positions `o` along one axis for which `o*stride + k - padding`
    /// lands inside `[0, size)`.
    fn valid_range(&self, k: usize, size: usize, out: usize) -> (usize, usize) {
        let (s, p) = (self.stride, self.padding);
        let lo = if p > k { (p - k).div_ceil(s) } else { 0 };
        let hi = if size + p > k {
            ((size - 1 + p - k) / s + 1).min(out)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

pub(crate) fn conv_forward(
    g: &ConvGeometry,
    input: &[f32],
    weight: &[f32],
    bias: Option<&[f32]>,
) -> Vec<f32> {
    let out_plane = g.out_h * g.out_w;
    let in_plane = g.in_h * g.in_w;
    let (ipg, opg, k) = (g.in_per_group(), g.out_per_group(), g.kernel);
    let mut out = vec![0.0f32; g.batch * g.out_channels * out_plane];
    exec::for_each_chunk(&mut out, out_plane, |idx, plane| {
        let (b, o) = (idx / g.out_channels, idx % g.out_channels);
        if let Some(bias) = bias {
            plane.iter_mut().for_each(|v| *v = bias[o]);
        }
        let group = o / opg;
        for ci in 0..ipg {
            let c = group * ipg + ci;
            let src = &input[(b * g.in_channels + c) * in_plane..][..in_plane];
            for ky in 0..k {
                let (y0, y1) = g.valid_range(ky, g.in_h, g.out_h);
                for kx in 0..k {
                    let wv = weight[((o * ipg + ci) * k + ky) * k + kx];
                    let (x0, x1) = g.valid_range(kx, g.in_w, g.out_w);
                    for oy in y0..y1 {
                        let iy = oy * g.stride + ky - g.padding;
                        let row = &src[iy * g.in_w..][..g.in_w];
                        let dst = &mut plane[oy * g.out_w..][..g.out_w];
                        if g.stride == 1 {
                            let src = &row[x0 + kx - g.padding..x1 + kx - g.padding];
                            for (d, &v) in dst[x0..x1].iter_mut().zip(src) {
                                *d += wv * v;
                            }
                        } else {
                            for ox in x0..x1 {
                                dst[ox] += wv * row[ox * g.stride + kx - g.padding];
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

pub(crate) fn conv_backward_input(g: &ConvGeometry, weight: &[f32], grad_out: &[f32]) -> Vec<f32> {
    let out_plane = g.out_h * g.out_w;
    let in_plane = g.in_h * g.in_w;
    let (ipg, opg, k) = (g.in_per_group(), g.out_per_group(), g.kernel);
    let mut grad_in = vec![0.0f32; g.batch * g.in_channels * in_plane];
    exec::for_each_chunk(&mut grad_in, in_plane, |idx, plane| {
        let (b, c) = (idx / g.in_channels, idx % g.in_channels);
        let group = c / ipg;
        let ci = c - group * ipg;
        for o in group * opg..(group + 1) * opg {
            let go = &grad_out[(b * g.out_channels + o) * out_plane..][..out_plane];
            for ky in 0..k {
                let (y0, y1) = g.valid_range(ky, g.in_h, g.out_h);
                for kx in 0..k {
                    let wv = weight[((o * ipg + ci) * k + ky) * k + kx];
                    let (x0, x1) = g.valid_range(kx, g.in_w, g.out_w);
                    for oy in y0..y1 {
                        let iy = oy * g.stride + ky - g.padding;
                        let grow = &go[oy * g.out_w..][..g.out_w];
                        let dst = &mut plane[iy * g.in_w..][..g.in_w];
                        if g.stride == 1 {
                            let dst = &mut dst[x0 + kx - g.padding..x1 + kx - g.padding];
                            for (d, &v) in dst.iter_mut().zip(&grow[x0..x1]) {
                                *d += wv * v;
                            }
                        } else {
                            for ox in x0..x1 {
                                dst[ox * g.stride + kx - g.padding] += wv * grow[ox];
                            }
                        }
                    }
                }
            }
        }
    });
    grad_in
}

pub(crate) fn conv_backward_weight(g: &ConvGeometry, input: &[f32], grad_out: &[f32]) -> Vec<f32> {
    let out_plane = g.out_h * g.out_w;
    let in_plane = g.in_h * g.in_w;
    let (ipg, opg, k) = (g.in_per_group(), g.out_per_group(), g.kernel);
    let per_out = ipg * k * k;
    let mut grad_w = vec![0.0f32; g.out_channels * per_out];
    exec::for_each_chunk(&mut grad_w, per_out, |o, gw| {
        let group = o / opg;
        for b in 0..g.batch {
            let go = &grad_out[(b * g.out_channels + o) * out_plane..][..out_plane];
            for ci in 0..ipg {
                let c = group * ipg + ci;
                let src = &input[(b * g.in_channels + c) * in_plane..][..in_plane];
                for ky in 0..k {
                    let (y0, y1) = g.valid_range(ky, g.in_h, g.out_h);
                    for kx in 0..k {
                        let (x0, x1) = g.valid_range(kx, g.in_w, g.out_w);
                        let mut acc = 0.0f32;
                        for oy in y0..y1 {
                            let iy = oy * g.stride + ky - g.padding;
                            let row = &src[iy * g.in_w..][..g.in_w];
                            let grow = &go[oy * g.out_w..][..g.out_w];
                            if g.stride == 1 {
                                let src = &row[x0 + kx - g.padding..x1 + kx - g.padding];
                                for (&a, &b) in grow[x0..x1].iter().zip(src) {
                                    acc += a * b;
                                }
                            } else {
                                for ox in x0..x1 {
                                    acc += grow[ox] * row[ox * g.stride + kx - g.padding];
                                }
                            }
                        }
                        gw[(ci * k + ky) * k + kx] += acc;
                    }
                }
            }
        }
    });
    grad_w
}

pub(crate) fn conv_backward_bias(g: &ConvGeometry, grad_out: &[f32]) -> Vec<f32> {
    let out_plane = g.out_h * g.out_w;
    let mut grad_b = vec![0.0f32; g.out_channels];
    for b in 0..g.batch {
        for (o, gb) in grad_b.iter_mut().enumerate() {
            *gb += grad_out[(b * g.out_channels + o) * out_plane..][..out_plane]
                .iter()
                .sum::<f32>();
        }
    }
    grad_b
}

/// Saved statistics for the group-norm backward pass.
#[derive(Clone, Debug)]
pub(crate) struct GroupNormCache {
    pub normalized: Vec<f32>,
    pub inv_std: Vec<f32>,
}

pub(crate) fn group_norm_forward(
    dims: [usize; 4],
    groups: usize,
    input: &[f32],
    gamma: &[f32],
    beta: &[f32],
    eps: f32,
) -> (Vec<f32>, GroupNormCache) {
    let [batch, channels, h, w] = dims;
    let cpg = channels / groups;
    let group_len = cpg * h * w;
    let plane = h * w;
    let mut out = vec![0.0f32; input.len()];
    let mut normalized = vec![0.0f32; input.len()];
    let mut inv_std = vec![0.0f32; batch * groups];
    for bg in 0..batch * groups {
        let start = bg * group_len;
        let xs = &input[start..start + group_len];
        let mean = xs.iter().map(|&v| v as f64).sum::<f64>() / group_len as f64;
        let var = xs
            .iter()
            .map(|&v| {
                let d = v as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / group_len as f64;
        let istd = 1.0 / (var + eps as f64).sqrt();
        inv_std[bg] = istd as f32;
        let g = bg % groups;
        for (j, &x) in xs.iter().enumerate() {
            let c = g * cpg + j / plane;
            let xhat = ((x as f64 - mean) * istd) as f32;
            normalized[start + j] = xhat;
            out[start + j] = gamma[c] * xhat + beta[c];
        }
    }
    (out, GroupNormCache { normalized, inv_std })
}

/// Returns `(grad_input, grad_gamma, grad_beta)`.
pub(crate) fn group_norm_backward(
    dims: [usize; 4],
    groups: usize,
    cache: &GroupNormCache,
    gamma: &[f32],
    grad_out: &[f32],
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let [batch, channels, h, w] = dims;
    let cpg = channels / groups;
    let plane = h * w;
    let group_len = cpg * plane;
    let mut grad_in = vec![0.0f32; grad_out.len()];
    let mut grad_gamma = vec![0.0f32; channels];
    let mut grad_beta = vec![0.0f32; channels];
    for bg in 0..batch * groups {
        let start = bg * group_len;
        let g = bg % groups;
        let xhat = &cache.normalized[start..start + group_len];
        let dy = &grad_out[start..start + group_len];
        let mut sum_dxhat = 0.0f64;
        let mut sum_dxhat_xhat = 0.0f64;
        for j in 0..group_len {
            let c = g * cpg + j / plane;
            grad_gamma[c] += dy[j] * xhat[j];
            grad_beta[c] += dy[j];
            let dxhat = (dy[j] * gamma[c]) as f64;
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat[j] as f64;
        }
        let n = group_len as f64;
        let istd = cache.inv_std[bg] as f64;
        for j in 0..group_len {
            let c = g * cpg + j / plane;
            let dxhat = (dy[j] * gamma[c]) as f64;
            let v = istd * (dxhat - sum_dxhat / n - xhat[j] as f64 * sum_dxhat_xhat / n);
            grad_in[start + j] = v as f32;
        }
    }
    (grad_in, grad_gamma, grad_beta)
}

/// `y[b,o] = bias[o] + sum_f x[b,f] * w[o,f]`.
pub(crate) fn linear_forward(
    batch: usize,
    features: usize,
    outputs: usize,
    x: &[f32],
    w: &[f32],
    bias: &[f32],
) -> Vec<f32> {
    let mut y = vec![0.0f32; batch * outputs];
    for b in 0..batch {
        let xr = &x[b * features..][..features];
        for o in 0..outputs {
            let wr = &w[o * features..][..features];
            y[b * outputs + o] = bias[o] + xr.iter().zip(wr).map(|(a, c)| a * c).sum::<f32>();
        }
    }
    y
}

/// Returns `(grad_x, grad_w, grad_bias)`.
pub(crate) fn linear_backward(
    batch: usize,
    features: usize,
    outputs: usize,
    x: &[f32],
    w: &[f32],
    grad_y: &[f32],
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let mut gx = vec![0.0f32; batch * features];
    let mut gw = vec![0.0f32; outputs * features];
    let mut gb = vec![0.0f32; outputs];
    for b in 0..batch {
        let xr = &x[b * features..][..features];
        for o in 0..outputs {
            let gy = grad_y[b * outputs + o];
            gb[o] += gy;
            let wr = &w[o * features..][..features];
            let gxr = &mut gx[b * features..][..features];
            for f in 0..features {
                gxr[f] += gy * wr[f];
            }
            let gwr = &mut gw[o * features..][..features];
            for f in 0..features {
                gwr[f] += gy * xr[f];
            }
        }
    }
    (gx, gw, gb)
}

/// Row-wise softmax of `logits / temperature`, computed with max subtraction.
pub(crate) fn softmax_rows(logits: &[f32], classes: usize, temperature: f32) -> Vec<f32> {
    let mut out = vec![0.0f32; logits.len()];
    for (row, dst) in logits.chunks(classes).zip(out.chunks_mut(classes)) {
        let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v / temperature));
        let mut sum = 0.0f64;
        for (d, &v) in dst.iter_mut().zip(row) {
            let e = ((v / temperature - max) as f64).exp();
            *d = e as f32;
            sum += e;
        }
        dst.iter_mut().for_each(|d| *d = (*d as f64 / sum) as f32);
    }
    out
}

/// Row-wise `log(sum(exp(row)))` with max subtraction.
pub(crate) fn log_sum_exp_rows(logits: &[f32], classes: usize, temperature: f32) -> Vec<f64> {
    logits
        .chunks(classes)
        .map(|row| {
            let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v / temperature)) as f64;
            let s: f64 = row.iter().map(|&v| (v as f64 / temperature as f64 - max).exp()).sum();
            max + s.ln()
        })
        .collect()
}
