//! Loop kernels behind the differentiable image ops.
//!
//! All kernels use cross-correlation (the kernel is not flipped) and a fixed
//! accumulation order, so results are bit-reproducible.

use super::Tensor;

/// Output extent of a strided, zero-padded window along one axis, or `None`
/// when the window does not fit.
pub fn conv2d_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 || kernel > input + 2 * padding {
        return None;
    }
    Some((input + 2 * padding - kernel) / stride + 1)
}

pub fn pool_output_size(input: usize, kernel: usize, stride: usize) -> Option<usize> {
    conv2d_output_size(input, kernel, stride, 0)
}

/// Bilinear upsampling seed of size `k x k`, replicated on the channel
/// diagonal: shape `[channels, channels, k, k]`, off-diagonal blocks zero.
pub fn bilinear_kernel(channels: usize, k: usize) -> Tensor {
    let f = k.div_ceil(2) as f64;
    let center = (2.0 * f - 1.0 - (k % 2) as f64) / (2.0 * f);
    let taps: Vec<f64> = (0..k).map(|i| 1.0 - (i as f64 / f - center).abs()).collect();
    let mut t = Tensor::zeros(&[channels, channels, k, k]);
    let data = t.data_mut();
    for c in 0..channels {
        let base = (c * channels + c) * k * k;
        for y in 0..k {
            for x in 0..k {
                data[base + y * k + x] = taps[y] * taps[x];
            }
        }
    }
    t
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

/// Output positions `o` in `[lo, hi)` whose tap `o * stride + k - pad` lands
/// inside `[0, input)`.
fn valid_range(k: usize, pad: usize, stride: usize, input: usize, out: usize) -> (usize, usize) {
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi = if input + pad <= k { 0 } else { (input + pad - k).div_ceil(stride) };
    let hi = hi.min(out);
    (lo.min(hi), hi)
}

pub(crate) fn conv2d_forward(input: &[f64], weight: &[f64], bias: Option<&[f64]>, g: &ConvGeom) -> Vec<f64> {
    let (in_plane, out_plane) = (g.h * g.w, g.oh * g.ow);
    let mut out = vec![0.0; g.n * g.cout * out_plane];
    for n in 0..g.n {
        for co in 0..g.cout {
            let o = &mut out[(n * g.cout + co) * out_plane..][..out_plane];
            if let Some(b) = bias {
                o.fill(b[co]);
            }
            for ci in 0..g.cin {
                let x = &input[(n * g.cin + ci) * in_plane..][..in_plane];
                for ky in 0..g.kh {
                    let (oy0, oy1) = valid_range(ky, g.pad, g.stride, g.h, g.oh);
                    for kx in 0..g.kw {
                        let (ox0, ox1) = valid_range(kx, g.pad, g.stride, g.w, g.ow);
                        let wv = weight[((co * g.cin + ci) * g.kh + ky) * g.kw + kx];
                        for oy in oy0..oy1 {
                            let iy = oy * g.stride + ky - g.pad;
                            let x_row = &x[iy * g.w..][..g.w];
                            let o_row = &mut o[oy * g.ow..][..g.ow];
                            if g.stride == 1 {
                                let shift = kx as isize - g.pad as isize;
                                let xs = &x_row[(ox0 as isize + shift) as usize..(ox1 as isize + shift) as usize];
                                for (ov, xv) in o_row[ox0..ox1].iter_mut().zip(xs) {
                                    *ov += wv * xv;
                                }
                            } else {
                                for ox in ox0..ox1 {
                                    o_row[ox] += wv * x_row[ox * g.stride + kx - g.pad];
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

/// Gradient with respect to the convolution input; also the forward pass of
/// a transposed convolution.
pub(crate) fn conv2d_backward_input(grad_out: &[f64], weight: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (in_plane, out_plane) = (g.h * g.w, g.oh * g.ow);
    let mut grad_in = vec![0.0; g.n * g.cin * in_plane];
    for n in 0..g.n {
        for ci in 0..g.cin {
            let gi = &mut grad_in[(n * g.cin + ci) * in_plane..][..in_plane];
            for co in 0..g.cout {
                let go = &grad_out[(n * g.cout + co) * out_plane..][..out_plane];
                for ky in 0..g.kh {
                    let (oy0, oy1) = valid_range(ky, g.pad, g.stride, g.h, g.oh);
                    for kx in 0..g.kw {
                        let (ox0, ox1) = valid_range(kx, g.pad, g.stride, g.w, g.ow);
                        let wv = weight[((co * g.cin + ci) * g.kh + ky) * g.kw + kx];
                        for oy in oy0..oy1 {
                            let iy = oy * g.stride + ky - g.pad;
                            let go_row = &go[oy * g.ow..][..g.ow];
                            let gi_row = &mut gi[iy * g.w..][..g.w];
                            for ox in ox0..ox1 {
                                gi_row[ox * g.stride + kx - g.pad] += wv * go_row[ox];
                            }
                        }
                    }
                }
            }
        }
    }
    grad_in
}

pub(crate) fn conv2d_backward_weight(grad_out: &[f64], input: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (in_plane, out_plane) = (g.h * g.w, g.oh * g.ow);
    let mut grad_w = vec![0.0; g.cout * g.cin * g.kh * g.kw];
    for co in 0..g.cout {
        for ci in 0..g.cin {
            for ky in 0..g.kh {
                let (oy0, oy1) = valid_range(ky, g.pad, g.stride, g.h, g.oh);
                for kx in 0..g.kw {
                    let (ox0, ox1) = valid_range(kx, g.pad, g.stride, g.w, g.ow);
                    let mut acc = 0.0;
                    for n in 0..g.n {
                        let go = &grad_out[(n * g.cout + co) * out_plane..][..out_plane];
                        let x = &input[(n * g.cin + ci) * in_plane..][..in_plane];
                        for oy in oy0..oy1 {
                            let iy = oy * g.stride + ky - g.pad;
                            let go_row = &go[oy * g.ow..][..g.ow];
                            let x_row = &x[iy * g.w..][..g.w];
                            for ox in ox0..ox1 {
                                acc += go_row[ox] * x_row[ox * g.stride + kx - g.pad];
                            }
                        }
                    }
                    grad_w[((co * g.cin + ci) * g.kh + ky) * g.kw + kx] = acc;
                }
            }
        }
    }
    grad_w
}

pub(crate) fn conv2d_backward_bias(grad_out: &[f64], g: &ConvGeom) -> Vec<f64> {
    let out_plane = g.oh * g.ow;
    let mut grad_b = vec![0.0; g.cout];
    for n in 0..g.n {
        for (co, gb) in grad_b.iter_mut().enumerate() {
            *gb += grad_out[(n * g.cout + co) * out_plane..][..out_plane].iter().sum::<f64>();
        }
    }
    grad_b
}

/// Max pooling; returns the pooled values and, per output cell, the flat
/// input index of the first maximum in row-major window order.
pub(crate) fn max_pool_forward(
    input: &[f64],
    [n, c, h, w]: [usize; 4],
    k: usize,
    stride: usize,
    (oh, ow): (usize, usize),
) -> (Vec<f64>, Vec<usize>) {
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = base + oy * stride * w + ox * stride;
                for ky in 0..k {
                    let row = base + (oy * stride + ky) * w + ox * stride;
                    for kx in 0..k {
                        let v = input[row + kx];
                        if v > best {
                            best = v;
                            best_idx = row + kx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    (out, argmax)
}
