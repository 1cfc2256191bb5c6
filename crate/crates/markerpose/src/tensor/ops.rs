//! Differentiable operations.
//!
//! Convolution dominates runtime; its kernels keep the innermost loop a
//! contiguous row walk so the compiler can vectorize, and parallelize over
//! output planes only (each element is written by exactly one thread, so
//! results are bitwise identical for any thread count).

use rayon::prelude::*;

use super::{accumulate_grad, Element, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy)]
struct ConvGeom {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

fn conv_forward<T: Element>(input: &[T], weight: &[T], bias: &[T], g: ConvGeom) -> Vec<T> {
    let mut out = vec![T::ZERO; g.n * g.cout * g.ho * g.wo];
    out.par_chunks_mut(g.ho * g.wo)
        .enumerate()
        .for_each(|(plane_idx, plane)| {
            let b = plane_idx / g.cout;
            let oc = plane_idx % g.cout;
            plane.fill(bias[oc]);
            for ic in 0..g.cin {
                let in_plane = &input[(b * g.cin + ic) * g.h * g.w..][..g.h * g.w];
                for ky in 0..g.k {
                    for kx in 0..g.k {
                        let wv = weight[((oc * g.cin + ic) * g.k + ky) * g.k + kx];
                        if g.stride == 1 {
                            let oy_lo = g.pad.saturating_sub(ky);
                            let oy_hi = (g.h + g.pad - ky).min(g.ho);
                            let ox_lo = g.pad.saturating_sub(kx);
                            let ox_hi = (g.w + g.pad - kx).min(g.wo);
                            if ox_lo >= ox_hi {
                                continue;
                            }
                            for oy in oy_lo..oy_hi {
                                let iy = oy + ky - g.pad;
                                let src_start = iy * g.w + ox_lo + kx - g.pad;
                                let src = &in_plane[src_start..src_start + (ox_hi - ox_lo)];
                                let dst = &mut plane[oy * g.wo + ox_lo..oy * g.wo + ox_hi];
                                for (d, s) in dst.iter_mut().zip(src) {
                                    *d += wv * *s;
                                }
                            }
                        } else {
                            for oy in 0..g.ho {
                                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                if iy < 0 || iy >= g.h as isize {
                                    continue;
                                }
                                for ox in 0..g.wo {
                                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                    if ix < 0 || ix >= g.w as isize {
                                        continue;
                                    }
                                    plane[oy * g.wo + ox] +=
                                        wv * in_plane[iy as usize * g.w + ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        });
    out
}

fn conv_backward_input<T: Element>(grad_out: &[T], weight: &[T], g: ConvGeom) -> Vec<T> {
    let mut grad_in = vec![T::ZERO; g.n * g.cin * g.h * g.w];
    grad_in
        .par_chunks_mut(g.h * g.w)
        .enumerate()
        .for_each(|(plane_idx, gin_plane)| {
            let b = plane_idx / g.cin;
            let ic = plane_idx % g.cin;
            for oc in 0..g.cout {
                let gout_plane = &grad_out[(b * g.cout + oc) * g.ho * g.wo..][..g.ho * g.wo];
                for ky in 0..g.k {
                    for kx in 0..g.k {
                        let wv = weight[((oc * g.cin + ic) * g.k + ky) * g.k + kx];
                        if g.stride == 1 {
                            let oy_lo = g.pad.saturating_sub(ky);
                            let oy_hi = (g.h + g.pad - ky).min(g.ho);
                            let ox_lo = g.pad.saturating_sub(kx);
                            let ox_hi = (g.w + g.pad - kx).min(g.wo);
                            if ox_lo >= ox_hi {
                                continue;
                            }
                            for oy in oy_lo..oy_hi {
                                let iy = oy + ky - g.pad;
                                let dst_start = iy * g.w + ox_lo + kx - g.pad;
                                let dst =
                                    &mut gin_plane[dst_start..dst_start + (ox_hi - ox_lo)];
                                let src = &gout_plane[oy * g.wo + ox_lo..oy * g.wo + ox_hi];
                                for (d, s) in dst.iter_mut().zip(src) {
                                    *d += wv * *s;
                                }
                            }
                        } else {
                            for oy in 0..g.ho {
                                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                if iy < 0 || iy >= g.h as isize {
                                    continue;
                                }
                                for ox in 0..g.wo {
                                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                    if ix < 0 || ix >= g.w as isize {
                                        continue;
                                    }
                                    gin_plane[iy as usize * g.w + ix as usize] +=
                                        wv * gout_plane[oy * g.wo + ox];
                                }
                            }
                        }
                    }
                }
            }
        });
    grad_in
}

fn conv_backward_weight<T: Element>(grad_out: &[T], input: &[T], g: ConvGeom) -> Vec<T> {
    let mut grad_w = vec![T::ZERO; g.cout * g.cin * g.k * g.k];
    grad_w
        .par_chunks_mut(g.cin * g.k * g.k)
        .enumerate()
        .for_each(|(oc, gw_oc)| {
            for b in 0..g.n {
                let gout_plane = &grad_out[(b * g.cout + oc) * g.ho * g.wo..][..g.ho * g.wo];
                for ic in 0..g.cin {
                    let in_plane = &input[(b * g.cin + ic) * g.h * g.w..][..g.h * g.w];
                    for ky in 0..g.k {
                        for kx in 0..g.k {
                            let mut acc = T::ZERO;
                            if g.stride == 1 {
                                let oy_lo = g.pad.saturating_sub(ky);
                                let oy_hi = (g.h + g.pad - ky).min(g.ho);
                                let ox_lo = g.pad.saturating_sub(kx);
                                let ox_hi = (g.w + g.pad - kx).min(g.wo);
                                if ox_lo < ox_hi {
                                    for oy in oy_lo..oy_hi {
                                        let iy = oy + ky - g.pad;
                                        let src_start = iy * g.w + ox_lo + kx - g.pad;
                                        let src =
                                            &in_plane[src_start..src_start + (ox_hi - ox_lo)];
                                        let go =
                                            &gout_plane[oy * g.wo + ox_lo..oy * g.wo + ox_hi];
                                        for (a, b2) in go.iter().zip(src) {
                                            acc += *a * *b2;
                                        }
                                    }
                                }
                            } else {
                                for oy in 0..g.ho {
                                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                    if iy < 0 || iy >= g.h as isize {
                                        continue;
                                    }
                                    for ox in 0..g.wo {
                                        let ix =
                                            (ox * g.stride + kx) as isize - g.pad as isize;
                                        if ix < 0 || ix >= g.w as isize {
                                            continue;
                                        }
                                        acc += gout_plane[oy * g.wo + ox]
                                            * in_plane[iy as usize * g.w + ix as usize];
                                    }
                                }
                            }
                            gw_oc[(ic * g.k + ky) * g.k + kx] += acc;
                        }
                    }
                }
            }
        });
    grad_w
}

/// 2D convolution over NCHW input with an OIkk weight and per-channel bias.
pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let idims = input.dims();
    let wdims = weight.dims();
    if idims.len() != 4 {
        return Err(Error::Dimension {
            axis: "input",
            detail: format!("expected NCHW, got {idims:?}"),
        });
    }
    if wdims.len() != 4 || wdims[2] != wdims[3] {
        return Err(Error::Dimension {
            axis: "weight",
            detail: format!("expected OIkk with square kernel, got {wdims:?}"),
        });
    }
    let k = wdims[2];
    if k != 1 && k != 3 {
        return Err(Error::Dimension {
            axis: "kernel",
            detail: format!("kernel size {k} unsupported (1 or 3)"),
        });
    }
    if idims[1] != wdims[1] {
        return Err(Error::Dimension {
            axis: "channels",
            detail: format!("input has {} channels, weight expects {}", idims[1], wdims[1]),
        });
    }
    if bias.dims() != vec![wdims[0]] {
        return Err(Error::Dimension {
            axis: "bias",
            detail: format!("bias dims {:?}, expected [{}]", bias.dims(), wdims[0]),
        });
    }
    if stride == 0 {
        return Err(Error::Value("stride must be >= 1".into()));
    }
    let (h, w) = (idims[2], idims[3]);
    if h + 2 * padding < k || w + 2 * padding < k {
        return Err(Error::Dimension {
            axis: "spatial",
            detail: format!("input {h}x{w} smaller than kernel {k} with padding {padding}"),
        });
    }
    let geom = ConvGeom {
        n: idims[0],
        cin: idims[1],
        h,
        w,
        cout: wdims[0],
        k,
        stride,
        pad: padding,
        ho: (h + 2 * padding - k) / stride + 1,
        wo: (w + 2 * padding - k) / stride + 1,
    };

    let out = input.with_data(|inp| {
        weight.with_data(|wt| bias.with_data(|bs| conv_forward(inp, wt, bs, geom)))
    });

    let out_dims = vec![geom.n, geom.cout, geom.ho, geom.wo];
    Ok(Tensor::from_op(
        out_dims,
        out,
        vec![input.clone(), weight.clone(), bias.clone()],
        Box::new(move |grad_out, parents| {
            let (input, weight, bias) = (&parents[0], &parents[1], &parents[2]);
            if input.requires_grad() {
                let gi = weight.with_data(|wt| conv_backward_input(grad_out, wt, geom));
                accumulate_grad(input, &gi);
            }
            if weight.requires_grad() {
                let gw = input.with_data(|inp| conv_backward_weight(grad_out, inp, geom));
                accumulate_grad(weight, &gw);
            }
            if bias.requires_grad() {
                let mut gb = vec![T::ZERO; geom.cout];
                for b in 0..geom.n {
                    for (oc, acc) in gb.iter_mut().enumerate() {
                        let plane = &grad_out[(b * geom.cout + oc) * geom.ho * geom.wo..]
                            [..geom.ho * geom.wo];
                        for v in plane {
                            *acc += *v;
                        }
                    }
                }
                accumulate_grad(bias, &gb);
            }
        }),
    ))
}

/// 2x2 max pooling with stride 2. Gradient flows to the argmax position only
/// (first occurrence in row-major order on ties).
pub fn maxpool2x2<T: Element>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let dims = input.dims();
    if dims.len() != 4 {
        return Err(Error::Dimension {
            axis: "input",
            detail: format!("expected NCHW, got {dims:?}"),
        });
    }
    let (n, c, h, w) = (dims[0], dims[1], dims[2], dims[3]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Dimension {
            axis: "spatial",
            detail: format!("maxpool2x2 needs even spatial dims, got {h}x{w}"),
        });
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = vec![T::ZERO; n * c * ho * wo];
    let mut argmax = vec![0u32; n * c * ho * wo];
    input.with_data(|data| {
        for p in 0..n * c {
            let in_plane = &data[p * h * w..][..h * w];
            let out_plane = &mut out[p * ho * wo..][..ho * wo];
            let arg_plane = &mut argmax[p * ho * wo..][..ho * wo];
            for oy in 0..ho {
                for ox in 0..wo {
                    let base = (2 * oy) * w + 2 * ox;
                    let candidates = [base, base + 1, base + w, base + w + 1];
                    let mut best = candidates[0];
                    let mut best_v = in_plane[best];
                    for &idx in &candidates[1..] {
                        if in_plane[idx] > best_v {
                            best_v = in_plane[idx];
                            best = idx;
                        }
                    }
                    out_plane[oy * wo + ox] = best_v;
                    arg_plane[oy * wo + ox] = best as u32;
                }
            }
        }
    });
    Ok(Tensor::from_op(
        vec![n, c, ho, wo],
        out,
        vec![input.clone()],
        Box::new(move |grad_out, parents| {
            let input = &parents[0];
            if !input.requires_grad() {
                return;
            }
            let mut gi = vec![T::ZERO; n * c * h * w];
            for p in 0..n * c {
                let arg_plane = &argmax[p * ho * wo..][..ho * wo];
                let go_plane = &grad_out[p * ho * wo..][..ho * wo];
                let gi_plane = &mut gi[p * h * w..][..h * w];
                for i in 0..ho * wo {
                    gi_plane[arg_plane[i] as usize] += go_plane[i];
                }
            }
            accumulate_grad(input, &gi);
        }),
    ))
}

/// Sampling weights for one axis of 2x bilinear upsampling,
/// align-corners=false: source center for output i is (i + 0.5)/2 - 0.5.
fn upsample_taps(len_in: usize, len_out: usize) -> Vec<(usize, usize, f64)> {
    (0..len_out)
        .map(|i| {
            let src = (i as f64 + 0.5) / 2.0 - 0.5;
            let floor = src.floor();
            let t = src - floor;
            let i0 = (floor.max(0.0) as usize).min(len_in - 1);
            let i1 = ((floor as isize + 1).max(0) as usize).min(len_in - 1);
            (i0, i1, t)
        })
        .collect()
}

/// Bilinear 2x upsampling (align-corners=false).
pub fn upsample_bilinear2x<T: Element>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let dims = input.dims();
    if dims.len() != 4 {
        return Err(Error::Dimension {
            axis: "input",
            detail: format!("expected NCHW, got {dims:?}"),
        });
    }
    let (n, c, h, w) = (dims[0], dims[1], dims[2], dims[3]);
    let (ho, wo) = (h * 2, w * 2);
    let ytaps = upsample_taps(h, ho);
    let xtaps = upsample_taps(w, wo);
    let mut out = vec![T::ZERO; n * c * ho * wo];
    input.with_data(|data| {
        for p in 0..n * c {
            let in_plane = &data[p * h * w..][..h * w];
            let out_plane = &mut out[p * ho * wo..][..ho * wo];
            for (oy, &(y0, y1, ty)) in ytaps.iter().enumerate() {
                let wy1 = T::from_f64(ty);
                let wy0 = T::from_f64(1.0 - ty);
                for (ox, &(x0, x1, tx)) in xtaps.iter().enumerate() {
                    let wx1 = T::from_f64(tx);
                    let wx0 = T::from_f64(1.0 - tx);
                    out_plane[oy * wo + ox] = wy0 * (wx0 * in_plane[y0 * w + x0]
                        + wx1 * in_plane[y0 * w + x1])
                        + wy1 * (wx0 * in_plane[y1 * w + x0] + wx1 * in_plane[y1 * w + x1]);
                }
            }
        }
    });
    let ytaps_b = ytaps.clone();
    let xtaps_b = xtaps.clone();
    Ok(Tensor::from_op(
        vec![n, c, ho, wo],
        out,
        vec![input.clone()],
        Box::new(move |grad_out, parents| {
            let input = &parents[0];
            if !input.requires_grad() {
                return;
            }
            let mut gi = vec![T::ZERO; n * c * h * w];
            for p in 0..n * c {
                let go_plane = &grad_out[p * ho * wo..][..ho * wo];
                let gi_plane = &mut gi[p * h * w..][..h * w];
                for (oy, &(y0, y1, ty)) in ytaps_b.iter().enumerate() {
                    let wy1 = T::from_f64(ty);
                    let wy0 = T::from_f64(1.0 - ty);
                    for (ox, &(x0, x1, tx)) in xtaps_b.iter().enumerate() {
                        let g = go_plane[oy * wo + ox];
                        let wx1 = T::from_f64(tx);
                        let wx0 = T::from_f64(1.0 - tx);
                        gi_plane[y0 * w + x0] += wy0 * wx0 * g;
                        gi_plane[y0 * w + x1] += wy0 * wx1 * g;
                        gi_plane[y1 * w + x0] += wy1 * wx0 * g;
                        gi_plane[y1 * w + x1] += wy1 * wx1 * g;
                    }
                }
            }
            accumulate_grad(input, &gi);
        }),
    ))
}

/// Concatenate two NCHW tensors along the channel axis.
pub fn concat_channels<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let ad = a.dims();
    let bd = b.dims();
    if ad.len() != 4 || bd.len() != 4 {
        return Err(Error::Dimension {
            axis: "input",
            detail: format!("expected NCHW pair, got {ad:?} and {bd:?}"),
        });
    }
    if ad[0] != bd[0] || ad[2] != bd[2] || ad[3] != bd[3] {
        return Err(Error::Dimension {
            axis: "spatial",
            detail: format!("concat_channels requires matching N,H,W: {ad:?} vs {bd:?}"),
        });
    }
    let (n, ca, cb, h, w) = (ad[0], ad[1], bd[1], ad[2], ad[3]);
    let plane = h * w;
    let mut out = vec![T::ZERO; n * (ca + cb) * plane];
    a.with_data(|da| {
        b.with_data(|db| {
            for bi in 0..n {
                let dst = &mut out[bi * (ca + cb) * plane..][..(ca + cb) * plane];
                dst[..ca * plane].copy_from_slice(&da[bi * ca * plane..][..ca * plane]);
                dst[ca * plane..].copy_from_slice(&db[bi * cb * plane..][..cb * plane]);
            }
        })
    });
    Ok(Tensor::from_op(
        vec![n, ca + cb, h, w],
        out,
        vec![a.clone(), b.clone()],
        Box::new(move |grad_out, parents| {
            let (a, b) = (&parents[0], &parents[1]);
            if a.requires_grad() {
                let mut ga = vec![T::ZERO; n * ca * plane];
                for bi in 0..n {
                    ga[bi * ca * plane..][..ca * plane].copy_from_slice(
                        &grad_out[bi * (ca + cb) * plane..][..ca * plane],
                    );
                }
                accumulate_grad(a, &ga);
            }
            if b.requires_grad() {
                let mut gb = vec![T::ZERO; n * cb * plane];
                for bi in 0..n {
                    gb[bi * cb * plane..][..cb * plane].copy_from_slice(
                        &grad_out[bi * (ca + cb) * plane + ca * plane..][..cb * plane],
                    );
                }
                accumulate_grad(b, &gb);
            }
        }),
    ))
}

/// Elementwise max(0, x).
pub fn relu<T: Element>(input: &Tensor<T>) -> Tensor<T> {
    let out = input.with_data(|d| d.iter().map(|&x| x.maximum(T::ZERO)).collect::<Vec<_>>());
    Tensor::from_op(
        input.dims(),
        out,
        vec![input.clone()],
        Box::new(move |grad_out, parents| {
            let input = &parents[0];
            if !input.requires_grad() {
                return;
            }
            let gi = input.with_data(|d| {
                d.iter()
                    .zip(grad_out)
                    .map(|(&x, &g)| if x > T::ZERO { g } else { T::ZERO })
                    .collect::<Vec<_>>()
            });
            accumulate_grad(input, &gi);
        }),
    )
}

/// Numerically stable logistic sigmoid, split by sign.
pub fn sigmoid_scalar<T: Element>(x: T) -> T {
    if x >= T::ZERO {
        T::ONE / (T::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::ONE + e)
    }
}

/// Elementwise logistic sigmoid.
pub fn sigmoid<T: Element>(input: &Tensor<T>) -> Tensor<T> {
    let out = input.with_data(|d| d.iter().map(|&x| sigmoid_scalar(x)).collect::<Vec<_>>());
    Tensor::from_op(
        input.dims(),
        out,
        vec![input.clone()],
        Box::new(move |grad_out, parents| {
            let input = &parents[0];
            if !input.requires_grad() {
                return;
            }
            let gi = input.with_data(|d| {
                d.iter()
                    .zip(grad_out)
                    .map(|(&x, &g)| {
                        let s = sigmoid_scalar(x);
                        g * s * (T::ONE - s)
                    })
                    .collect::<Vec<_>>()
            });
            accumulate_grad(input, &gi);
        }),
    )
}

/// Elementwise sum of two same-shape tensors.
pub fn add<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.dims() != b.dims() {
        return Err(Error::Dimension {
            axis: "shape",
            detail: format!("add requires equal dims: {:?} vs {:?}", a.dims(), b.dims()),
        });
    }
    let out = a.with_data(|da| {
        b.with_data(|db| da.iter().zip(db).map(|(&x, &y)| x + y).collect::<Vec<_>>())
    });
    Ok(Tensor::from_op(
        a.dims(),
        out,
        vec![a.clone(), b.clone()],
        Box::new(move |grad_out, parents| {
            accumulate_grad(&parents[0], grad_out);
            accumulate_grad(&parents[1], grad_out);
        }),
    ))
}

/// Multiply by a constant.
pub fn scale<T: Element>(input: &Tensor<T>, factor: f64) -> Tensor<T> {
    let f = T::from_f64(factor);
    let out = input.with_data(|d| d.iter().map(|&x| x * f).collect::<Vec<_>>());
    Tensor::from_op(
        input.dims(),
        out,
        vec![input.clone()],
        Box::new(move |grad_out, parents| {
            let gi: Vec<T> = grad_out.iter().map(|&g| g * f).collect();
            accumulate_grad(&parents[0], &gi);
        }),
    )
}

/// Sum of all elements (scalar output).
pub fn sum<T: Element>(input: &Tensor<T>) -> Tensor<T> {
    let mut acc = T::ZERO;
    input.with_data(|d| {
        for &v in d {
            acc += v;
        }
    });
    let numel = input.numel();
    Tensor::from_op(
        vec![1],
        vec![acc],
        vec![input.clone()],
        Box::new(move |grad_out, parents| {
            let gi = vec![grad_out[0]; numel];
            accumulate_grad(&parents[0], &gi);
        }),
    )
}

/// Rearrange NCHW to a (N*H*W) x C matrix so per-cell distributions can be
/// fed to [`softmax_cross_entropy`]. Backward is the exact inverse scatter.
pub fn channels_to_rows<T: Element>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let dims = input.dims();
    if dims.len() != 4 {
        return Err(Error::Dimension {
            axis: "input",
            detail: format!("expected NCHW, got {dims:?}"),
        });
    }
    let (n, c, h, w) = (dims[0], dims[1], dims[2], dims[3]);
    let plane = h * w;
    let mut out = vec![T::ZERO; n * plane * c];
    input.with_data(|d| {
        for b in 0..n {
            for ch in 0..c {
                let src = &d[(b * c + ch) * plane..][..plane];
                for (pix, &v) in src.iter().enumerate() {
                    out[(b * plane + pix) * c + ch] = v;
                }
            }
        }
    });
    Ok(Tensor::from_op(
        vec![n * plane, c],
        out,
        vec![input.clone()],
        Box::new(move |grad_out, parents| {
            let input = &parents[0];
            if !input.requires_grad() {
                return;
            }
            let mut gi = vec![T::ZERO; n * c * plane];
            for b in 0..n {
                for ch in 0..c {
                    let dst = &mut gi[(b * c + ch) * plane..][..plane];
                    for (pix, slot) in dst.iter_mut().enumerate() {
                        *slot = grad_out[(b * plane + pix) * c + ch];
                    }
                }
            }
            accumulate_grad(input, &gi);
        }),
    ))
}

/// Mean over rows of `-log softmax(logits)[target]` for a R x K logit matrix.
pub fn softmax_cross_entropy<T: Element>(
    logits: &Tensor<T>,
    targets: &[usize],
) -> Result<Tensor<T>> {
    let dims = logits.dims();
    if dims.len() != 2 {
        return Err(Error::Dimension {
            axis: "logits",
            detail: format!("expected R x K matrix, got {dims:?}"),
        });
    }
    let (rows, k) = (dims[0], dims[1]);
    if targets.len() != rows {
        return Err(Error::Dimension {
            axis: "targets",
            detail: format!("{} targets for {} rows", targets.len(), rows),
        });
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
        return Err(Error::Index(format!(
            "target index {bad} out of range for {k} classes"
        )));
    }

    // Softmax probabilities are materialized for the backward pass.
    let mut probs = vec![T::ZERO; rows * k];
    let mut loss_acc = 0.0f64;
    logits.with_data(|d| {
        for r in 0..rows {
            let row = &d[r * k..][..k];
            let mut max = row[0];
            for &v in &row[1..] {
                max = max.maximum(v);
            }
            let mut denom = T::ZERO;
            for (j, &v) in row.iter().enumerate() {
                let e = (v - max).exp();
                probs[r * k + j] = e;
                denom += e;
            }
            let inv = T::ONE / denom;
            for j in 0..k {
                probs[r * k + j] = probs[r * k + j] * inv;
            }
            let lse = max.to_f64() + denom.to_f64().ln();
            loss_acc += lse - row[targets[r]].to_f64();
        }
    });
    let loss = T::from_f64(loss_acc / rows as f64);
    let targets_owned = targets.to_vec();
    Ok(Tensor::from_op(
        vec![1],
        vec![loss],
        vec![logits.clone()],
        Box::new(move |grad_out, parents| {
            let logits = &parents[0];
            if !logits.requires_grad() {
                return;
            }
            let g = grad_out[0];
            let inv_r = T::from_f64(1.0 / rows as f64);
            let mut gi = probs.clone();
            for (r, &t) in targets_owned.iter().enumerate() {
                gi[r * k + t] -= T::ONE;
            }
            for v in gi.iter_mut() {
                *v = *v * inv_r * g;
            }
            accumulate_grad(logits, &gi);
        }),
    ))
}

/// Mean binary cross-entropy over logits, computed in the stable
/// `max(x,0) - x t + ln(1 + exp(-|x|))` form. Targets take no gradient.
pub fn bce_with_logits<T: Element>(logits: &Tensor<T>, targets: &Tensor<T>) -> Result<Tensor<T>> {
    if logits.dims() != targets.dims() {
        return Err(Error::Dimension {
            axis: "shape",
            detail: format!(
                "logits dims {:?} vs target dims {:?}",
                logits.dims(),
                targets.dims()
            ),
        });
    }
    let bad = targets.with_data(|t| {
        t.iter()
            .find(|&&v| v < T::ZERO || v > T::ONE)
            .map(|v| v.to_f64())
    });
    if let Some(v) = bad {
        return Err(Error::Value(format!(
            "bce target {v} outside [0, 1]"
        )));
    }
    let numel = logits.numel();
    let mut acc = 0.0f64;
    logits.with_data(|xs| {
        targets.with_data(|ts| {
            for (&x, &t) in xs.iter().zip(ts) {
                let term = x.maximum(T::ZERO) - x * t + (-(x.abs())).exp().ln_1p();
                acc += term.to_f64();
            }
        })
    });
    let loss = T::from_f64(acc / numel as f64);
    let targets_clone = targets.clone();
    Ok(Tensor::from_op(
        vec![1],
        vec![loss],
        vec![logits.clone()],
        Box::new(move |grad_out, parents| {
            let logits = &parents[0];
            if !logits.requires_grad() {
                return;
            }
            let g = grad_out[0];
            let inv_n = T::from_f64(1.0 / numel as f64);
            let gi = logits.with_data(|xs| {
                targets_clone.with_data(|ts| {
                    xs.iter()
                        .zip(ts)
                        .map(|(&x, &t)| (sigmoid_scalar(x) - t) * inv_n * g)
                        .collect::<Vec<_>>()
                })
            });
            accumulate_grad(logits, &gi);
        }),
    ))
}
