//! Forward and backward kernels for every tensor primitive.
//!
//! The functions here are pure: they validate shapes, allocate the output
//! and fill it. The [`Graph`](super::Graph) calls them for both the forward
//! pass and the reverse sweep. Inner loops run over contiguous rows so the
//! compiler can vectorize them; parallel splits only ever write disjoint
//! output regions, so results are bit-identical for any thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{expect_same_shape, Tensor};

/// y += a * x over contiguous slices.
#[inline]
fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * *xi;
    }
}

#[inline]
fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    let mut acc = T::zero();
    for (xi, yi) in x.iter().zip(y) {
        acc += *xi * *yi;
    }
    acc
}

/// Valid output positions `o` (as `lo..hi`) such that
/// `0 <= o*stride + koff - pad < limit`.
#[inline]
fn valid_range(
    out_len: usize,
    limit: usize,
    stride: usize,
    koff: usize,
    pad: usize,
) -> (usize, usize) {
    let lo = if koff >= pad {
        0
    } else {
        (pad - koff).div_ceil(stride)
    };
    let max_in = limit - 1 + pad;
    if max_in < koff {
        return (0, 0);
    }
    let hi = ((max_in - koff) / stride + 1).min(out_len);
    (lo.min(hi), hi)
}

fn check_conv_args<T: Scalar>(
    context: &str,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    out_channels: usize,
    stride: usize,
) -> Result<()> {
    if stride == 0 {
        return Err(Error::Config(format!("{context}: stride must be >= 1")));
    }
    let (_, _, kh, kw) = kernel.dims4(context)?;
    if kh != kw {
        return Err(Error::shape(
            context,
            "a square kernel",
            format!("{kh}x{kw}"),
        ));
    }
    if bias.shape() != [out_channels] {
        return Err(Error::shape(
            context,
            format!("bias of shape [{out_channels}]"),
            format!("{:?}", bias.shape()),
        ));
    }
    Ok(())
}

/// 2-D cross-correlation with zero padding and per-output-channel bias.
///
/// `input` is `[n, c_in, h, w]`, `kernel` is `[c_out, c_in, k, k]` with odd
/// `k`; output is `[n, c_out, h', w']` with
/// `h' = (h + 2*padding - k)/stride + 1`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (n, cin, h, w) = input.dims4("conv2d input")?;
    let (cout, kcin, k, _) = kernel.dims4("conv2d kernel")?;
    check_conv_args("conv2d", kernel, bias, cout, stride)?;
    if kcin != cin {
        return Err(Error::shape(
            "conv2d",
            format!("kernel input channels == {cin}"),
            format!("{kcin}"),
        ));
    }
    if k % 2 == 0 {
        return Err(Error::Config(format!(
            "conv2d: kernel size must be odd, got {k}"
        )));
    }
    if h + 2 * padding < k || w + 2 * padding < k {
        return Err(Error::shape(
            "conv2d",
            format!("padded input at least {k}x{k}"),
            format!("{}x{}", h + 2 * padding, w + 2 * padding),
        ));
    }
    let oh = (h + 2 * padding - k) / stride + 1;
    let ow = (w + 2 * padding - k) / stride + 1;

    let mut out = Tensor::zeros(&[n, cout, oh, ow]);
    let in_data = input.data();
    let k_data = kernel.data();
    let b_data = bias.data();

    out.data_mut()
        .par_chunks_mut(oh * ow)
        .enumerate()
        .for_each(|(plane_idx, plane)| {
            let ni = plane_idx / cout;
            let co = plane_idx % cout;
            plane.fill(b_data[co]);
            for ci in 0..cin {
                let in_plane = &in_data[(ni * cin + ci) * h * w..][..h * w];
                let k_base = (co * cin + ci) * k * k;
                for krow in 0..k {
                    let (oh_lo, oh_hi) = valid_range(oh, h, stride, krow, padding);
                    for kcol in 0..k {
                        let kv = k_data[k_base + krow * k + kcol];
                        let (ow_lo, ow_hi) = valid_range(ow, w, stride, kcol, padding);
                        if ow_lo >= ow_hi {
                            continue;
                        }
                        for orow in oh_lo..oh_hi {
                            let irow = orow * stride + krow - padding;
                            let in_row = &in_plane[irow * w..][..w];
                            let out_row = &mut plane[orow * ow..][..ow];
                            if stride == 1 {
                                let ioff = ow_lo + kcol - padding;
                                axpy(
                                    &mut out_row[ow_lo..ow_hi],
                                    kv,
                                    &in_row[ioff..ioff + (ow_hi - ow_lo)],
                                );
                            } else {
                                for ocol in ow_lo..ow_hi {
                                    out_row[ocol] += kv * in_row[ocol * stride + kcol - padding];
                                }
                            }
                        }
                    }
                }
            }
        });
    Ok(out)
}

/// Gradient of `conv2d` with respect to its input.
pub fn conv2d_grad_input<T: Scalar>(
    grad_out: &Tensor<T>,
    kernel: &Tensor<T>,
    in_h: usize,
    in_w: usize,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (n, cout, oh, ow) = grad_out.dims4("conv2d grad_input")?;
    let (kcout, cin, k, _) = kernel.dims4("conv2d grad_input kernel")?;
    debug_assert_eq!(cout, kcout);
    let mut grad_in = Tensor::zeros(&[n, cin, in_h, in_w]);
    let go = grad_out.data();
    let k_data = kernel.data();

    grad_in
        .data_mut()
        .par_chunks_mut(in_h * in_w)
        .enumerate()
        .for_each(|(plane_idx, gplane)| {
            let ni = plane_idx / cin;
            let ci = plane_idx % cin;
            for co in 0..cout {
                let go_plane = &go[(ni * cout + co) * oh * ow..][..oh * ow];
                let k_base = (co * cin + ci) * k * k;
                for krow in 0..k {
                    let (oh_lo, oh_hi) = valid_range(oh, in_h, stride, krow, padding);
                    for kcol in 0..k {
                        let kv = k_data[k_base + krow * k + kcol];
                        let (ow_lo, ow_hi) = valid_range(ow, in_w, stride, kcol, padding);
                        if ow_lo >= ow_hi {
                            continue;
                        }
                        for orow in oh_lo..oh_hi {
                            let irow = orow * stride + krow - padding;
                            let g_row = &mut gplane[irow * in_w..][..in_w];
                            let go_row = &go_plane[orow * ow..][..ow];
                            if stride == 1 {
                                let ioff = ow_lo + kcol - padding;
                                axpy(
                                    &mut g_row[ioff..ioff + (ow_hi - ow_lo)],
                                    kv,
                                    &go_row[ow_lo..ow_hi],
                                );
                            } else {
                                for ocol in ow_lo..ow_hi {
                                    g_row[ocol * stride + kcol - padding] += kv * go_row[ocol];
                                }
                            }
                        }
                    }
                }
            }
        });
    Ok(grad_in)
}

/// Gradient of `conv2d` with respect to its kernel.
pub fn conv2d_grad_kernel<T: Scalar>(
    input: &Tensor<T>,
    grad_out: &Tensor<T>,
    k: usize,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (n, cin, h, w) = input.dims4("conv2d grad_kernel input")?;
    let (gn, cout, oh, ow) = grad_out.dims4("conv2d grad_kernel")?;
    debug_assert_eq!(n, gn);
    let mut grad_k = Tensor::zeros(&[cout, cin, k, k]);
    let in_data = input.data();
    let go = grad_out.data();

    grad_k
        .data_mut()
        .par_chunks_mut(cin * k * k)
        .enumerate()
        .for_each(|(co, gk_slice)| {
            for ci in 0..cin {
                for krow in 0..k {
                    let (oh_lo, oh_hi) = valid_range(oh, h, stride, krow, padding);
                    for kcol in 0..k {
                        let (ow_lo, ow_hi) = valid_range(ow, w, stride, kcol, padding);
                        if ow_lo >= ow_hi {
                            continue;
                        }
                        let mut acc = T::zero();
                        for ni in 0..n {
                            let in_plane = &in_data[(ni * cin + ci) * h * w..][..h * w];
                            let go_plane = &go[(ni * cout + co) * oh * ow..][..oh * ow];
                            for orow in oh_lo..oh_hi {
                                let irow = orow * stride + krow - padding;
                                let in_row = &in_plane[irow * w..][..w];
                                let go_row = &go_plane[orow * ow..][..ow];
                                if stride == 1 {
                                    let ioff = ow_lo + kcol - padding;
                                    acc += dot(
                                        &go_row[ow_lo..ow_hi],
                                        &in_row[ioff..ioff + (ow_hi - ow_lo)],
                                    );
                                } else {
                                    for ocol in ow_lo..ow_hi {
                                        acc +=
                                            go_row[ocol] * in_row[ocol * stride + kcol - padding];
                                    }
                                }
                            }
                        }
                        gk_slice[ci * k * k + krow * k + kcol] = acc;
                    }
                }
            }
        });
    Ok(grad_k)
}

/// Gradient of `conv2d` (and `conv_transpose2d`) with respect to its bias:
/// the spatial/batch sum of the output gradient per channel.
pub fn grad_bias<T: Scalar>(grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = grad_out.dims4("grad_bias")?;
    let mut gb = Tensor::zeros(&[c]);
    let go = grad_out.data();
    for ni in 0..n {
        for ci in 0..c {
            let plane = &go[(ni * c + ci) * h * w..][..h * w];
            let mut acc = T::zero();
            for v in plane {
                acc += *v;
            }
            gb.data_mut()[ci] += acc;
        }
    }
    Ok(gb)
}

/// Transposed 2-D convolution (the linear adjoint of [`conv2d`] at the same
/// stride and padding).
///
/// `input` is `[n, c_in, h, w]`, `kernel` is `[c_in, c_out, k, k]`; output
/// is `[n, c_out, h'', w'']` with `h'' = (h-1)*stride - 2*padding + k`.
pub fn conv_transpose2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (n, cin, h, w) = input.dims4("conv_transpose2d input")?;
    let (kcin, cout, k, _) = kernel.dims4("conv_transpose2d kernel")?;
    check_conv_args("conv_transpose2d", kernel, bias, cout, stride)?;
    if kcin != cin {
        return Err(Error::shape(
            "conv_transpose2d",
            format!("kernel input channels == {cin}"),
            format!("{kcin}"),
        ));
    }
    let full_h = (h - 1) * stride + k;
    let full_w = (w - 1) * stride + k;
    if full_h < 2 * padding + 1 || full_w < 2 * padding + 1 {
        return Err(Error::shape(
            "conv_transpose2d",
            "padding small enough to leave a nonempty output",
            format!("padding {padding} on {h}x{w} input with kernel {k}"),
        ));
    }
    let oh = full_h - 2 * padding;
    let ow = full_w - 2 * padding;

    let mut out = Tensor::zeros(&[n, cout, oh, ow]);
    let in_data = input.data();
    let k_data = kernel.data();
    let b_data = bias.data();

    out.data_mut()
        .par_chunks_mut(oh * ow)
        .enumerate()
        .for_each(|(plane_idx, plane)| {
            let ni = plane_idx / cout;
            let co = plane_idx % cout;
            plane.fill(b_data[co]);
            for ci in 0..cin {
                let in_plane = &in_data[(ni * cin + ci) * h * w..][..h * w];
                let k_base = (ci * cout + co) * k * k;
                for krow in 0..k {
                    // input rows whose scatter lands inside the output
                    let (ih_lo, ih_hi) = valid_range(h, oh, stride, krow, padding);
                    for kcol in 0..k {
                        let kv = k_data[k_base + krow * k + kcol];
                        let (iw_lo, iw_hi) = valid_range(w, ow, stride, kcol, padding);
                        if iw_lo >= iw_hi {
                            continue;
                        }
                        for irow in ih_lo..ih_hi {
                            let orow = irow * stride + krow - padding;
                            let in_row = &in_plane[irow * w..][..w];
                            let out_row = &mut plane[orow * ow..][..ow];
                            if stride == 1 {
                                let ooff = iw_lo + kcol - padding;
                                axpy(
                                    &mut out_row[ooff..ooff + (iw_hi - iw_lo)],
                                    kv,
                                    &in_row[iw_lo..iw_hi],
                                );
                            } else {
                                for icol in iw_lo..iw_hi {
                                    out_row[icol * stride + kcol - padding] += kv * in_row[icol];
                                }
                            }
                        }
                    }
                }
            }
        });
    Ok(out)
}

/// Gradient of `conv_transpose2d` with respect to its input: a gather of
/// the output gradient (the same access pattern as the conv2d forward).
pub fn conv_transpose2d_grad_input<T: Scalar>(
    grad_out: &Tensor<T>,
    kernel: &Tensor<T>,
    in_h: usize,
    in_w: usize,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (n, cout, oh, ow) = grad_out.dims4("conv_transpose2d grad_input")?;
    let (cin, kcout, k, _) = kernel.dims4("conv_transpose2d grad_input kernel")?;
    debug_assert_eq!(cout, kcout);
    let mut grad_in = Tensor::zeros(&[n, cin, in_h, in_w]);
    let go = grad_out.data();
    let k_data = kernel.data();

    grad_in
        .data_mut()
        .par_chunks_mut(in_h * in_w)
        .enumerate()
        .for_each(|(plane_idx, gplane)| {
            let ni = plane_idx / cin;
            let ci = plane_idx % cin;
            for co in 0..cout {
                let go_plane = &go[(ni * cout + co) * oh * ow..][..oh * ow];
                let k_base = (ci * cout + co) * k * k;
                for krow in 0..k {
                    let (ih_lo, ih_hi) = valid_range(in_h, oh, stride, krow, padding);
                    for kcol in 0..k {
                        let kv = k_data[k_base + krow * k + kcol];
                        let (iw_lo, iw_hi) = valid_range(in_w, ow, stride, kcol, padding);
                        if iw_lo >= iw_hi {
                            continue;
                        }
                        for irow in ih_lo..ih_hi {
                            let orow = irow * stride + krow - padding;
                            let g_row = &mut gplane[irow * in_w..][..in_w];
                            let go_row = &go_plane[orow * ow..][..ow];
                            if stride == 1 {
                                let ooff = iw_lo + kcol - padding;
                                axpy(
                                    &mut g_row[iw_lo..iw_hi],
                                    kv,
                                    &go_row[ooff..ooff + (iw_hi - iw_lo)],
                                );
                            } else {
                                for icol in iw_lo..iw_hi {
                                    g_row[icol] += kv * go_row[icol * stride + kcol - padding];
                                }
                            }
                        }
                    }
                }
            }
        });
    Ok(grad_in)
}

/// Gradient of `conv_transpose2d` with respect to its kernel.
pub fn conv_transpose2d_grad_kernel<T: Scalar>(
    input: &Tensor<T>,
    grad_out: &Tensor<T>,
    k: usize,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (n, cin, h, w) = input.dims4("conv_transpose2d grad_kernel input")?;
    let (gn, cout, oh, ow) = grad_out.dims4("conv_transpose2d grad_kernel")?;
    debug_assert_eq!(n, gn);
    let mut grad_k = Tensor::zeros(&[cin, cout, k, k]);
    let in_data = input.data();
    let go = grad_out.data();

    grad_k
        .data_mut()
        .par_chunks_mut(cout * k * k)
        .enumerate()
        .for_each(|(ci, gk_slice)| {
            for co in 0..cout {
                for krow in 0..k {
                    let (ih_lo, ih_hi) = valid_range(h, oh, stride, krow, padding);
                    for kcol in 0..k {
                        let (iw_lo, iw_hi) = valid_range(w, ow, stride, kcol, padding);
                        if iw_lo >= iw_hi {
                            continue;
                        }
                        let mut acc = T::zero();
                        for ni in 0..n {
                            let in_plane = &in_data[(ni * cin + ci) * h * w..][..h * w];
                            let go_plane = &go[(ni * cout + co) * oh * ow..][..oh * ow];
                            for irow in ih_lo..ih_hi {
                                let orow = irow * stride + krow - padding;
                                let in_row = &in_plane[irow * w..][..w];
                                let go_row = &go_plane[orow * ow..][..ow];
                                if stride == 1 {
                                    let ooff = iw_lo + kcol - padding;
                                    acc += dot(
                                        &in_row[iw_lo..iw_hi],
                                        &go_row[ooff..ooff + (iw_hi - iw_lo)],
                                    );
                                } else {
                                    for icol in iw_lo..iw_hi {
                                        acc +=
                                            in_row[icol] * go_row[icol * stride + kcol - padding];
                                    }
                                }
                            }
                        }
                        gk_slice[co * k * k + krow * k + kcol] = acc;
                    }
                }
            }
        });
    Ok(grad_k)
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Numerically stable logistic function, mapping into (0, 1).
pub fn sigmoid<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| {
        if v >= T::zero() {
            T::one() / (T::one() + (-v).exp())
        } else {
            let e = v.exp();
            e / (T::one() + e)
        }
    })
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    expect_same_shape("add", a, b)?;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| *x + *y)
        .collect();
    Tensor::new(a.shape().to_vec(), data)
}

pub fn sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    expect_same_shape("sub", a, b)?;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| *x - *y)
        .collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// Elementwise product.
pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    expect_same_shape("mul", a, b)?;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| *x * *y)
        .collect();
    Tensor::new(a.shape().to_vec(), data)
}

pub fn mul_scalar<T: Scalar>(input: &Tensor<T>, factor: T) -> Tensor<T> {
    input.map(|v| v * factor)
}

pub fn square<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| v * v)
}

/// Sum of all elements, as a rank-0 tensor.
pub fn sum<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let mut acc = T::zero();
    for v in input.data() {
        acc += *v;
    }
    Tensor::scalar(acc)
}

/// Mean of all elements, as a rank-0 tensor.
pub fn mean<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let n = T::from_usize(input.numel());
    let mut acc = T::zero();
    for v in input.data() {
        acc += *v;
    }
    Tensor::scalar(acc / n)
}

/// Concatenate along the channel axis: `[n,c1,h,w] ++ [n,c2,h,w]`.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (na, ca, ha, wa) = a.dims4("concat_channels")?;
    let (nb, cb, hb, wb) = b.dims4("concat_channels")?;
    if (na, ha, wa) != (nb, hb, wb) {
        return Err(Error::shape(
            "concat_channels",
            format!("matching batch and spatial dims [{na}, _, {ha}, {wa}]"),
            format!("[{nb}, _, {hb}, {wb}]"),
        ));
    }
    let plane = ha * wa;
    let mut data = Vec::with_capacity(na * (ca + cb) * plane);
    for ni in 0..na {
        data.extend_from_slice(&a.data()[ni * ca * plane..][..ca * plane]);
        data.extend_from_slice(&b.data()[ni * cb * plane..][..cb * plane]);
    }
    Tensor::new(vec![na, ca + cb, ha, wa], data)
}

/// Split a gradient of `concat_channels(a, b)` back into the two parts.
pub fn split_channels<T: Scalar>(
    grad: &Tensor<T>,
    ca: usize,
    cb: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (n, c, h, w) = grad.dims4("split_channels")?;
    debug_assert_eq!(c, ca + cb);
    let plane = h * w;
    let mut da = Vec::with_capacity(n * ca * plane);
    let mut db = Vec::with_capacity(n * cb * plane);
    for ni in 0..n {
        let base = ni * c * plane;
        da.extend_from_slice(&grad.data()[base..][..ca * plane]);
        db.extend_from_slice(&grad.data()[base + ca * plane..][..cb * plane]);
    }
    Ok((
        Tensor::new(vec![n, ca, h, w], da)?,
        Tensor::new(vec![n, cb, h, w], db)?,
    ))
}
