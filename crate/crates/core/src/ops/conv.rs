//! Direct and im2col convolution kernels plus their adjoints.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Geometry of a convolution with zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl Default for ConvGeom {
    fn default() -> Self {
        ConvGeom {
            stride: 1,
            padding: 0,
            dilation: 1,
            groups: 1,
        }
    }
}

pub(crate) fn out_extent(input: usize, kernel: usize, g: &ConvGeom) -> Option<usize> {
    let span = g.dilation * (kernel - 1) + 1;
    let padded = input + 2 * g.padding;
    if padded < span {
        None
    } else {
        Some((padded - span) / g.stride + 1)
    }
}

pub(crate) fn output_shape(x: Shape, w: Shape, g: &ConvGeom) -> Result<Shape> {
    const OP: &str = "conv2d";
    if g.groups == 0 || g.stride == 0 || g.dilation == 0 {
        return Err(Error::invalid(OP, "stride, dilation and groups must be >= 1"));
    }
    if x.c % g.groups != 0 {
        return Err(Error::shape(
            OP,
            format!("input channels {} not divisible by groups {}", x.c, g.groups),
        ));
    }
    if w.n % g.groups != 0 {
        return Err(Error::shape(
            OP,
            format!("output channels {} not divisible by groups {}", w.n, g.groups),
        ));
    }
    if w.c != x.c / g.groups {
        return Err(Error::shape(
            OP,
            format!(
                "weight in-channels {} but input has {} channels over {} groups",
                w.c, x.c, g.groups
            ),
        ));
    }
    match (out_extent(x.h, w.h, g), out_extent(x.w, w.w, g)) {
        (Some(h), Some(wd)) if h > 0 && wd > 0 => Ok(Shape::new(x.n, w.n, h, wd)),
        _ => Err(Error::EmptyOutput {
            op: OP,
            detail: format!("input {x} with kernel {}x{} and {g:?}", w.h, w.w),
        }),
    }
}

/// Output positions `[lo, hi)` whose tap at offset `k_off` lands inside `0..len`.
#[inline]
fn valid_range(len: usize, out_len: usize, k_off: usize, stride: usize, pad: usize) -> (usize, usize) {
    // i = o * stride + k_off - pad must lie in [0, len)
    let lo = if pad > k_off { (pad - k_off).div_ceil(stride) } else { 0 };
    let hi = if len + pad > k_off {
        ((len + pad - k_off - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo.min(hi), hi)
}

fn is_depthwise(x: Shape, w: Shape, g: &ConvGeom) -> bool {
    g.groups > 1 && g.groups == x.c && w.n == x.c && w.c == 1
}

fn is_pointwise(w: Shape, g: &ConvGeom) -> bool {
    w.h == 1 && w.w == 1 && g.stride == 1 && g.padding == 0 && g.groups == 1
}

/// Unfold one sample/group of `x` into a `(cg*kh*kw, ho*wo)` matrix.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    plane: &[T],
    cg: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    g: &ConvGeom,
    cols: &mut [T],
) {
    let p = ho * wo;
    for c in 0..cg {
        let src = &plane[c * h * w..(c + 1) * h * w];
        for ky in 0..kh {
            let (oy_lo, oy_hi) = valid_range(h, ho, ky * g.dilation, g.stride, g.padding);
            for kx in 0..kw {
                let row = (c * kh + ky) * kw + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                let (ox_lo, ox_hi) = valid_range(w, wo, kx * g.dilation, g.stride, g.padding);
                for oy in 0..ho {
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if oy < oy_lo || oy >= oy_hi || ox_lo >= ox_hi {
                        line.fill(T::zero());
                        continue;
                    }
                    let iy = oy * g.stride + ky * g.dilation - g.padding;
                    line[..ox_lo].fill(T::zero());
                    line[ox_hi..].fill(T::zero());
                    let row_src = &src[iy * w..(iy + 1) * w];
                    if g.stride == 1 {
                        let ix0 = ox_lo + kx * g.dilation - g.padding;
                        line[ox_lo..ox_hi].copy_from_slice(&row_src[ix0..ix0 + (ox_hi - ox_lo)]);
                    } else {
                        for ox in ox_lo..ox_hi {
                            line[ox] = row_src[ox * g.stride + kx * g.dilation - g.padding];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into a plane.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(
    cols: &[T],
    cg: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    g: &ConvGeom,
    plane: &mut [T],
) {
    let p = ho * wo;
    for c in 0..cg {
        let dst = &mut plane[c * h * w..(c + 1) * h * w];
        for ky in 0..kh {
            let (oy_lo, oy_hi) = valid_range(h, ho, ky * g.dilation, g.stride, g.padding);
            for kx in 0..kw {
                let row = (c * kh + ky) * kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                let (ox_lo, ox_hi) = valid_range(w, wo, kx * g.dilation, g.stride, g.padding);
                if ox_lo >= ox_hi {
                    continue;
                }
                for oy in oy_lo..oy_hi {
                    let iy = oy * g.stride + ky * g.dilation - g.padding;
                    let line = &src[oy * wo..(oy + 1) * wo];
                    let row_dst = &mut dst[iy * w..(iy + 1) * w];
                    if g.stride == 1 {
                        let ix0 = ox_lo + kx * g.dilation - g.padding;
                        for (d, s) in row_dst[ix0..ix0 + (ox_hi - ox_lo)].iter_mut().zip(&line[ox_lo..ox_hi]) {
                            *d += *s;
                        }
                    } else {
                        for ox in ox_lo..ox_hi {
                            row_dst[ox * g.stride + kx * g.dilation - g.padding] += line[ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: &ConvGeom,
) -> Result<Tensor<T>> {
    let xs = x.shape();
    let ws = weight.shape();
    let os = output_shape(xs, ws, g)?;
    if let Some(b) = bias {
        if b.numel() != ws.n {
            return Err(Error::shape(
                "conv2d",
                format!("bias has {} values for {} output channels", b.numel(), ws.n),
            ));
        }
    }
    let mut out = Tensor::zeros(os);
    if is_depthwise(xs, ws, g) {
        depthwise_forward(x, weight, g, &mut out);
    } else {
        let cg = xs.c / g.groups;
        let og = ws.n / g.groups;
        let kc = cg * ws.h * ws.w;
        let p = os.hw();
        let pointwise = is_pointwise(ws, g);
        let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); kc * p] };
        let wd = weight.data();
        for n in 0..xs.n {
            for gi in 0..g.groups {
                let start = (n * xs.c + gi * cg) * xs.hw();
                let plane = &x.data()[start..start + cg * xs.hw()];
                let b: &[T] = if pointwise {
                    plane
                } else {
                    im2col(plane, cg, xs.h, xs.w, ws.h, ws.w, os.h, os.w, g, &mut cols);
                    &cols
                };
                let o_start = (n * os.c + gi * og) * p;
                let o = &mut out.data_mut()[o_start..o_start + og * p];
                let a = &wd[gi * og * kc..(gi + 1) * og * kc];
                T::gemm(
                    og,
                    kc,
                    p,
                    T::one(),
                    a,
                    kc as isize,
                    1,
                    b,
                    p as isize,
                    1,
                    T::zero(),
                    o,
                    p as isize,
                    1,
                );
            }
        }
    }
    if let Some(b) = bias {
        let p = os.hw();
        let bd = b.data();
        for (i, chunk) in out.data_mut().chunks_mut(p).enumerate() {
            let bv = bd[i % os.c];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
    }
    Ok(out)
}

fn depthwise_forward<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, g: &ConvGeom, out: &mut Tensor<T>) {
    let xs = x.shape();
    let ws = weight.shape();
    let os = out.shape();
    let (kh, kw) = (ws.h, ws.w);
    for n in 0..xs.n {
        for c in 0..xs.c {
            let src = &x.data()[(n * xs.c + c) * xs.hw()..][..xs.hw()];
            let dst = &mut out.data_mut()[(n * os.c + c) * os.hw()..][..os.hw()];
            let wk = &weight.data()[c * kh * kw..(c + 1) * kh * kw];
            for ky in 0..kh {
                let (oy_lo, oy_hi) = valid_range(xs.h, os.h, ky * g.dilation, g.stride, g.padding);
                for kx in 0..kw {
                    let wv = wk[ky * kw + kx];
                    let (ox_lo, ox_hi) = valid_range(xs.w, os.w, kx * g.dilation, g.stride, g.padding);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    for oy in oy_lo..oy_hi {
                        let iy = oy * g.stride + ky * g.dilation - g.padding;
                        let srow = &src[iy * xs.w..(iy + 1) * xs.w];
                        let drow = &mut dst[oy * os.w..(oy + 1) * os.w];
                        if g.stride == 1 {
                            let ix0 = ox_lo + kx * g.dilation - g.padding;
                            for (d, s) in drow[ox_lo..ox_hi].iter_mut().zip(&srow[ix0..]) {
                                *d += wv * *s;
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                drow[ox] += wv * srow[ox * g.stride + kx * g.dilation - g.padding];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn depthwise_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    g: &ConvGeom,
    gout: &Tensor<T>,
    dx: Option<&mut Tensor<T>>,
    dw: Option<&mut Tensor<T>>,
) {
    let xs = x.shape();
    let ws = weight.shape();
    let os = gout.shape();
    let (kh, kw) = (ws.h, ws.w);
    let mut dx = dx;
    let mut dw = dw;
    for n in 0..xs.n {
        for c in 0..xs.c {
            let src = &x.data()[(n * xs.c + c) * xs.hw()..][..xs.hw()];
            let go = &gout.data()[(n * os.c + c) * os.hw()..][..os.hw()];
            for ky in 0..kh {
                let (oy_lo, oy_hi) = valid_range(xs.h, os.h, ky * g.dilation, g.stride, g.padding);
                for kx in 0..kw {
                    let widx = c * kh * kw + ky * kw + kx;
                    let wv = weight.data()[widx];
                    let (ox_lo, ox_hi) = valid_range(xs.w, os.w, kx * g.dilation, g.stride, g.padding);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    let mut acc = T::zero();
                    for oy in oy_lo..oy_hi {
                        let iy = oy * g.stride + ky * g.dilation - g.padding;
                        let grow = &go[oy * os.w..(oy + 1) * os.w];
                        let ix0 = ox_lo * g.stride + kx * g.dilation - g.padding;
                        let len = ox_hi - ox_lo;
                        if dw.is_some() {
                            let srow = &src[iy * xs.w..(iy + 1) * xs.w];
                            if g.stride == 1 {
                                acc += grow[ox_lo..ox_hi]
                                    .iter()
                                    .zip(&srow[ix0..ix0 + len])
                                    .map(|(a, b)| *a * *b)
                                    .sum::<T>();
                            } else {
                                for ox in ox_lo..ox_hi {
                                    acc += grow[ox] * srow[ox * g.stride + kx * g.dilation - g.padding];
                                }
                            }
                        }
                        if let Some(dx) = dx.as_deref_mut() {
                            let base = (n * xs.c + c) * xs.hw() + iy * xs.w;
                            let drow = &mut dx.data_mut()[base..base + xs.w];
                            if g.stride == 1 {
                                for (d, gv) in drow[ix0..ix0 + len].iter_mut().zip(&grow[ox_lo..ox_hi]) {
                                    *d += wv * *gv;
                                }
                            } else {
                                for ox in ox_lo..ox_hi {
                                    drow[ox * g.stride + kx * g.dilation - g.padding] += wv * grow[ox];
                                }
                            }
                        }
                    }
                    if let Some(dw) = dw.as_deref_mut() {
                        dw.data_mut()[widx] += acc;
                    }
                }
            }
        }
    }
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

pub(crate) fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    g: &ConvGeom,
    gout: &Tensor<T>,
    need: [bool; 3],
) -> ConvGrads<T> {
    let xs = x.shape();
    let ws = weight.shape();
    let os = gout.shape();
    let mut dx = need[0].then(|| Tensor::zeros(xs));
    let mut dw = need[1].then(|| Tensor::zeros(ws));
    let db = need[2].then(|| {
        let mut acc = vec![T::zero(); os.c];
        for (i, chunk) in gout.data().chunks(os.hw()).enumerate() {
            acc[i % os.c] += chunk.iter().copied().sum::<T>();
        }
        Tensor::from_vec([1, os.c, 1, 1], acc).expect("bias shape")
    });
    if is_depthwise(xs, ws, g) {
        depthwise_backward(x, weight, g, gout, dx.as_mut(), dw.as_mut());
        return ConvGrads {
            input: dx,
            weight: dw,
            bias: db,
        };
    }
    let cg = xs.c / g.groups;
    let og = ws.n / g.groups;
    let kc = cg * ws.h * ws.w;
    let p = os.hw();
    let pointwise = is_pointwise(ws, g);
    let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); kc * p] };
    let mut dcols = if pointwise || dx.is_none() {
        Vec::new()
    } else {
        vec![T::zero(); kc * p]
    };
    for n in 0..xs.n {
        for gi in 0..g.groups {
            let start = (n * xs.c + gi * cg) * xs.hw();
            let go = &gout.data()[(n * os.c + gi * og) * p..][..og * p];
            let wg = &weight.data()[gi * og * kc..(gi + 1) * og * kc];
            if let Some(dw) = dw.as_mut() {
                let plane = &x.data()[start..start + cg * xs.hw()];
                let b: &[T] = if pointwise {
                    plane
                } else {
                    im2col(plane, cg, xs.h, xs.w, ws.h, ws.w, os.h, os.w, g, &mut cols);
                    &cols
                };
                // dW (og x kc) += gout (og x p) * cols^T (p x kc)
                let dwg = &mut dw.data_mut()[gi * og * kc..(gi + 1) * og * kc];
                T::gemm(
                    og,
                    p,
                    kc,
                    T::one(),
                    go,
                    p as isize,
                    1,
                    b,
                    1,
                    p as isize,
                    T::one(),
                    dwg,
                    kc as isize,
                    1,
                );
            }
            if let Some(dx) = dx.as_mut() {
                // dcols (kc x p) = W^T (kc x og) * gout (og x p)
                if pointwise {
                    let dplane = &mut dx.data_mut()[start..start + cg * xs.hw()];
                    T::gemm(
                        kc,
                        og,
                        p,
                        T::one(),
                        wg,
                        1,
                        kc as isize,
                        go,
                        p as isize,
                        1,
                        T::one(),
                        dplane,
                        p as isize,
                        1,
                    );
                } else {
                    T::gemm(
                        kc,
                        og,
                        p,
                        T::one(),
                        wg,
                        1,
                        kc as isize,
                        go,
                        p as isize,
                        1,
                        T::zero(),
                        &mut dcols,
                        p as isize,
                        1,
                    );
                    let dplane = &mut dx.data_mut()[start..start + cg * xs.hw()];
                    col2im(&dcols, cg, xs.h, xs.w, ws.h, ws.w, os.h, os.w, g, dplane);
                }
            }
        }
    }
    ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    }
}
