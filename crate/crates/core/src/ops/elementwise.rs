//! Pointwise arithmetic with trailing-operand broadcasting, activations, and
//! layout operators (concat, slice, pad, depth-to-space).

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Binary operators whose right operand may broadcast over any axis where
/// its extent is 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

pub(crate) fn broadcast_ok(a: Shape, b: Shape) -> bool {
    a.dims().iter().zip(b.dims()).all(|(&x, y)| y == x || y == 1)
}

/// Visit `(flat index into a, flat index into b)` for every element of `a`.
#[inline]
pub(crate) fn for_each_pair(a: Shape, b: Shape, mut f: impl FnMut(usize, usize)) {
    if a == b {
        (0..a.numel()).for_each(|i| f(i, i));
        return;
    }
    let st = |ext: usize, stride: usize| if ext == 1 { 0 } else { stride };
    let sw = st(b.w, 1);
    let sh = st(b.h, b.w);
    let sc = st(b.c, b.h * b.w);
    let sn = st(b.n, b.c * b.h * b.w);
    let mut ia = 0;
    for n in 0..a.n {
        for c in 0..a.c {
            for h in 0..a.h {
                let base = n * sn + c * sc + h * sh;
                for w in 0..a.w {
                    f(ia, base + w * sw);
                    ia += 1;
                }
            }
        }
    }
}

pub(crate) fn binary_forward<T: Scalar>(kind: BinaryKind, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if !broadcast_ok(a.shape(), b.shape()) {
        return Err(Error::Broadcast {
            op: match kind {
                BinaryKind::Add => "add",
                BinaryKind::Sub => "sub",
                BinaryKind::Mul => "mul",
                BinaryKind::Div => "div",
            },
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let mut out = Tensor::zeros(a.shape());
    let (ad, bd) = (a.data(), b.data());
    let od = out.data_mut();
    match kind {
        BinaryKind::Add => for_each_pair(a.shape(), b.shape(), |i, j| od[i] = ad[i] + bd[j]),
        BinaryKind::Sub => for_each_pair(a.shape(), b.shape(), |i, j| od[i] = ad[i] - bd[j]),
        BinaryKind::Mul => for_each_pair(a.shape(), b.shape(), |i, j| od[i] = ad[i] * bd[j]),
        BinaryKind::Div => for_each_pair(a.shape(), b.shape(), |i, j| od[i] = ad[i] / bd[j]),
    }
    Ok(out)
}

pub(crate) fn binary_backward<T: Scalar>(
    kind: BinaryKind,
    a: &Tensor<T>,
    b: &Tensor<T>,
    g: &Tensor<T>,
    need: [bool; 2],
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let (ad, bd, gd) = (a.data(), b.data(), g.data());
    let mut da = need[0].then(|| Tensor::zeros(a.shape()));
    let mut db = need[1].then(|| Tensor::zeros(b.shape()));
    if let Some(da) = da.as_mut() {
        let dd = da.data_mut();
        match kind {
            BinaryKind::Add | BinaryKind::Sub => dd.copy_from_slice(gd),
            BinaryKind::Mul => for_each_pair(a.shape(), b.shape(), |i, j| dd[i] = gd[i] * bd[j]),
            BinaryKind::Div => for_each_pair(a.shape(), b.shape(), |i, j| dd[i] = gd[i] / bd[j]),
        }
    }
    if let Some(db) = db.as_mut() {
        let dd = db.data_mut();
        match kind {
            BinaryKind::Add => for_each_pair(a.shape(), b.shape(), |i, j| dd[j] += gd[i]),
            BinaryKind::Sub => for_each_pair(a.shape(), b.shape(), |i, j| dd[j] -= gd[i]),
            BinaryKind::Mul => for_each_pair(a.shape(), b.shape(), |i, j| dd[j] += gd[i] * ad[i]),
            BinaryKind::Div => for_each_pair(a.shape(), b.shape(), |i, j| dd[j] -= gd[i] * ad[i] / (bd[j] * bd[j])),
        }
    }
    (da, db)
}

/// Pointwise nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryKind {
    Sigmoid,
    /// Tanh approximation of the Gaussian error linear unit.
    Gelu,
    Relu,
    Abs,
    Scale(f64),
    Offset(f64),
    Clamp(f64, f64),
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
fn gelu<T: Scalar>(x: T) -> T {
    let inner = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    T::of(0.5) * x * (T::one() + inner.tanh())
}

#[inline]
fn gelu_grad<T: Scalar>(x: T) -> T {
    let inner = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    let t = inner.tanh();
    let dinner = T::of(GELU_C) * (T::one() + T::of(3.0 * GELU_A) * x * x);
    T::of(0.5) * (T::one() + t) + T::of(0.5) * x * (T::one() - t * t) * dinner
}

pub(crate) fn unary_forward<T: Scalar>(kind: UnaryKind, a: &Tensor<T>) -> Tensor<T> {
    match kind {
        UnaryKind::Sigmoid => a.map(sigmoid),
        UnaryKind::Gelu => a.map(gelu),
        UnaryKind::Relu => a.map(|x| x.max(T::zero())),
        UnaryKind::Abs => a.map(|x| x.abs()),
        UnaryKind::Scale(s) => {
            let s = T::of(s);
            a.map(|x| x * s)
        }
        UnaryKind::Offset(s) => {
            let s = T::of(s);
            a.map(|x| x + s)
        }
        UnaryKind::Clamp(lo, hi) => {
            let (lo, hi) = (T::of(lo), T::of(hi));
            a.map(|x| x.max(lo).min(hi))
        }
    }
}

pub(crate) fn unary_backward<T: Scalar>(kind: UnaryKind, a: &Tensor<T>, out: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let mut d = g.clone();
    let dd = d.data_mut();
    let (ad, od) = (a.data(), out.data());
    match kind {
        UnaryKind::Sigmoid => {
            for (x, &y) in dd.iter_mut().zip(od) {
                *x *= y * (T::one() - y);
            }
        }
        UnaryKind::Gelu => {
            for (x, &v) in dd.iter_mut().zip(ad) {
                *x *= gelu_grad(v);
            }
        }
        UnaryKind::Relu => {
            for (x, &v) in dd.iter_mut().zip(ad) {
                if v <= T::zero() {
                    *x = T::zero();
                }
            }
        }
        UnaryKind::Abs => {
            for (x, &v) in dd.iter_mut().zip(ad) {
                *x *= if v > T::zero() {
                    T::one()
                } else if v < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                };
            }
        }
        UnaryKind::Scale(s) => {
            let s = T::of(s);
            dd.iter_mut().for_each(|x| *x *= s);
        }
        UnaryKind::Offset(_) => {}
        UnaryKind::Clamp(lo, hi) => {
            let (lo, hi) = (T::of(lo), T::of(hi));
            for (x, &v) in dd.iter_mut().zip(ad) {
                if v < lo || v > hi {
                    *x = T::zero();
                }
            }
        }
    }
    d
}

pub(crate) fn concat_forward<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::invalid("concat", "no inputs"))?
        .shape();
    let mut c_total = 0;
    for p in parts {
        let s = p.shape();
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(Error::Broadcast {
                op: "concat",
                lhs: first,
                rhs: s,
            });
        }
        c_total += s.c;
    }
    let os = first.with_c(c_total);
    let mut out = Vec::with_capacity(os.numel());
    for n in 0..os.n {
        for p in parts {
            let len = p.shape().c * os.hw();
            out.extend_from_slice(&p.data()[n * len..(n + 1) * len]);
        }
    }
    Tensor::from_vec(os, out)
}

/// Channels `[start, start + len)` of `a`.
pub(crate) fn slice_channels<T: Scalar>(a: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let s = a.shape();
    if len == 0 || start + len > s.c {
        return Err(Error::shape(
            "slice_channels",
            format!("channels {start}..{} of {}", start + len, s.c),
        ));
    }
    let os = s.with_c(len);
    let mut out = Vec::with_capacity(os.numel());
    for n in 0..s.n {
        let base = (n * s.c + start) * s.hw();
        out.extend_from_slice(&a.data()[base..base + len * s.hw()]);
    }
    Tensor::from_vec(os, out)
}

/// Add `g` (shaped like the slice) into channels `[start, start + len)` of `dst`.
pub(crate) fn scatter_channels<T: Scalar>(dst: &mut Tensor<T>, g: &Tensor<T>, start: usize) {
    let s = dst.shape();
    let gs = g.shape();
    for n in 0..s.n {
        let base = (n * s.c + start) * s.hw();
        let src = &g.data()[n * gs.c * s.hw()..(n + 1) * gs.c * s.hw()];
        for (d, v) in dst.data_mut()[base..base + src.len()].iter_mut().zip(src) {
            *d += *v;
        }
    }
}

/// Boundary handling for [`pad`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PadMode {
    Zero,
    /// Mirror without repeating the edge sample: `[a, b, c]` padded by one
    /// becomes `[b, a, b, c, b]`. Widths larger than the extent fold back
    /// repeatedly.
    Reflect,
}

/// Source index for padded position `i` (already shifted by `-pad`), or
/// `None` for zero padding outside the image.
#[inline]
pub(crate) fn source_index(i: isize, len: usize, mode: PadMode) -> Option<usize> {
    if i >= 0 && (i as usize) < len {
        return Some(i as usize);
    }
    match mode {
        PadMode::Zero => None,
        PadMode::Reflect => {
            if len == 1 {
                return Some(0);
            }
            let period = 2 * (len as isize - 1);
            let m = i.rem_euclid(period);
            Some(if m < len as isize { m } else { period - m } as usize)
        }
    }
}

pub(crate) fn pad_check(s: Shape, pad: usize, mode: PadMode) -> Result<Shape> {
    if mode == PadMode::Reflect && pad > 0 && (s.h < 2 || s.w < 2) {
        return Err(Error::shape(
            "pad",
            format!("reflect padding needs spatial extent >= 2, got {s}"),
        ));
    }
    Ok(Shape::new(s.n, s.c, s.h + 2 * pad, s.w + 2 * pad))
}

pub(crate) fn pad_forward<T: Scalar>(a: &Tensor<T>, pad: usize, mode: PadMode) -> Result<Tensor<T>> {
    let s = a.shape();
    let os = pad_check(s, pad, mode)?;
    let p = pad as isize;
    let rows: Vec<Option<usize>> = (0..os.h).map(|y| source_index(y as isize - p, s.h, mode)).collect();
    let cols: Vec<Option<usize>> = (0..os.w).map(|x| source_index(x as isize - p, s.w, mode)).collect();
    let mut out = Tensor::zeros(os);
    for (plane_out, plane_in) in out.data_mut().chunks_mut(os.hw()).zip(a.data().chunks(s.hw())) {
        for (y, ry) in rows.iter().enumerate() {
            let Some(ry) = ry else { continue };
            let src = &plane_in[ry * s.w..(ry + 1) * s.w];
            let dst = &mut plane_out[y * os.w..(y + 1) * os.w];
            for (d, cx) in dst.iter_mut().zip(&cols) {
                if let Some(cx) = cx {
                    *d = src[*cx];
                }
            }
        }
    }
    Ok(out)
}

pub(crate) fn pad_backward<T: Scalar>(input: Shape, g: &Tensor<T>, pad: usize, mode: PadMode) -> Tensor<T> {
    let os = g.shape();
    let p = pad as isize;
    let rows: Vec<Option<usize>> = (0..os.h).map(|y| source_index(y as isize - p, input.h, mode)).collect();
    let cols: Vec<Option<usize>> = (0..os.w).map(|x| source_index(x as isize - p, input.w, mode)).collect();
    let mut d = Tensor::zeros(input);
    for (plane_d, plane_g) in d.data_mut().chunks_mut(input.hw()).zip(g.data().chunks(os.hw())) {
        for (y, ry) in rows.iter().enumerate() {
            let Some(ry) = ry else { continue };
            let src = &plane_g[y * os.w..(y + 1) * os.w];
            for (v, cx) in src.iter().zip(&cols) {
                if let Some(cx) = cx {
                    plane_d[ry * input.w + cx] += *v;
                }
            }
        }
    }
    d
}

/// Depth-to-space: `(N, C r^2, H, W) -> (N, C, H r, W r)`, with input
/// channel `c r^2 + i r + j` landing at sub-pixel `(i, j)`.
pub(crate) fn pixel_shuffle_shape(s: Shape, r: usize) -> Result<Shape> {
    if r == 0 || s.c % (r * r) != 0 {
        return Err(Error::shape(
            "pixel_shuffle",
            format!("channels {} not divisible by {}", s.c, r * r),
        ));
    }
    Ok(Shape::new(s.n, s.c / (r * r), s.h * r, s.w * r))
}

pub(crate) fn pixel_shuffle<T: Scalar>(a: &Tensor<T>, r: usize, inverse_grad: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let s = a.shape();
    let os = pixel_shuffle_shape(s, r)?;
    match inverse_grad {
        None => {
            let mut out = Tensor::zeros(os);
            for n in 0..s.n {
                for c in 0..s.c {
                    let (oc, sub) = (c / (r * r), c % (r * r));
                    let (i, j) = (sub / r, sub % r);
                    for h in 0..s.h {
                        for w in 0..s.w {
                            out.set(n, oc, h * r + i, w * r + j, a.at(n, c, h, w));
                        }
                    }
                }
            }
            Ok(out)
        }
        Some(g) => {
            let mut d = Tensor::zeros(s);
            for n in 0..s.n {
                for c in 0..s.c {
                    let (oc, sub) = (c / (r * r), c % (r * r));
                    let (i, j) = (sub / r, sub % r);
                    for h in 0..s.h {
                        for w in 0..s.w {
                            d.set(n, c, h, w, g.at(n, oc, h * r + i, w * r + j));
                        }
                    }
                }
            }
            Ok(d)
        }
    }
}
