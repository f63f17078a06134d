//! Bilinear sampling at absolute fractional coordinates.
//!
//! `coords` has `2K` channels laid out as `(y_0, x_0, y_1, x_1, ...)`. The
//! output stacks the `K` sampled maps per input channel, so output channel
//! `c * K + k` holds channel `c` sampled at point `k`. That ordering matches
//! an unfolded `(C * K)` column layout, which lets a deformable convolution
//! apply its kernel as a single pointwise contraction.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

#[inline]
fn fetch<T: Scalar>(plane: &[T], h: usize, w: usize, y: isize, x: isize) -> T {
    if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
        T::zero()
    } else {
        plane[y as usize * w + x as usize]
    }
}

pub(crate) fn check<T: Scalar>(input: &Tensor<T>, coords: &Tensor<T>) -> Result<Shape> {
    let xs = input.shape();
    let cs = coords.shape();
    if cs.c % 2 != 0 {
        return Err(Error::shape(
            "grid_sample_bilinear",
            format!("coordinate channels must be even, got {}", cs.c),
        ));
    }
    if cs.n != xs.n {
        return Err(Error::shape(
            "grid_sample_bilinear",
            format!("batch {} vs coordinate batch {}", xs.n, cs.n),
        ));
    }
    Ok(Shape::new(xs.n, xs.c * (cs.c / 2), cs.h, cs.w))
}

pub(crate) fn forward<T: Scalar>(input: &Tensor<T>, coords: &Tensor<T>) -> Result<Tensor<T>> {
    let os = check(input, coords)?;
    let xs = input.shape();
    let cs = coords.shape();
    let k = cs.c / 2;
    let p = cs.hw();
    let mut out = Tensor::zeros(os);
    for n in 0..xs.n {
        let cbase = n * cs.c * p;
        for kk in 0..k {
            let ys = &coords.data()[cbase + 2 * kk * p..][..p];
            let xs_ = &coords.data()[cbase + (2 * kk + 1) * p..][..p];
            for c in 0..xs.c {
                let plane = &input.data()[(n * xs.c + c) * xs.hw()..][..xs.hw()];
                let o = &mut out.data_mut()[(n * os.c + c * k + kk) * p..][..p];
                for i in 0..p {
                    let (y, x) = (ys[i], xs_[i]);
                    let (y0, x0) = (y.floor(), x.floor());
                    let (fy, fx) = (y - y0, x - x0);
                    let (yi, xi) = (
                        y0.to_isize().unwrap_or(isize::MIN / 2),
                        x0.to_isize().unwrap_or(isize::MIN / 2),
                    );
                    let v00 = fetch(plane, xs.h, xs.w, yi, xi);
                    let v01 = fetch(plane, xs.h, xs.w, yi, xi + 1);
                    let v10 = fetch(plane, xs.h, xs.w, yi + 1, xi);
                    let v11 = fetch(plane, xs.h, xs.w, yi + 1, xi + 1);
                    let one = T::one();
                    o[i] = (one - fy) * ((one - fx) * v00 + fx * v01) + fy * ((one - fx) * v10 + fx * v11);
                }
            }
        }
    }
    Ok(out)
}

pub(crate) fn backward<T: Scalar>(
    input: &Tensor<T>,
    coords: &Tensor<T>,
    gout: &Tensor<T>,
    need: [bool; 2],
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let xs = input.shape();
    let cs = coords.shape();
    let os = gout.shape();
    let k = cs.c / 2;
    let p = cs.hw();
    let mut dx = need[0].then(|| Tensor::zeros(xs));
    let mut dc = need[1].then(|| Tensor::zeros(cs));
    let one = T::one();
    for n in 0..xs.n {
        let cbase = n * cs.c * p;
        for kk in 0..k {
            for c in 0..xs.c {
                let pbase = (n * xs.c + c) * xs.hw();
                let g = &gout.data()[(n * os.c + c * k + kk) * p..][..p];
                for i in 0..p {
                    let gi = g[i];
                    if gi == T::zero() {
                        continue;
                    }
                    let y = coords.data()[cbase + 2 * kk * p + i];
                    let x = coords.data()[cbase + (2 * kk + 1) * p + i];
                    let (y0, x0) = (y.floor(), x.floor());
                    let (fy, fx) = (y - y0, x - x0);
                    let yi = y0.to_isize().unwrap_or(isize::MIN / 2);
                    let xi = x0.to_isize().unwrap_or(isize::MIN / 2);
                    let corners = [
                        (yi, xi, (one - fy) * (one - fx)),
                        (yi, xi + 1, (one - fy) * fx),
                        (yi + 1, xi, fy * (one - fx)),
                        (yi + 1, xi + 1, fy * fx),
                    ];
                    if let Some(dx) = dx.as_mut() {
                        for &(cy, cx, wgt) in &corners {
                            if cy >= 0 && cx >= 0 && cy < xs.h as isize && cx < xs.w as isize {
                                dx.data_mut()[pbase + cy as usize * xs.w + cx as usize] += gi * wgt;
                            }
                        }
                    }
                    if let Some(dc) = dc.as_mut() {
                        let plane = &input.data()[pbase..pbase + xs.hw()];
                        let v00 = fetch(plane, xs.h, xs.w, yi, xi);
                        let v01 = fetch(plane, xs.h, xs.w, yi, xi + 1);
                        let v10 = fetch(plane, xs.h, xs.w, yi + 1, xi);
                        let v11 = fetch(plane, xs.h, xs.w, yi + 1, xi + 1);
                        let d_dy = (one - fx) * (v10 - v00) + fx * (v11 - v01);
                        let d_dx = (one - fy) * (v01 - v00) + fy * (v11 - v10);
                        dc.data_mut()[cbase + 2 * kk * p + i] += gi * d_dy;
                        dc.data_mut()[cbase + (2 * kk + 1) * p + i] += gi * d_dx;
                    }
                }
            }
        }
    }
    (dx, dc)
}
