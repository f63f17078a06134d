//! Global spatial pools and per-pixel channel reductions.

use crate::tensor::{Scalar, Shape, Tensor};

pub(crate) fn global_avg<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let s = a.shape();
    let inv = T::one() / T::of(s.hw() as f64);
    let data = a
        .data()
        .chunks(s.hw())
        .map(|p| p.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::from_vec([s.n, s.c, 1, 1], data).expect("pooled shape")
}

pub(crate) fn global_avg_backward<T: Scalar>(input: Shape, g: &Tensor<T>) -> Tensor<T> {
    let inv = T::one() / T::of(input.hw() as f64);
    let mut d = Tensor::zeros(input);
    for (plane, &gv) in d.data_mut().chunks_mut(input.hw()).zip(g.data()) {
        plane.fill(gv * inv);
    }
    d
}

/// Max per plane; ties resolve to the first index in row-major order.
pub(crate) fn global_max<T: Scalar>(a: &Tensor<T>) -> (Tensor<T>, Vec<usize>) {
    let s = a.shape();
    let mut vals = Vec::with_capacity(s.n * s.c);
    let mut arg = Vec::with_capacity(s.n * s.c);
    for (pi, p) in a.data().chunks(s.hw()).enumerate() {
        let mut best = 0;
        for (i, &v) in p.iter().enumerate() {
            if v > p[best] {
                best = i;
            }
        }
        vals.push(p[best]);
        arg.push(pi * s.hw() + best);
    }
    (Tensor::from_vec([s.n, s.c, 1, 1], vals).expect("pooled shape"), arg)
}

pub(crate) fn scatter_argmax<T: Scalar>(input: Shape, g: &Tensor<T>, arg: &[usize]) -> Tensor<T> {
    let mut d = Tensor::zeros(input);
    for (&i, &gv) in arg.iter().zip(g.data()) {
        d.data_mut()[i] += gv;
    }
    d
}

/// Mean over channels at each pixel: `(N, C, H, W) -> (N, 1, H, W)`.
pub(crate) fn channel_mean<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let s = a.shape();
    let inv = T::one() / T::of(s.c as f64);
    let mut out = Tensor::zeros([s.n, 1, s.h, s.w]);
    for n in 0..s.n {
        let dst = &mut out.data_mut()[n * s.hw()..(n + 1) * s.hw()];
        for c in 0..s.c {
            let src = &a.data()[(n * s.c + c) * s.hw()..][..s.hw()];
            dst.iter_mut().zip(src).for_each(|(d, v)| *d += *v);
        }
        dst.iter_mut().for_each(|d| *d *= inv);
    }
    out
}

pub(crate) fn channel_mean_backward<T: Scalar>(input: Shape, g: &Tensor<T>) -> Tensor<T> {
    let inv = T::one() / T::of(input.c as f64);
    let mut d = Tensor::zeros(input);
    for n in 0..input.n {
        let src = &g.data()[n * input.hw()..(n + 1) * input.hw()];
        for c in 0..input.c {
            let dst = &mut d.data_mut()[(n * input.c + c) * input.hw()..][..input.hw()];
            dst.iter_mut().zip(src).for_each(|(dv, gv)| *dv = *gv * inv);
        }
    }
    d
}

/// Max over channels at each pixel; ties resolve to the lowest channel.
pub(crate) fn channel_max<T: Scalar>(a: &Tensor<T>) -> (Tensor<T>, Vec<usize>) {
    let s = a.shape();
    let mut out = Tensor::zeros([s.n, 1, s.h, s.w]);
    let mut arg = vec![0usize; s.n * s.hw()];
    for n in 0..s.n {
        for p in 0..s.hw() {
            let mut best = (n * s.c) * s.hw() + p;
            for c in 1..s.c {
                let i = (n * s.c + c) * s.hw() + p;
                if a.data()[i] > a.data()[best] {
                    best = i;
                }
            }
            out.data_mut()[n * s.hw() + p] = a.data()[best];
            arg[n * s.hw() + p] = best;
        }
    }
    (out, arg)
}
