//! Per-channel batch normalization kernels.

use crate::tensor::{Scalar, Tensor};

/// Batch moments saved by the training-mode forward pass.
#[derive(Clone, Debug)]
pub struct BatchMoments<T> {
    pub mean: Vec<T>,
    /// Biased variance, used for normalization.
    pub var: Vec<T>,
    /// Number of elements reduced per channel.
    pub count: usize,
}

impl<T: Scalar> BatchMoments<T> {
    /// Unbiased variance, the quantity folded into running statistics.
    pub fn unbiased_var(&self) -> Vec<T> {
        let m = T::of(self.count as f64);
        let corr = if self.count > 1 { m / (m - T::one()) } else { T::one() };
        self.var.iter().map(|&v| v * corr).collect()
    }
}

pub(crate) fn moments<T: Scalar>(x: &Tensor<T>) -> BatchMoments<T> {
    let s = x.shape();
    let count = s.n * s.hw();
    let mut mean = vec![T::zero(); s.c];
    let mut var = vec![T::zero(); s.c];
    for (i, chunk) in x.data().chunks(s.hw()).enumerate() {
        mean[i % s.c] += chunk.iter().copied().sum::<T>();
    }
    let inv = T::one() / T::of(count as f64);
    mean.iter_mut().for_each(|m| *m *= inv);
    for (i, chunk) in x.data().chunks(s.hw()).enumerate() {
        let m = mean[i % s.c];
        var[i % s.c] += chunk.iter().map(|&v| (v - m) * (v - m)).sum::<T>();
    }
    var.iter_mut().for_each(|v| *v *= inv);
    BatchMoments { mean, var, count }
}

/// `y = (x - mean) * inv_std * gamma + beta`, per channel.
pub(crate) fn normalize<T: Scalar>(x: &Tensor<T>, mean: &[T], inv_std: &[T], gamma: &[T], beta: &[T]) -> Tensor<T> {
    let s = x.shape();
    let mut out = x.clone();
    for (i, chunk) in out.data_mut().chunks_mut(s.hw()).enumerate() {
        let c = i % s.c;
        let scale = inv_std[c] * gamma[c];
        let shift = beta[c] - mean[c] * scale;
        chunk.iter_mut().for_each(|v| *v = *v * scale + shift);
    }
    out
}

pub(crate) struct NormGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

/// Adjoint for either mode. In training mode the batch moments depend on
/// the input, which adds the two centering terms.
pub(crate) fn backward<T: Scalar>(
    x: &Tensor<T>,
    mean: &[T],
    inv_std: &[T],
    gamma: &[T],
    gout: &Tensor<T>,
    batch_stats: bool,
) -> NormGrads<T> {
    let s = x.shape();
    let mut sum_g = vec![T::zero(); s.c];
    let mut sum_gx = vec![T::zero(); s.c];
    for (i, (xc, gc)) in x.data().chunks(s.hw()).zip(gout.data().chunks(s.hw())).enumerate() {
        let c = i % s.c;
        for (&xv, &gv) in xc.iter().zip(gc) {
            sum_g[c] += gv;
            sum_gx[c] += gv * (xv - mean[c]) * inv_std[c];
        }
    }
    let mut dx = Tensor::zeros(s);
    let m = T::of((s.n * s.hw()) as f64);
    for (i, ((dc, xc), gc)) in dx
        .data_mut()
        .chunks_mut(s.hw())
        .zip(x.data().chunks(s.hw()))
        .zip(gout.data().chunks(s.hw()))
        .enumerate()
    {
        let c = i % s.c;
        let k = gamma[c] * inv_std[c];
        for ((d, &xv), &gv) in dc.iter_mut().zip(xc).zip(gc) {
            if batch_stats {
                let xhat = (xv - mean[c]) * inv_std[c];
                *d = k * (gv - sum_g[c] / m - xhat * sum_gx[c] / m);
            } else {
                *d = k * gv;
            }
        }
    }
    NormGrads {
        input: dx,
        gamma: sum_gx,
        beta: sum_g,
    }
}
