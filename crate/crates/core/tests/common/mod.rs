#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsnet::{Shape, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: impl Into<Shape>, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(lo..hi))
}

pub fn close(a: &Tensor<f64>, b: &Tensor<f64>, atol: f64) -> bool {
    a.shape() == b.shape() && a.max_abs_diff(b) <= atol
}

/// PSNR written out per element, without the library helpers.
pub fn reference_psnr(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let mut se = 0.0;
    for (x, y) in a.data().iter().zip(b.data()) {
        se += (x - y) * (x - y);
    }
    let mse = se / a.numel() as f64;
    -10.0 * mse.log10()
}

/// SSIM over every 11x11 window with a 2-D Gaussian and centered moments.
pub fn reference_ssim(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let s = a.shape();
    let mut w = [[0.0f64; 11]; 11];
    let mut z = 0.0;
    for (i, row) in w.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(dy * dy + dx * dx) / 4.5).exp();
            z += *v;
        }
    }
    let (c1, c2) = (1e-4, 9e-4);
    let (mut total, mut count) = (0.0, 0usize);
    for n in 0..s.n {
        for c in 0..s.c {
            for y0 in 0..=s.h - 11 {
                for x0 in 0..=s.w - 11 {
                    let (mut mx, mut my) = (0.0, 0.0);
                    for i in 0..11 {
                        for j in 0..11 {
                            mx += w[i][j] / z * a.at(n, c, y0 + i, x0 + j);
                            my += w[i][j] / z * b.at(n, c, y0 + i, x0 + j);
                        }
                    }
                    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
                    for i in 0..11 {
                        for j in 0..11 {
                            let (p, q) = (a.at(n, c, y0 + i, x0 + j) - mx, b.at(n, c, y0 + i, x0 + j) - my);
                            vx += w[i][j] / z * p * p;
                            vy += w[i][j] / z * q * q;
                            cxy += w[i][j] / z * p * q;
                        }
                    }
                    total += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                    count += 1;
                }
            }
        }
    }
    total / count as f64
}
