//! Image quality metrics on `[0, 1]` images.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Value reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Broadcast {
            op,
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    Ok(())
}

/// `10 log10(peak^2 / MSE)` over all elements, capped for zero error.
pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    same_shape("psnr", a, b)?;
    let n = a.numel() as f64;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x.f64() - y.f64()).powi(2))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

/// Mean PSNR over the batch, one value per sample.
pub fn psnr_per_sample<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<Vec<f64>> {
    same_shape("psnr", a, b)?;
    (0..a.shape().n)
        .map(|i| psnr(&a.sample(i), &b.sample(i), peak))
        .collect()
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of one plane.
fn filter(plane: &[f64], h: usize, w: usize, g: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = g.len();
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * wo];
    for i in 0..h {
        for j in 0..wo {
            rows[i * wo + j] = (0..k).map(|t| g[t] * plane[i * w + j + t]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for i in 0..ho {
        for j in 0..wo {
            out[i * wo + j] = (0..k).map(|t| g[t] * rows[(i + t) * wo + j]).sum();
        }
    }
    (out, ho, wo)
}

/// Mean structural similarity with an 11x11 Gaussian window (sigma 1.5),
/// averaged over windows, channels and samples.
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    same_shape("ssim", a, b)?;
    let s = a.shape();
    if s.h < SSIM_WINDOW || s.w < SSIM_WINDOW {
        return Err(Error::invalid(
            "ssim",
            format!("image {s} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        ));
    }
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let g = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let hw = s.hw();
    let mut total = 0.0;
    let mut count = 0usize;
    for p in 0..s.n * s.c {
        let x: Vec<f64> = a.data()[p * hw..(p + 1) * hw].iter().map(|v| v.f64()).collect();
        let y: Vec<f64> = b.data()[p * hw..(p + 1) * hw].iter().map(|v| v.f64()).collect();
        let prod = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(p, q)| p * q).collect::<Vec<f64>>();
        let (mx, _, _) = filter(&x, s.h, s.w, &g);
        let (my, _, _) = filter(&y, s.h, s.w, &g);
        let (mxx, _, _) = filter(&prod(&x, &x), s.h, s.w, &g);
        let (myy, _, _) = filter(&prod(&y, &y), s.h, s.w, &g);
        let (mxy, _, _) = filter(&prod(&x, &y), s.h, s.w, &g);
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cxy = mxy[i] - ux * uy;
            total += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Map a network-domain image in `[-1, 1]` to `[0, 1]`.
pub fn to_unit<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| (v + T::one()) * T::of(0.5))
}

/// Map a `[0, 1]` image to the network domain `[-1, 1]`.
pub fn from_unit<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v * T::of(2.0) - T::one())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub sample_id: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Row averaging PSNR and SSIM over `rows`, labelled `mean`.
pub fn mean_row(rows: &[EvalRow]) -> EvalRow {
    let n = rows.len().max(1) as f64;
    EvalRow {
        sample_id: "mean".into(),
        psnr_db: rows.iter().map(|r| r.psnr_db).sum::<f64>() / n,
        ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
    }
}

pub fn write_report(path: &Path, rows: &[EvalRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::io(path, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path) -> Result<Vec<EvalRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::io(path, e.into())))
        .collect()
}
