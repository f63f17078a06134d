//! PSNR and SSIM of a clean scene against common degradations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsnet::data::{generate_sample, DatasetManifest, Split};
use tsnet::metrics::{psnr, ssim};
use tsnet::Tensor;

fn main() -> tsnet::Result<()> {
    let s = generate_sample(&DatasetManifest::default(), Split::Test, 3)?;
    let clean = &s.clean;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let clamp = |t: Tensor<f64>| t.map(|v| v.clamp(0.0, 1.0));
    let noise: Vec<f64> = (0..clean.numel()).map(|_| rng.gen_range(-0.05..0.05)).collect();
    let noisy = Tensor::from_vec(
        clean.shape(),
        clean
            .data()
            .iter()
            .zip(&noise)
            .map(|(c, n)| (c + n).clamp(0.0, 1.0))
            .collect(),
    )?;
    let shifted = clamp(clean.map(|v| v + 16.0 / 255.0));
    let sh = clean.shape();
    let blurred = Tensor::from_fn(sh, |n, c, y, x| {
        let mut acc = 0.0;
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let yy = (y as i64 + dy).clamp(0, sh.h as i64 - 1) as usize;
                let xx = (x as i64 + dx).clamp(0, sh.w as i64 - 1) as usize;
                acc += clean.at(n, c, yy, xx);
            }
        }
        acc / 9.0
    });
    for (name, img) in [
        ("identical", clean.clone()),
        ("+16/255", shifted),
        ("uniform noise", noisy),
        ("3x3 box blur", blurred),
        ("hazy", s.hazy.clone()),
    ] {
        println!(
            "{name:14} PSNR {:7.2} dB  SSIM {:.4}",
            psnr(&img, clean, 1.0)?,
            ssim(&img, clean, 1.0)?
        );
    }
    Ok(())
}
