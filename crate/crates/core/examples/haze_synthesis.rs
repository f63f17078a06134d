//! The atmospheric scattering model on procedural scenes: one sample per
//! depth style, written as PNGs next to its transmission map.
//!
//!     cargo run --example haze_synthesis -- [out_dir]

use tsnet::data::{generate_sample, opposite_fog_map, recover_clean, save_image, DatasetManifest, DepthStyle, Split};
use tsnet::metrics::psnr;
use tsnet::Tensor;

fn main() -> tsnet::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("tsnet_haze_example"), Into::into);
    std::fs::create_dir_all(&out).map_err(|e| tsnet::Error::io(&out, e))?;

    for (i, style) in DepthStyle::ALL.into_iter().enumerate() {
        let m = DatasetManifest {
            depth_styles: vec![style],
            image_size: 96,
            ..Default::default()
        };
        let s = generate_sample(&m, Split::Train, i)?;
        let t = s.transmission.data();
        let (lo, hi) = t.iter().fold((1.0f64, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
        let j = recover_clean(&s.hazy, s.atmosphere, &s.transmission);
        let fog = opposite_fog_map(&s.clean, &s.hazy)?;
        println!(
            "{:16} beta {:.2}  A {:.2?}  t in [{lo:.2}, {hi:.2}]  PSNR(I, J) {:5.2} dB  recovery err {:.1e}  mean fog map {:+.3}",
            format!("{style:?}"),
            s.beta,
            s.atmosphere,
            psnr(&s.hazy, &s.clean, 1.0)?,
            j.max_abs_diff(&s.clean),
            fog.mean()
        );
        let name = format!("{style:?}").to_lowercase();
        let grey = Tensor::from_fn([1, 3, 96, 96], |_, _, y, x| s.transmission.at(0, 0, y, x));
        save_image(&s.clean, &out.join(format!("{name}_clean.png")))?;
        save_image(&s.hazy, &out.join(format!("{name}_hazy.png")))?;
        save_image(&grey, &out.join(format!("{name}_t.png")))?;
    }
    println!("images in {}", out.display());
    Ok(())
}
