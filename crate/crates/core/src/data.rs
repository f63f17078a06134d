//! Synthetic haze generation and the paired-image dataset on disk.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Haze composition `I = J t + A (1 - t)`.
///
/// `clean` is `(N, 3, H, W)`, `atmosphere` one value per channel and
/// `transmission` `(N, 1, H, W)` or `(N, 3, H, W)`. All values must lie in
/// `[0, 1]`.
pub fn synthesize_haze<T: Scalar>(
    clean: &Tensor<T>,
    atmosphere: [f64; 3],
    transmission: &Tensor<T>,
) -> Result<Tensor<T>> {
    let s = clean.shape();
    let ts = transmission.shape();
    if s.c != 3 || ts.n != s.n || ts.h != s.h || ts.w != s.w || (ts.c != 1 && ts.c != 3) {
        return Err(Error::shape(
            "synthesize_haze",
            format!("clean {s} with transmission {ts}"),
        ));
    }
    let in_unit = |v: f64| (0.0..=1.0).contains(&v);
    if !atmosphere.iter().all(|&a| in_unit(a)) {
        return Err(Error::invalid(
            "synthesize_haze",
            format!("atmospheric light {atmosphere:?} outside [0, 1]"),
        ));
    }
    for (name, t) in [("clean", clean), ("transmission", transmission)] {
        if let Some(v) = t.data().iter().find(|v| !in_unit(v.f64())) {
            return Err(Error::invalid(
                "synthesize_haze",
                format!("{name} value {} outside [0, 1]", v.f64()),
            ));
        }
    }
    Ok(Tensor::from_fn(s, |n, c, h, w| {
        let t = transmission.at(n, if ts.c == 1 { 0 } else { c }, h, w);
        let a = T::of(atmosphere[c]);
        (clean.at(n, c, h, w) * t + a * (T::one() - t))
            .max(T::zero())
            .min(T::one())
    }))
}

/// Inverse composition `J = (I - A (1 - t)) / t`.
pub fn recover_clean<T: Scalar>(hazy: &Tensor<T>, atmosphere: [f64; 3], transmission: &Tensor<T>) -> Tensor<T> {
    let tc = transmission.shape().c;
    Tensor::from_fn(hazy.shape(), |n, c, h, w| {
        let t = transmission.at(n, if tc == 1 { 0 } else { c }, h, w);
        (hazy.at(n, c, h, w) - T::of(atmosphere[c]) * (T::one() - t)) / t
    })
}

/// Stage-one learning target `J - I`, in whatever domain both images share.
pub fn opposite_fog_map<T: Scalar>(clean: &Tensor<T>, hazy: &Tensor<T>) -> Result<Tensor<T>> {
    if clean.shape() != hazy.shape() {
        return Err(Error::Broadcast {
            op: "opposite_fog_map",
            lhs: clean.shape(),
            rhs: hazy.shape(),
        });
    }
    Ok(Tensor::from_fn(clean.shape(), |n, c, h, w| {
        clean.at(n, c, h, w) - hazy.at(n, c, h, w)
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthStyle {
    /// Linear gradient in a random direction.
    Ramp,
    /// Distance from a random focus point.
    Radial,
    /// Smooth multi-octave value noise.
    Noise,
    /// Ramp depth with a spatially varying scattering coefficient.
    Nonhomogeneous,
}

impl DepthStyle {
    pub const ALL: [DepthStyle; 4] = [
        DepthStyle::Ramp,
        DepthStyle::Radial,
        DepthStyle::Noise,
        DepthStyle::Nonhomogeneous,
    ];
}

/// Depth values span `[DEPTH_MIN, DEPTH_MAX]`.
pub const DEPTH_MIN: f64 = 0.1;
pub const DEPTH_MAX: f64 = 1.0;

/// `t = exp(-beta * depth)`, with `beta` a scalar field of the same shape.
pub fn transmission_from_depth(depth: &Tensor<f64>, beta: &Tensor<f64>) -> Result<Tensor<f64>> {
    if depth.shape() != beta.shape() {
        return Err(Error::Broadcast {
            op: "transmission",
            lhs: depth.shape(),
            rhs: beta.shape(),
        });
    }
    Ok(Tensor::from_fn(depth.shape(), |n, c, h, w| {
        (-beta.at(n, c, h, w) * depth.at(n, c, h, w)).exp()
    }))
}

/// Bilinearly upsampled random lattice in `[0, 1]`, summed over octaves.
fn value_noise(rng: &mut ChaCha8Rng, h: usize, w: usize, base_cells: usize, octaves: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    let mut amp = 1.0;
    let mut total = 0.0;
    for o in 0..octaves {
        let cells = base_cells << o;
        let lattice: Vec<f64> = (0..(cells + 1) * (cells + 1)).map(|_| rng.gen()).collect();
        for i in 0..h {
            for j in 0..w {
                let y = i as f64 / h.max(2).saturating_sub(1) as f64 * cells as f64;
                let x = j as f64 / w.max(2).saturating_sub(1) as f64 * cells as f64;
                let (y0, x0) = ((y.floor() as usize).min(cells - 1), (x.floor() as usize).min(cells - 1));
                let (fy, fx) = (y - y0 as f64, x - x0 as f64);
                // smoothstep keeps the field C1
                let (sy, sx) = (fy * fy * (3.0 - 2.0 * fy), fx * fx * (3.0 - 2.0 * fx));
                let at = |a: usize, b: usize| lattice[a * (cells + 1) + b];
                let top = at(y0, x0) * (1.0 - sx) + at(y0, x0 + 1) * sx;
                let bot = at(y0 + 1, x0) * (1.0 - sx) + at(y0 + 1, x0 + 1) * sx;
                out[i * w + j] += amp * (top * (1.0 - sy) + bot * sy);
            }
        }
        total += amp;
        amp *= 0.5;
    }
    out.iter_mut().for_each(|v| *v /= total);
    out
}

fn rescale(v: &mut [f64], lo: f64, hi: f64) {
    let (mn, mx) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let span = (mx - mn).max(1e-12);
    v.iter_mut().for_each(|x| *x = lo + (hi - lo) * (*x - mn) / span);
}

fn ramp(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<f64> {
    let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (dy, dx) = theta.sin_cos();
    let mut d: Vec<f64> = (0..h * w).map(|k| (k / w) as f64 * dy + (k % w) as f64 * dx).collect();
    rescale(&mut d, DEPTH_MIN, DEPTH_MAX);
    d
}

/// Procedural depth and per-pixel scattering coefficient, each `(1, 1, H, W)`.
pub fn gen_depth(h: usize, w: usize, beta: f64, style: DepthStyle, seed: u64) -> (Tensor<f64>, Tensor<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut beta_field = vec![beta; h * w];
    let depth = match style {
        DepthStyle::Ramp => ramp(&mut rng, h, w),
        DepthStyle::Radial => {
            let (cy, cx) = (rng.gen_range(0.0..h as f64), rng.gen_range(0.0..w as f64));
            let mut d: Vec<f64> = (0..h * w)
                .map(|k| ((k / w) as f64 - cy).hypot((k % w) as f64 - cx))
                .collect();
            rescale(&mut d, DEPTH_MIN, DEPTH_MAX);
            d
        }
        DepthStyle::Noise => {
            let mut d = value_noise(&mut rng, h, w, 2, 3);
            rescale(&mut d, DEPTH_MIN, DEPTH_MAX);
            d
        }
        DepthStyle::Nonhomogeneous => {
            let d = ramp(&mut rng, h, w);
            let mut m = value_noise(&mut rng, h, w, 3, 2);
            rescale(&mut m, 0.4, 1.6);
            beta_field.iter_mut().zip(&m).for_each(|(b, m)| *b *= m);
            d
        }
    };
    let shape = Shape::new(1, 1, h, w);
    (
        Tensor::from_vec(shape, depth).expect("sized"),
        Tensor::from_vec(shape, beta_field).expect("sized"),
    )
}

/// Transmission field in `(0, 1]`, same seed gives the same field.
pub fn gen_transmission(h: usize, w: usize, beta: f64, style: DepthStyle, seed: u64) -> Result<Tensor<f64>> {
    if beta <= 0.0 || !beta.is_finite() {
        return Err(Error::invalid(
            "gen_transmission",
            format!("scattering coefficient {beta} must be positive"),
        ));
    }
    let (depth, beta) = gen_depth(h, w, beta, style, seed);
    transmission_from_depth(&depth, &beta)
}

/// Procedural clean image `(1, 3, H, W)` in `[0, 1]`: a gradient or noise
/// backdrop, optional checkerboard, and a few flat-colored shapes.
pub fn gen_clean(h: usize, w: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = vec![[0.0f64; 3]; h * w];
    if rng.gen_bool(0.5) {
        let (c0, c1): ([f64; 3], [f64; 3]) = (rng.gen(), rng.gen());
        let g = ramp(&mut rng, h, w);
        for (p, &t) in img.iter_mut().zip(&g) {
            let t = (t - DEPTH_MIN) / (DEPTH_MAX - DEPTH_MIN);
            *p = std::array::from_fn(|c| c0[c] * (1.0 - t) + c1[c] * t);
        }
    } else {
        for c in 0..3 {
            let cells = rng.gen_range(2..6);
            let n = value_noise(&mut rng, h, w, cells, 3);
            for (p, v) in img.iter_mut().zip(n) {
                p[c] = v;
            }
        }
    }
    if rng.gen_bool(0.3) {
        let cell = rng.gen_range(4..12);
        let tint: [f64; 3] = rng.gen();
        let alpha = rng.gen_range(0.2..0.6);
        for (k, p) in img.iter_mut().enumerate() {
            if ((k / w) / cell + (k % w) / cell) % 2 == 0 {
                *p = std::array::from_fn(|c| p[c] * (1.0 - alpha) + tint[c] * alpha);
            }
        }
    }
    for _ in 0..rng.gen_range(2..6) {
        let color: [f64; 3] = rng.gen();
        let (cy, cx) = (rng.gen_range(0.0..h as f64), rng.gen_range(0.0..w as f64));
        let r = rng.gen_range(3.0..(h.min(w) as f64 / 3.0).max(4.0));
        let circle = rng.gen_bool(0.5);
        for (k, p) in img.iter_mut().enumerate() {
            let (dy, dx) = ((k / w) as f64 - cy, (k % w) as f64 - cx);
            let inside = if circle {
                dy.hypot(dx) < r
            } else {
                dy.abs() < r && dx.abs() < 0.6 * r
            };
            if inside {
                *p = color;
            }
        }
    }
    Tensor::from_fn([1, 3, h, w], |_, c, i, j| img[i * w + j][c].clamp(0.0, 1.0))
}

/// One generated training example with its haze parameters.
#[derive(Clone, Debug)]
pub struct HazeSample {
    pub clean: Tensor<f64>,
    pub hazy: Tensor<f64>,
    pub atmosphere: [f64; 3],
    pub transmission: Tensor<f64>,
    pub beta: f64,
    pub depth: Tensor<f64>,
    pub style: DepthStyle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub image_size: usize,
    pub crop_size: usize,
    pub a_range: [f64; 2],
    pub beta_range: [f64; 2],
    pub depth_styles: Vec<DepthStyle>,
}

impl Default for DatasetManifest {
    fn default() -> Self {
        DatasetManifest {
            seed: 7,
            n_train: 200,
            n_test: 20,
            image_size: 64,
            crop_size: 64,
            a_range: [0.7, 1.0],
            beta_range: [0.5, 2.5],
            depth_styles: DepthStyle::ALL.to_vec(),
        }
    }
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.image_size < 2 || self.crop_size == 0 || self.crop_size > self.image_size {
            return bad(format!("crop {} must fit image {}", self.crop_size, self.image_size));
        }
        let [a0, a1] = self.a_range;
        if !(0.0..=1.0).contains(&a0) || !(0.0..=1.0).contains(&a1) || a0 > a1 {
            return bad(format!(
                "a_range {:?} must be an ordered sub-range of [0, 1]",
                self.a_range
            ));
        }
        let [b0, b1] = self.beta_range;
        if b0 <= 0.0 || b0 > b1 {
            return bad(format!("beta_range {:?} must be positive and ordered", self.beta_range));
        }
        if self.depth_styles.is_empty() {
            return bad("no depth styles".into());
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: DatasetManifest = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    /// Seed of one sample, independent of generation order.
    pub fn sample_seed(&self, split: Split, id: usize) -> u64 {
        let tag = match split {
            Split::Train => 0x7261_696e,
            Split::Test => 0x7465_7374,
        };
        let mut z = self.seed ^ (tag << 32) ^ (id as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        // splitmix64 finalizer
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
}

fn uniform_in(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Sample `id` of `split`, a pure function of the manifest.
pub fn generate_sample(m: &DatasetManifest, split: Split, id: usize) -> Result<HazeSample> {
    let seed = m.sample_seed(split, id);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = m.image_size;
    let clean = gen_clean(n, n, rng.gen());
    let style = m.depth_styles[rng.gen_range(0..m.depth_styles.len())];
    let beta = uniform_in(&mut rng, m.beta_range);
    // a near-grey atmospheric light with a slight per-channel tint
    let a = uniform_in(&mut rng, m.a_range);
    let atmosphere: [f64; 3] =
        std::array::from_fn(|_| uniform_in(&mut rng, [a - 0.03, a + 0.03]).clamp(m.a_range[0], m.a_range[1]));
    let (depth, beta_field) = gen_depth(n, n, beta, style, rng.gen());
    let transmission = transmission_from_depth(&depth, &beta_field)?;
    let hazy = synthesize_haze(&clean, atmosphere, &transmission)?;
    Ok(HazeSample {
        clean,
        hazy,
        atmosphere,
        transmission,
        beta,
        depth,
        style,
    })
}

// ------------------------------------------------------------------- I/O

/// 8-bit RGB PNG as a `(1, 3, H, W)` tensor in `[0, 1]`.
pub fn load_image<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Tensor::from_fn([1, 3, h, w], |_, c, i, j| {
        T::of(img.get_pixel(j as u32, i as u32)[c] as f64 / 255.0)
    }))
}

/// Quantize the first image of a `[0, 1]` batch to 8 bits and write a PNG.
pub fn save_image<T: Scalar>(img: &Tensor<T>, path: &Path) -> Result<()> {
    let s = img.shape();
    if s.c != 3 {
        return Err(Error::shape("save_image", format!("expected 3 channels, got {s}")));
    }
    let buf = image::RgbImage::from_fn(s.w as u32, s.h as u32, |x, y| {
        image::Rgb(std::array::from_fn(|c| {
            quantize(img.at(0, c, y as usize, x as usize).f64())
        }))
    });
    buf.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Clean/hazy pair loaded from disk, both `(1, 3, H, W)` in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct Pair<T> {
    pub id: String,
    pub clean: Tensor<T>,
    pub hazy: Tensor<T>,
}

/// The same random `size x size` window of both images.
pub fn random_crop_pair<T: Scalar>(pair: &Pair<T>, size: usize, rng: &mut impl Rng) -> Result<Pair<T>> {
    let s = pair.clean.shape();
    if pair.hazy.shape() != s {
        return Err(Error::Broadcast {
            op: "random_crop_pair",
            lhs: s,
            rhs: pair.hazy.shape(),
        });
    }
    if size == 0 || size > s.h || size > s.w {
        return Err(Error::invalid(
            "random_crop_pair",
            format!("crop {size} does not fit {s}"),
        ));
    }
    let (y, x) = (rng.gen_range(0..=s.h - size), rng.gen_range(0..=s.w - size));
    Ok(Pair {
        id: pair.id.clone(),
        clean: crop(&pair.clean, y, x, size),
        hazy: crop(&pair.hazy, y, x, size),
    })
}

pub fn crop<T: Scalar>(t: &Tensor<T>, y: usize, x: usize, size: usize) -> Tensor<T> {
    let s = t.shape();
    Tensor::from_fn([s.n, s.c, size, size], |n, c, i, j| t.at(n, c, y + i, x + j))
}

fn sample_path(root: &Path, split: Split, kind: &str, id: usize) -> PathBuf {
    root.join(split.dir()).join(kind).join(format!("{id:04}.png"))
}

/// Generate every sample of the manifest under `root`. A non-empty `root`
/// is refused unless `force` is set.
pub fn build_dataset(m: &DatasetManifest, root: &Path, force: bool) -> Result<()> {
    m.validate()?;
    if root.exists() {
        let mut entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
        if entries.next().is_some() && !force {
            return Err(Error::invalid(
                "build_dataset",
                format!("{} is not empty (use force to overwrite)", root.display()),
            ));
        }
    }
    for split in [Split::Train, Split::Test] {
        for kind in ["clean", "hazy"] {
            let dir = root.join(split.dir()).join(kind);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        let n = match split {
            Split::Train => m.n_train,
            Split::Test => m.n_test,
        };
        for id in 0..n {
            let s = generate_sample(m, split, id)?;
            save_image(&s.clean, &sample_path(root, split, "clean", id))?;
            save_image(&s.hazy, &sample_path(root, split, "hazy", id))?;
        }
    }
    let mpath = root.join("manifest.json");
    fs::write(&mpath, m.to_json()).map_err(|e| Error::io(&mpath, e))
}

/// All pairs of one split, ordered by id.
pub fn load_split<T: Scalar>(root: &Path, split: Split) -> Result<Vec<Pair<T>>> {
    let dir = root.join(split.dir()).join("clean");
    let mut names: Vec<String> = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".png"))
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|name| {
            let clean = load_image(&root.join(split.dir()).join("clean").join(&name))?;
            let hazy = load_image(&root.join(split.dir()).join("hazy").join(&name))?;
            if clean.shape() != hazy.shape() {
                return Err(Error::shape(
                    "load_split",
                    format!("{name}: clean {} vs hazy {}", clean.shape(), hazy.shape()),
                ));
            }
            Ok(Pair {
                id: name.trim_end_matches(".png").to_string(),
                clean,
                hazy,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn composition_examples() {
        let j = Tensor::<f64>::full([1, 3, 2, 2], 0.2);
        let t = Tensor::<f64>::full([1, 1, 2, 2], 0.5);
        let i = synthesize_haze(&j, [0.8; 3], &t).unwrap();
        assert!(i.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
        let b = opposite_fog_map(&j, &i).unwrap();
        assert!(b.data().iter().all(|&v| (v + 0.3).abs() < 1e-15));
        assert!(synthesize_haze(&j, [1.2, 0.5, 0.5], &t).is_err());
        assert!(synthesize_haze(&j, [0.8; 3], &t.map(|v| v + 1.0)).is_err());
    }

    #[test]
    fn transmission_oracles() {
        let beta = Tensor::<f64>::full([1, 1, 3, 3], 1.7);
        let t = transmission_from_depth(&Tensor::zeros([1, 1, 3, 3]), &beta).unwrap();
        assert!(t.data().iter().all(|&v| v == 1.0));
        let d = Tensor::full([1, 1, 3, 3], 2f64.ln() / 1.7);
        let t = transmission_from_depth(&d, &beta).unwrap();
        assert!(t.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
        for style in DepthStyle::ALL {
            let a = gen_transmission(16, 16, 1.0, style, 3).unwrap();
            let b = gen_transmission(16, 16, 1.0, style, 3).unwrap();
            assert_eq!(a.data(), b.data());
            assert!(a.data().iter().all(|&v| v > 0.0 && v <= 1.0));
        }
        assert!(gen_transmission(4, 4, 0.0, DepthStyle::Ramp, 0).is_err());
    }

    #[test]
    fn crop_keeps_windows_paired() {
        let mut clean = Tensor::<f32>::zeros([1, 3, 10, 10]);
        let mut hazy = Tensor::<f32>::zeros([1, 3, 10, 10]);
        clean.set(0, 1, 6, 7, 1.0);
        hazy.set(0, 1, 6, 7, 1.0);
        let pair = Pair {
            id: "w".into(),
            clean,
            hazy,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let c = random_crop_pair(&pair, 5, &mut rng).unwrap();
            assert_eq!(c.clean.data(), c.hazy.data());
        }
        let full = random_crop_pair(&pair, 10, &mut rng).unwrap();
        assert_eq!(full.clean.data(), pair.clean.data());
        assert!(random_crop_pair(&pair, 11, &mut rng).is_err());
    }

    #[test]
    fn png_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let img = gen_clean(12, 9, 4).map(|v| quantize(v) as f64 / 255.0);
        save_image(&img, &path).unwrap();
        let back: Tensor<f64> = load_image(&path).unwrap();
        assert_eq!(back.shape(), Shape::new(1, 3, 12, 9));
        assert_eq!(back.data(), img.data());
        assert!(load_image::<f32>(&dir.path().join("missing.png")).is_err());
    }

    #[test]
    fn manifest_json_fields() {
        let m = DatasetManifest::default();
        let v: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        for key in [
            "seed",
            "n_train",
            "n_test",
            "image_size",
            "crop_size",
            "a_range",
            "beta_range",
            "depth_styles",
        ] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["depth_styles"][3], "nonhomogeneous");
    }
}
