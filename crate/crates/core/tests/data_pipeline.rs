use std::fs;
use std::path::Path;

use tsnet::data::{
    build_dataset, generate_sample, load_image, load_split, recover_clean, DatasetManifest, DepthStyle, Split,
};
use tsnet::metrics::psnr;

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn build_twice_is_byte_identical() {
    let m = DatasetManifest::default();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    build_dataset(&m, a.path(), false).unwrap();
    build_dataset(&m, b.path(), false).unwrap();
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert_eq!(ta.len(), 2 * (200 + 20) + 1);
    assert!(ta == tb);
    let back = DatasetManifest::load(&a.path().join("manifest.json")).unwrap();
    assert_eq!(back, m);
}

#[test]
fn non_empty_target_needs_force() {
    let m = DatasetManifest {
        n_train: 2,
        n_test: 1,
        image_size: 16,
        crop_size: 16,
        ..DatasetManifest::default()
    };
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("stray.txt"), "x").unwrap();
    assert!(build_dataset(&m, dir.path(), false).is_err());
    build_dataset(&m, dir.path(), true).unwrap();
    assert_eq!(load_split::<f32>(dir.path(), Split::Train).unwrap().len(), 2);
}

#[test]
fn stored_pairs_satisfy_haze_model() {
    let m = DatasetManifest {
        n_train: 24,
        n_test: 20,
        ..DatasetManifest::default()
    };
    let dir = tempfile::tempdir().unwrap();
    build_dataset(&m, dir.path(), false).unwrap();
    let mut styles = std::collections::HashSet::new();
    for split in [Split::Train, Split::Test] {
        let n = if split == Split::Train { m.n_train } else { m.n_test };
        for id in 0..n {
            let s = generate_sample(&m, split, id).unwrap();
            styles.insert(format!("{:?}", s.style));
            assert!(s.atmosphere.iter().all(|a| (0.7..=1.0).contains(a)));
            assert!((0.5..=2.5).contains(&s.beta));
            assert!(s.transmission.data().iter().all(|&t| t > 0.0 && t <= 1.0));
            let base = dir.path().join(split.dir());
            let clean = load_image::<f64>(&base.join("clean").join(format!("{id:04}.png"))).unwrap();
            let hazy = load_image::<f64>(&base.join("hazy").join(format!("{id:04}.png"))).unwrap();
            assert!(s.hazy.max_abs_diff(&hazy) <= 0.5 / 255.0 + 1e-12);
            let j = recover_clean(&s.hazy, s.atmosphere, &s.transmission);
            // t broadcasts over the colour channels
            let hw = clean.shape().hw();
            for (k, (&r, &c)) in j.data().iter().zip(clean.data()).enumerate() {
                if s.transmission.data()[k % hw] > 0.05 {
                    assert!((r - c).abs() <= 2.0 / 255.0, "{split:?} {id}: {r} vs {c}");
                }
            }
        }
    }
    assert_eq!(styles.len(), DepthStyle::ALL.len());
}

#[test]
fn test_split_difficulty_in_range() {
    let m = DatasetManifest::default();
    let dir = tempfile::tempdir().unwrap();
    build_dataset(&m, dir.path(), false).unwrap();
    let pairs = load_split::<f64>(dir.path(), Split::Test).unwrap();
    assert_eq!(pairs.len(), 20);
    let mean = pairs.iter().map(|p| psnr(&p.hazy, &p.clean, 1.0).unwrap()).sum::<f64>() / 20.0;
    assert!((10.0..=25.0).contains(&mean), "{mean}");
    for p in &pairs {
        assert!(p
            .clean
            .data()
            .iter()
            .chain(p.hazy.data())
            .all(|v| (0.0..=1.0).contains(v)));
    }
}
