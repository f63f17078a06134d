//! Materialize the synthetic train/test set and report how hard it is.
//!
//!     cargo run --example build_dataset -- [out_dir]

use tsnet::data::{build_dataset, load_split, DatasetManifest, Split};
use tsnet::train::hazy_baseline;

fn main() -> tsnet::Result<()> {
    let root = std::env::args().nth(1).map_or_else(
        || std::env::temp_dir().join("tsnet_dataset_example"),
        std::path::PathBuf::from,
    );
    let m = DatasetManifest::default();
    build_dataset(&m, &root, true)?;
    println!(
        "wrote {} train and {} test pairs to {}",
        m.n_train,
        m.n_test,
        root.display()
    );
    for split in [Split::Train, Split::Test] {
        let pairs = load_split::<f32>(&root, split)?;
        println!(
            "{:5}: {} pairs, hazy PSNR {:.2} dB",
            split.dir(),
            pairs.len(),
            hazy_baseline(&pairs)?
        );
    }
    Ok(())
}
