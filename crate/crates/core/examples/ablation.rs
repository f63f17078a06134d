//! Desk-scale ablation: every lattice configuration of the tiny model trained
//! for the same number of epochs per stage, scored on the test split.
//!
//!     cargo run --example ablation -- [epochs]

use std::time::Instant;

use tsnet::data::{build_dataset, load_split, DatasetManifest, Split};
use tsnet::model::{Ablation, ModelConfig, TsNet};
use tsnet::optim::OptimState;
use tsnet::train::{evaluate, hazy_baseline, train, trained_store, Stage, TrainOptions};

fn main() -> tsnet::Result<()> {
    let epochs: usize = std::env::args().nth(1).map_or(3, |s| s.parse().expect("epoch count"));
    let root = std::env::temp_dir().join("tsnet_ablation_example");
    build_dataset(&DatasetManifest::default(), &root, true)?;
    let train_set = load_split::<f32>(&root, Split::Train)?;
    let test_set = load_split::<f32>(&root, Split::Test)?;
    println!("{:10} {:>8} {:>9}", "config", "params", "test PSNR");
    println!("{:10} {:>8} {:>9.2}", "hazy", "-", hazy_baseline(&test_set)?);

    let lattice = [
        ("Base", Ablation::BASE),
        (
            "+CL",
            Ablation {
                use_cl: true,
                ..Ablation::BASE
            },
        ),
        (
            "+ALM",
            Ablation {
                use_alm: true,
                ..Ablation::BASE
            },
        ),
        (
            "+ISSN",
            Ablation {
                use_stage2: true,
                ..Ablation::BASE
            },
        ),
        ("full", Ablation::FULL),
        (
            "TS-all",
            Ablation {
                ts_all: true,
                ..Ablation::FULL
            },
        ),
    ];
    for (name, ab) in lattice {
        let t0 = Instant::now();
        let mut net = TsNet::<f32>::new(&ModelConfig::tiny().with_ablation(ab), 0)?;
        let stages: &[Stage] = match (ab.ts_all, ab.use_stage2) {
            (true, _) => &[Stage::All],
            (false, true) => &[Stage::One, Stage::Two],
            (false, false) => &[Stage::One],
        };
        for &stage in stages {
            let mut opts = TrainOptions::new(stage);
            opts.epochs = epochs;
            opts.crop = 32;
            let mut state = OptimState::new(trained_store(&mut net, stage));
            train(&mut net, &train_set, &opts, &mut state)?;
        }
        let rows = evaluate(&mut net, &test_set)?;
        let mean = rows.iter().map(|r| r.psnr_db).sum::<f64>() / rows.len() as f64;
        println!(
            "{name:10} {:>8} {mean:>9.2}  ({:.0}s)",
            net.param_count(),
            t0.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
