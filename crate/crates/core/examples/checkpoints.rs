//! File-based workflow: train both stages through checkpoints, interrupt
//! and resume stage one, then reload the pair to dehaze and score images.
//!
//!     cargo run --example checkpoints -- [epochs]

use tsnet::checkpoint::{file_sha256, load_model};
use tsnet::data::{build_dataset, load_image, load_split, save_image, DatasetManifest, Split};
use tsnet::metrics::{mean_row, psnr, ssim, write_report, EvalRow};
use tsnet::model::ModelConfig;
use tsnet::train::{Stage, TrainRun};

fn main() -> tsnet::Result<()> {
    let epochs: usize = std::env::args().nth(1).map_or(2, |s| s.parse().expect("epoch count"));
    let root = std::env::temp_dir().join("tsnet_checkpoints_example");
    let data = root.join("data");
    let m = DatasetManifest {
        n_train: 32,
        n_test: 4,
        ..Default::default()
    };
    build_dataset(&m, &data, true)?;
    let (c1, c2) = (root.join("stage1.tsnc"), root.join("stage2.tsnc"));
    for p in [&c1, &c2] {
        let _ = std::fs::remove_file(p);
    }

    let mut run = TrainRun::new(Stage::One, ModelConfig::tiny(), &data, &c1);
    run.options.epochs = epochs;
    run.options.crop = 32;
    run.options.log = Some(root.join("stage1.csv"));
    let _ = std::fs::remove_file(root.join("stage1.csv"));
    let total = run.options.steps_per_epoch(m.n_train) * epochs as u64;
    run.options.stop_after = Some(total / 2);
    let half = run.execute()?;
    println!("stage 1 stopped at step {} of {total}", half.step);
    run.options.stop_after = None;
    run.resume = true;
    let done = run.execute()?;
    println!("resumed to step {} ({})", done.step, &done.checkpoint_sha256[..16]);

    let before = file_sha256(&c1)?;
    let mut run2 = TrainRun::new(Stage::Two, ModelConfig::tiny(), &data, &c2);
    run2.ckpt1 = Some(c1.clone());
    run2.options.epochs = epochs;
    run2.options.crop = 32;
    let s2 = run2.execute()?;
    println!(
        "stage 2: {} steps, stage-1 file unchanged: {}",
        s2.step,
        file_sha256(&c1)? == before
    );

    let mut net = load_model::<f32>(&c1, Some(&c2))?;
    let mut rows = Vec::new();
    for p in load_split::<f32>(&data, Split::Test)? {
        let out = net.dehaze(&p.hazy)?;
        save_image(&out, &root.join(format!("dehazed_{}.png", p.id)))?;
        rows.push(EvalRow {
            sample_id: p.id.clone(),
            psnr_db: psnr(&out, &p.clean, 1.0)?,
            ssim: ssim(&out, &p.clean, 1.0)?,
        });
    }
    rows.push(mean_row(&rows));
    for r in &rows {
        println!("{:5} PSNR {:6.2} dB  SSIM {:.4}", r.sample_id, r.psnr_db, r.ssim);
    }
    write_report(&root.join("report.csv"), &rows)?;
    let odd = load_image::<f32>(&data.join("test/hazy/0000.png"))?;
    let small = tsnet::data::crop(&odd, 3, 5, 45);
    println!("a 45x45 crop dehazes to {}", net.dehaze(&small)?.shape());
    println!("outputs in {}", root.display());
    Ok(())
}
