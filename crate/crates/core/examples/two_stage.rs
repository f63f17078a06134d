//! Desk-scale run: train stage one on the synthetic set, then stage two on
//! top of the frozen first stage, reporting test PSNR after each.
//!
//!     cargo run --example two_stage -- [epochs1] [epochs2] [crop]

use std::time::Instant;

use tsnet::checkpoint::{save_stage, StageTag};
use tsnet::data::{build_dataset, load_split, DatasetManifest, Split};
use tsnet::model::{ModelConfig, TsNet};
use tsnet::optim::OptimState;
use tsnet::train::{evaluate, evaluate_stage1, hazy_baseline, stage2_eval_loss, train, Stage, TrainOptions};

fn mean_psnr(rows: &[tsnet::metrics::EvalRow]) -> f64 {
    rows.iter().map(|r| r.psnr_db).sum::<f64>() / rows.len() as f64
}

fn main() -> tsnet::Result<()> {
    let arg = |i: usize, d: usize| std::env::args().nth(i).map_or(d, |s| s.parse().expect("integer"));
    let (e1, e2, crop) = (arg(1, 8), arg(2, 4), arg(3, 32));
    let root = std::env::temp_dir().join("tsnet_two_stage_example");
    build_dataset(&DatasetManifest::default(), &root, true)?;
    let train_set = load_split::<f32>(&root, Split::Train)?;
    let test_set = load_split::<f32>(&root, Split::Test)?;
    println!("hazy baseline  {:6.2} dB", hazy_baseline(&test_set)?);

    let mut net = TsNet::<f32>::new(&ModelConfig::tiny(), 0)?;
    let t0 = Instant::now();
    let mut o1 = TrainOptions::new(Stage::One);
    o1.epochs = e1;
    o1.crop = crop;
    let mut s1 = OptimState::new(&net.weights1);
    let r1 = train(&mut net, &train_set, &o1, &mut s1)?;
    println!(
        "stage 1: {} steps, loss {:.4} -> {:.4}, test {:6.2} dB ({:.0}s)",
        r1.steps.len(),
        r1.first_loss().unwrap_or(f64::NAN),
        r1.last_loss().unwrap_or(f64::NAN),
        evaluate_stage1(&mut net, &test_set)?,
        t0.elapsed().as_secs_f64()
    );

    let ckpt1 = root.join("stage1.tsnc");
    let hash = save_stage(&ckpt1, net.config(), StageTag::One, &net.weights1, None)?;
    let before = stage2_eval_loss(&mut net, &train_set)?;
    let base = evaluate_stage1(&mut net, &test_set)?;
    let mut o2 = TrainOptions::new(Stage::Two);
    o2.epochs = e2;
    o2.crop = crop;
    let mut s2 = OptimState::new(&net.weights2);
    let r2 = train(&mut net, &train_set, &o2, &mut s2)?;
    let after = stage2_eval_loss(&mut net, &train_set)?;
    println!(
        "stage 2: {} steps, train loss {before:.5} -> {after:.5} ({:.0}% lower)",
        r2.steps.len(),
        100.0 * (1.0 - after / before)
    );
    println!(
        "test PSNR c {base:6.2} dB, d {:6.2} dB ({:.0}s)",
        mean_psnr(&evaluate(&mut net, &test_set)?),
        t0.elapsed().as_secs_f64()
    );
    let again = save_stage(&ckpt1, net.config(), StageTag::One, &net.weights1, None)?;
    println!("stage-1 checkpoint unchanged: {}", hash == again);
    Ok(())
}
