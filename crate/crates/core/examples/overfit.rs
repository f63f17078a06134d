//! Fit the tiny model to a single 64x64 pair and watch stage-one PSNR climb.
//!
//!     cargo run --example overfit -- [steps]

use std::time::Instant;

use tsnet::data::{generate_sample, DatasetManifest, Pair, Split};
use tsnet::model::{ModelConfig, TsNet};
use tsnet::optim::OptimState;
use tsnet::train::{evaluate_stage1, train, Stage, TrainOptions};

fn main() -> tsnet::Result<()> {
    let steps: usize = std::env::args().nth(1).map_or(500, |s| s.parse().expect("step count"));
    let m = DatasetManifest {
        image_size: 64,
        ..Default::default()
    };
    let s = generate_sample(&m, Split::Train, 0)?;
    let pair = Pair {
        id: "0000".into(),
        clean: s.clean.cast::<f32>(),
        hazy: s.hazy.cast::<f32>(),
    };
    let pairs = vec![pair];

    let mut net = TsNet::<f32>::new(&ModelConfig::tiny(), 0)?;
    println!("tiny model: {} parameters", net.param_count());
    let mut opts = TrainOptions::new(Stage::One);
    opts.epochs = steps;
    opts.batch = 1;
    let mut state = OptimState::new(&net.weights1);

    let t0 = Instant::now();
    println!("hazy input     {:6.2} dB", tsnet::train::hazy_baseline(&pairs)?);
    let report = train(&mut net, &pairs, &opts, &mut state)?;
    for r in report
        .steps
        .iter()
        .filter(|r| r.step % 50 == 0 || r.step as usize + 1 == steps)
    {
        println!(
            "step {:4}  lr {:.2e}  loss {:.5}  train psnr {:6.2} dB",
            r.step, r.lr, r.loss, r.psnr_train
        );
    }
    println!(
        "stage-1 output {:6.2} dB (eval mode) after {:.1}s",
        evaluate_stage1(&mut net, &pairs)?,
        t0.elapsed().as_secs_f64()
    );
    Ok(())
}
