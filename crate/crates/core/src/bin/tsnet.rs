use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tsnet::checkpoint::load_model;
use tsnet::data::{build_dataset, load_image, load_split, save_image, DatasetManifest, Split};
use tsnet::metrics::{mean_row, psnr, ssim, write_report, EvalRow};
use tsnet::model::ModelConfig;
use tsnet::train::{Stage, TrainRun};
use tsnet::Result;

#[derive(Parser)]
#[command(name = "tsnet", version, about = "Two-stage image dehazing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic hazy dataset from a manifest.
    Synth {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overwrite a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Train stage 1, stage 2 or the fused network.
    Train {
        #[arg(long, value_parser = parse_stage)]
        stage: Stage,
        /// Model config JSON, or one of tsnet-s, tsnet-l, tiny, micro.
        #[arg(long)]
        config: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        crop: usize,
        /// Stage-1 checkpoint, required with --stage 2.
        #[arg(long)]
        ckpt1: Option<PathBuf>,
        /// Training log CSV; defaults to <out>.log.csv.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Continue from the state stored in --out.
        #[arg(long)]
        resume: bool,
    },
    /// Dehaze one image.
    Infer {
        #[arg(long)]
        ckpt1: PathBuf,
        #[arg(long)]
        ckpt2: Option<PathBuf>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score the test split; without --ckpt1 the hazy images are scored as is.
    Eval {
        #[arg(long)]
        ckpt1: Option<PathBuf>,
        #[arg(long, requires = "ckpt1")]
        ckpt2: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[arg(long)]
        op: Option<String>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn parse_stage(s: &str) -> std::result::Result<Stage, String> {
    s.parse().map_err(|e: tsnet::Error| e.to_string())
}

fn model_config(arg: &str) -> Result<ModelConfig> {
    match arg {
        "tsnet-s" => Ok(ModelConfig::tsnet_s()),
        "tsnet-l" => Ok(ModelConfig::tsnet_l()),
        "tiny" => Ok(ModelConfig::tiny()),
        "micro" => Ok(ModelConfig::micro()),
        path => {
            let p = Path::new(path);
            let text = std::fs::read_to_string(p).map_err(|e| tsnet::Error::io(p, e))?;
            ModelConfig::from_json(&text)
        }
    }
}

fn run(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Synth { manifest, out, force } => {
            let m = DatasetManifest::load(&manifest)?;
            build_dataset(&m, &out, force)?;
            println!(
                "wrote {} train and {} test pairs to {}",
                m.n_train,
                m.n_test,
                out.display()
            );
        }
        Command::Train {
            stage,
            config,
            data,
            out,
            epochs,
            batch,
            seed,
            crop,
            ckpt1,
            log,
            resume,
        } => {
            let mut run = TrainRun::new(stage, model_config(&config)?, data, &out);
            run.ckpt1 = ckpt1;
            run.resume = resume;
            run.init_seed = seed;
            run.options.epochs = epochs;
            run.options.batch = batch;
            run.options.seed = seed;
            run.options.crop = crop;
            run.options.log = Some(log.unwrap_or_else(|| {
                let mut s = out.clone().into_os_string();
                s.push(".log.csv");
                s.into()
            }));
            let o = run.execute()?;
            if let (Some(first), Some(last)) = (o.report.first_loss(), o.report.last_loss()) {
                println!("{} steps, loss {first:.5} -> {last:.5}", o.report.steps.len());
            }
            println!("{} (step {}, sha256 {})", out.display(), o.step, o.checkpoint_sha256);
            if let Some(msg) = o.report.halted {
                eprintln!("training halted: {msg}");
                return Ok(false);
            }
        }
        Command::Infer {
            ckpt1,
            ckpt2,
            input,
            out,
        } => {
            let mut net = load_model::<f32>(&ckpt1, ckpt2.as_deref())?;
            let img = load_image::<f32>(&input)?;
            save_image(&net.dehaze(&img)?, &out)?;
        }
        Command::Eval {
            ckpt1,
            ckpt2,
            data,
            report,
        } => {
            let pairs = load_split::<f32>(&data, Split::Test)?;
            let mut net = ckpt1.map(|c| load_model::<f32>(&c, ckpt2.as_deref())).transpose()?;
            let mut rows = Vec::with_capacity(pairs.len() + 1);
            for p in &pairs {
                let out = match net.as_mut() {
                    Some(n) => n.dehaze(&p.hazy)?,
                    None => p.hazy.clone(),
                };
                rows.push(EvalRow {
                    sample_id: p.id.clone(),
                    psnr_db: psnr(&out, &p.clean, 1.0)?,
                    ssim: ssim(&out, &p.clean, 1.0)?,
                });
            }
            let mean = mean_row(&rows);
            println!(
                "{} images: PSNR {:.3} dB, SSIM {:.4}",
                rows.len(),
                mean.psnr_db,
                mean.ssim
            );
            rows.push(mean);
            write_report(&report, &rows)?;
        }
        Command::Gradcheck { op, seed } => {
            let results = tsnet::gradcheck::suite::run(op.as_deref(), seed)?;
            let mut ok = true;
            for r in &results {
                let tag = if r.passed() { "ok  " } else { "FAIL" };
                println!(
                    "{tag} {:20} max rel err {:.3e} (tol {:.0e}, {} checks)",
                    r.name, r.max_rel_error, r.tolerance, r.checked
                );
                ok &= r.passed();
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
