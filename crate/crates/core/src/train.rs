//! Training loops for stage one, stage two and the fused network.

use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{random_crop_pair, Pair};
use crate::error::{Error, Result};
use crate::losses::{stage1_loss, stage2_loss, FrozenExtractor, LossConfig};
use crate::metrics::{from_unit, psnr, to_unit};
use crate::model::TsNet;
use crate::nn::{Ctx, Mode};
use crate::optim::{clip_grad_norm, cosine_lr, AdamW, OptimState, Schedule};
use crate::params::{ParamKind, ParamStore};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "all")]
    All,
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" => Ok(Stage::One),
            "2" => Ok(Stage::Two),
            "all" => Ok(Stage::All),
            other => Err(Error::Config(format!("unknown stage `{other}`, expected 1, 2 or all"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub stage: Stage,
    pub epochs: usize,
    pub batch: usize,
    /// Square crop side; images no larger than this are used whole.
    pub crop: usize,
    pub seed: u64,
    pub eta_max: f64,
    pub eta_min: f64,
    pub adamw: AdamW,
    pub clip: f64,
    pub loss: LossConfig,
    /// Append one CSV row per step here.
    pub log: Option<PathBuf>,
    /// Stop once the step counter reaches this value.
    pub stop_after: Option<u64>,
}

impl TrainOptions {
    pub fn new(stage: Stage) -> Self {
        let s = Schedule::new(1);
        TrainOptions {
            stage,
            epochs: 100,
            batch: 8,
            crop: 64,
            seed: 0,
            eta_max: s.eta_max,
            eta_min: s.eta_min,
            adamw: AdamW::default(),
            clip: 1.0,
            loss: LossConfig::default(),
            log: None,
            stop_after: None,
        }
    }

    pub fn steps_per_epoch(&self, pairs: usize) -> u64 {
        pairs.div_ceil(self.batch.max(1)) as u64
    }

    pub fn schedule(&self, pairs: usize) -> Schedule {
        Schedule {
            eta_max: self.eta_max,
            eta_min: self.eta_min,
            total_steps: self.epochs as u64 * self.steps_per_epoch(pairs),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub psnr_train: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub steps: Vec<StepLog>,
    /// Set when a non-finite loss or gradient stopped the run. Parameters
    /// hold the last finite state.
    pub halted: Option<String>,
}

impl TrainReport {
    pub fn first_loss(&self) -> Option<f64> {
        self.steps.first().map(|s| s.loss)
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.steps.last().map(|s| s.loss)
    }
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Sample order for one epoch.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed, 1, epoch as u64)));
    order
}

/// Network-domain `(hazy, clean)` batch for a global step.
pub fn make_batch<T: Scalar>(
    pairs: &[Pair<T>],
    idx: &[usize],
    crop: usize,
    seed: u64,
    step: u64,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 2, step));
    let mut hazy = Vec::with_capacity(idx.len());
    let mut clean = Vec::with_capacity(idx.len());
    for &i in idx {
        let p = &pairs[i];
        let s = p.clean.shape();
        let p = if crop < s.h || crop < s.w {
            random_crop_pair(p, crop.min(s.h).min(s.w), &mut rng)?
        } else {
            p.clone()
        };
        hazy.push(from_unit(&p.hazy));
        clean.push(from_unit(&p.clean));
    }
    Ok((Tensor::stack(&hazy)?, Tensor::stack(&clean)?))
}

fn buffers<T: Scalar>(store: &ParamStore<T>) -> Vec<(crate::ParamId, Tensor<T>)> {
    store
        .ids_of_kind(ParamKind::Buffer)
        .map(|id| (id, store.value(id).clone()))
        .collect()
}

fn restore<T: Scalar>(store: &mut ParamStore<T>, saved: Vec<(crate::ParamId, Tensor<T>)>) {
    for (id, t) in saved {
        *store.value_mut(id) = t;
    }
}

/// Loss and clamped output of one forward pass, with gradients left in the
/// trained store.
struct Forward<T> {
    loss: f64,
    output: Tensor<T>,
}

fn forward_backward<T: Scalar>(
    net: &mut TsNet<T>,
    stage: Stage,
    extractor: Option<&FrozenExtractor<T>>,
    loss_cfg: &LossConfig,
    hazy: &Tensor<T>,
    clean: &Tensor<T>,
) -> Result<Forward<T>> {
    let use_cl = net.config().ablation.use_cl;
    let contrast = if use_cl { extractor.map(|e| (e, loss_cfg)) } else { None };
    match stage {
        Stage::One | Stage::All => {
            let arch = &net.arch;
            let store = &mut net.weights1;
            store.zero_grads();
            let mut cx = Ctx::new(store, Mode::Train);
            let i = cx.constant(hazy.clone());
            let j = cx.constant(clean.clone());
            let s1 = arch.stage1_forward(&mut cx, i)?;
            let (raw, out) = if stage == Stage::All {
                arch.stage2_forward(&mut cx, s1.c)?
            } else {
                (s1.raw, s1.c)
            };
            let parts = stage1_loss(&mut cx, j, i, raw, contrast)?;
            let loss = cx.value(parts.total).item().f64();
            let output = cx.value(out).clone();
            if !loss.is_finite() {
                return Ok(Forward { loss, output });
            }
            let grads = cx.tape.backward(parts.total)?;
            drop(cx);
            grads.accumulate_into(store);
            Ok(Forward { loss, output })
        }
        Stage::Two => {
            let c = net.dehaze_stage1(hazy)?;
            let arch = &net.arch;
            let store = &mut net.weights2;
            store.zero_grads();
            let mut cx = Ctx::new(store, Mode::Train);
            let cv = cx.constant(c);
            let j = cx.constant(clean.clone());
            let (raw, d) = arch.stage2_forward(&mut cx, cv)?;
            let l = stage2_loss(&mut cx, j, raw)?;
            let loss = cx.value(l).item().f64();
            let output = cx.value(d).clone();
            if !loss.is_finite() {
                return Ok(Forward { loss, output });
            }
            let grads = cx.tape.backward(l)?;
            drop(cx);
            grads.accumulate_into(store);
            Ok(Forward { loss, output })
        }
    }
}

fn check_stage<T: Scalar>(net: &TsNet<T>, stage: Stage) -> Result<()> {
    let ab = net.config().ablation;
    match stage {
        Stage::One if ab.ts_all => Err(Error::Config("a fused model trains with stage `all`".into())),
        Stage::Two if ab.ts_all => Err(Error::Config("a fused model trains with stage `all`".into())),
        Stage::Two if net.arch.stage2.is_none() => Err(Error::Config("model has no second stage".into())),
        Stage::All if !ab.ts_all => Err(Error::Config("stage `all` needs a ts_all model".into())),
        _ => Ok(()),
    }
}

/// Store updated by `stage`.
pub fn trained_store<T: Scalar>(net: &mut TsNet<T>, stage: Stage) -> &mut ParamStore<T> {
    match stage {
        Stage::One | Stage::All => &mut net.weights1,
        Stage::Two => &mut net.weights2,
    }
}

struct LogSink {
    writer: csv::Writer<std::fs::File>,
    path: PathBuf,
}

impl LogSink {
    fn open(path: &Path) -> Result<Self> {
        let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let writer = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
        Ok(LogSink {
            writer,
            path: path.to_path_buf(),
        })
    }

    fn write(&mut self, row: &StepLog) -> Result<()> {
        let err = |e: csv::Error| Error::Config(format!("writing {}: {e}", self.path.display()));
        self.writer.serialize(row).map_err(err)?;
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Train `net` on `pairs` (values in `[0, 1]`). `state` resumes a previous
/// run: its step counter selects the schedule position and the batches
/// already seen are skipped.
pub fn train<T: Scalar>(
    net: &mut TsNet<T>,
    pairs: &[Pair<T>],
    opts: &TrainOptions,
    state: &mut OptimState<T>,
) -> Result<TrainReport> {
    check_stage(net, opts.stage)?;
    if pairs.is_empty() {
        return Err(Error::Config("no training pairs".into()));
    }
    if opts.batch == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let extractor = if net.config().ablation.use_cl && opts.loss.beta != 0.0 {
        Some(FrozenExtractor::<T>::random(FrozenExtractor::<T>::DEFAULT_SEED)?)
    } else {
        None
    };
    let per_epoch = opts.steps_per_epoch(pairs.len());
    let schedule = opts.schedule(pairs.len());
    let mut sink = opts.log.as_deref().map(LogSink::open).transpose()?;
    let mut report = TrainReport::default();

    let end = opts
        .stop_after
        .map_or(schedule.total_steps, |s| s.min(schedule.total_steps));
    while state.step < end {
        let step = state.step;
        let epoch = (step / per_epoch) as usize;
        let k = (step % per_epoch) as usize;
        let order = epoch_order(opts.seed, epoch, pairs.len());
        let idx = &order[k * opts.batch..((k + 1) * opts.batch).min(pairs.len())];
        let (hazy, clean) = make_batch(pairs, idx, opts.crop, opts.seed, step)?;
        let lr = cosine_lr(step, &schedule);

        let saved = buffers(trained_store(net, opts.stage));
        let fwd = forward_backward(net, opts.stage, extractor.as_ref(), &opts.loss, &hazy, &clean)?;
        if !fwd.loss.is_finite() {
            restore(trained_store(net, opts.stage), saved);
            let msg = format!("non-finite loss {} at step {step}", fwd.loss);
            log::error!("{msg}; keeping the last finite state");
            report.halted = Some(msg);
            break;
        }
        let store = trained_store(net, opts.stage);
        clip_grad_norm(store, opts.clip);
        if let Err(e) = opts.adamw.step(store, state, lr) {
            restore(store, saved);
            log::error!("{e} at step {step}; keeping the last finite state");
            report.halted = Some(e.to_string());
            break;
        }
        store.zero_grads();

        let row = StepLog {
            step,
            epoch,
            lr,
            loss: fwd.loss,
            psnr_train: psnr(&to_unit(&fwd.output), &to_unit(&clean), 1.0)?,
        };
        log::debug!(
            "step {step} epoch {epoch} lr {lr:.3e} loss {:.5} psnr {:.2}",
            row.loss,
            row.psnr_train
        );
        if let Some(s) = sink.as_mut() {
            s.write(&row)?;
        }
        report.steps.push(row);
    }
    Ok(report)
}

/// Mean PSNR and SSIM of the model output against the clean images.
pub fn evaluate<T: Scalar>(net: &mut TsNet<T>, pairs: &[Pair<T>]) -> Result<Vec<crate::metrics::EvalRow>> {
    pairs
        .iter()
        .map(|p| {
            let out = net.dehaze(&p.hazy)?;
            Ok(crate::metrics::EvalRow {
                sample_id: p.id.clone(),
                psnr_db: psnr(&out, &p.clean, 1.0)?,
                ssim: crate::metrics::ssim(&out, &p.clean, 1.0)?,
            })
        })
        .collect()
}

/// Mean PSNR of stage-one output only.
pub fn evaluate_stage1<T: Scalar>(net: &mut TsNet<T>, pairs: &[Pair<T>]) -> Result<f64> {
    let mut total = 0.0;
    for p in pairs {
        let c = to_unit(&net.dehaze_stage1(&from_unit(&p.hazy))?);
        total += psnr(&c, &p.clean, 1.0)?;
    }
    Ok(total / pairs.len().max(1) as f64)
}

/// Mean stage-two loss over whole images. A stage whose batch norms have
/// never seen data runs on batch statistics in a scratch copy, leaving the
/// model untouched.
pub fn stage2_eval_loss<T: Scalar>(net: &mut TsNet<T>, pairs: &[Pair<T>]) -> Result<f64> {
    let mut total = 0.0;
    for p in pairs {
        let c = net.dehaze_stage1(&from_unit(&p.hazy))?;
        let arch = &net.arch;
        let store = if arch.fused() {
            &mut net.weights1
        } else {
            &mut net.weights2
        };
        let untrained = store
            .iter()
            .any(|(name, v, _)| name.ends_with("num_batches_tracked") && v.item() <= T::zero());
        let mut scratch;
        let (store, mode) = if untrained {
            scratch = store.clone();
            (&mut scratch, Mode::Train)
        } else {
            (store, Mode::Eval)
        };
        let mut cx = Ctx::new(store, mode);
        let cv = cx.constant(c);
        let j = cx.constant(from_unit(&p.clean));
        let (raw, _) = arch.stage2_forward(&mut cx, cv)?;
        let l = stage2_loss(&mut cx, j, raw)?;
        total += cx.value(l).item().f64();
    }
    Ok(total / pairs.len().max(1) as f64)
}

/// Mean PSNR of the hazy inputs, the do-nothing baseline.
pub fn hazy_baseline<T: Scalar>(pairs: &[Pair<T>]) -> Result<f64> {
    let mut total = 0.0;
    for p in pairs {
        total += psnr(&p.hazy, &p.clean, 1.0)?;
    }
    Ok(total / pairs.len().max(1) as f64)
}

/// A complete training job: data on disk in, a checkpoint file out.
#[derive(Clone, Debug)]
pub struct TrainRun {
    pub config: crate::model::ModelConfig,
    pub data: PathBuf,
    pub out: PathBuf,
    /// Trained stage-one checkpoint; required for stage two.
    pub ckpt1: Option<PathBuf>,
    /// Continue from the weights and optimizer state in `out`.
    pub resume: bool,
    /// Seed for weight initialization.
    pub init_seed: u64,
    pub options: TrainOptions,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub report: TrainReport,
    pub checkpoint_sha256: String,
    pub step: u64,
}

impl TrainRun {
    pub fn new(
        stage: Stage,
        config: crate::model::ModelConfig,
        data: impl Into<PathBuf>,
        out: impl Into<PathBuf>,
    ) -> Self {
        TrainRun {
            config,
            data: data.into(),
            out: out.into(),
            ckpt1: None,
            resume: false,
            init_seed: 0,
            options: TrainOptions::new(stage),
        }
    }

    /// Build the model, train, and write the checkpoint for the trained
    /// stage. The file is written even when the run halts on a non-finite
    /// loss, holding the last finite state.
    pub fn execute(&self) -> Result<RunOutcome> {
        use crate::checkpoint::{load_optim, load_store, save_stage, Archive, StageTag};
        let stage = self.options.stage;
        let mut config = self.config.clone();
        match stage {
            Stage::One => config.ablation.use_stage2 = false,
            Stage::Two => config.ablation.use_stage2 = true,
            Stage::All => {}
        }
        let mut net = TsNet::<f32>::new(&config, self.init_seed)?;
        if stage == Stage::Two {
            let p = self
                .ckpt1
                .as_deref()
                .ok_or_else(|| Error::Config("stage-two training needs a stage-one checkpoint".into()))?;
            let a = Archive::load(p)?;
            if crate::checkpoint::archive_stage(&a)? != StageTag::One {
                return Err(Error::Checkpoint(format!(
                    "{} is not a stage-one checkpoint",
                    p.display()
                )));
            }
            load_store(&a, &mut net.weights1)?;
        }
        let mut state = None;
        if self.resume && self.out.exists() {
            let a = Archive::load(&self.out)?;
            let store = trained_store(&mut net, stage);
            load_store(&a, store)?;
            state = load_optim(&a, store)?;
            log::info!(
                "resuming {} at step {}",
                self.out.display(),
                state.as_ref().map_or(0, |s| s.step)
            );
        }
        let mut state = match state {
            Some(s) => s,
            None => OptimState::new(trained_store(&mut net, stage)),
        };
        let pairs = crate::data::load_split::<f32>(&self.data, crate::data::Split::Train)?;
        let report = train(&mut net, &pairs, &self.options, &mut state)?;
        let tag = match stage {
            Stage::One => StageTag::One,
            Stage::Two => StageTag::Two,
            Stage::All => StageTag::All,
        };
        let store = match stage {
            Stage::Two => &net.weights2,
            _ => &net.weights1,
        };
        let sha = save_stage(&self.out, &config, tag, store, Some(&state))?;
        Ok(RunOutcome {
            report,
            checkpoint_sha256: sha,
            step: state.step,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_clean, gen_transmission, synthesize_haze, DepthStyle};
    use crate::model::{Ablation, ModelConfig};

    fn pair(seed: u64, size: usize) -> Pair<f32> {
        let clean: Tensor<f32> = gen_clean(size, size, seed).cast();
        let t: Tensor<f32> = gen_transmission(size, size, 1.2, DepthStyle::Ramp, seed)
            .unwrap()
            .cast();
        let hazy = synthesize_haze(&clean, [0.85; 3], &t).unwrap();
        Pair {
            id: format!("{seed:04}"),
            clean,
            hazy,
        }
    }

    #[test]
    fn epoch_order_is_a_seeded_permutation() {
        let a = epoch_order(3, 0, 10);
        let mut s = a.clone();
        s.sort();
        assert_eq!(s, (0..10).collect::<Vec<_>>());
        assert_eq!(a, epoch_order(3, 0, 10));
        assert_ne!(a, epoch_order(3, 1, 10));
    }

    #[test]
    fn stage_must_match_model() {
        let mut net = TsNet::<f32>::new(&ModelConfig::micro().with_ablation(Ablation::BASE), 0).unwrap();
        let pairs = vec![pair(1, 16)];
        let mut st = OptimState::new(&net.weights2);
        assert!(train(&mut net, &pairs, &TrainOptions::new(Stage::Two), &mut st).is_err());
        assert!(train(&mut net, &pairs, &TrainOptions::new(Stage::All), &mut st).is_err());
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let cfg = ModelConfig::micro();
        let pairs: Vec<_> = (0..3).map(|s| pair(s, 16)).collect();
        let mut opts = TrainOptions::new(Stage::One);
        opts.epochs = 2;
        opts.batch = 2;
        opts.crop = 8;

        let mut a = TsNet::<f32>::new(&cfg, 5).unwrap();
        let mut sa = OptimState::new(&a.weights1);
        let full = train(&mut a, &pairs, &opts, &mut sa).unwrap();
        assert_eq!(full.steps.len(), 4);
        assert_eq!(full.steps[0].lr, opts.eta_max);

        let mut b = TsNet::<f32>::new(&cfg, 5).unwrap();
        let mut sb = OptimState::new(&b.weights1);
        let mut first = opts.clone();
        first.stop_after = Some(3);
        train(&mut b, &pairs, &first, &mut sb).unwrap();
        assert_eq!(sb.step, 3);
        let rest = train(&mut b, &pairs, &opts, &mut sb).unwrap();
        assert_eq!(rest.steps.len(), 1);
        assert_eq!(rest.steps[0], full.steps[3]);
        for ((_, x, _), (_, y, _)) in a.weights1.iter().zip(b.weights1.iter()) {
            assert_eq!(x.data(), y.data());
        }
    }

    #[test]
    fn log_is_append_only_csv() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("log.csv");
        let cfg = ModelConfig::micro();
        let pairs = vec![pair(2, 16)];
        let mut opts = TrainOptions::new(Stage::One);
        opts.epochs = 2;
        opts.log = Some(log.clone());
        let mut net = TsNet::<f32>::new(&cfg, 1).unwrap();
        let mut st = OptimState::new(&net.weights1);
        train(&mut net, &pairs, &opts, &mut st).unwrap();
        opts.epochs = 3;
        train(&mut net, &pairs, &opts, &mut st).unwrap();
        let text = std::fs::read_to_string(&log).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "step,epoch,lr,loss,psnr_train");
        assert_eq!(lines.len(), 4);
        for l in &lines[1..] {
            assert!(l.split(',').all(|v| v.parse::<f64>().unwrap().is_finite()));
        }
    }
}
