//! Named gradient checks over every differentiable primitive and block.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CheckReport, GradCheck};
use crate::error::{Error, Result};
use crate::losses::{stage1_loss as stage1_loss_fn, FrozenExtractor, LossConfig};
use crate::model::{Alm, Iffe, ModelConfig, Msfm, TsNet};
use crate::nn::{
    deform_conv_with_offsets, ChannelAttention, Ctx, LearnableSkip, SkFusion, SoftReconstruction, SpatialAttention,
};
use crate::ops::PadMode;
use crate::params::{Init, ParamId, ParamKind, ParamStore};
use crate::tape::{PaddingSpec, Tape, Var};
use crate::tensor::{Shape, Tensor};

pub const TOLERANCE: f64 = 1e-3;
pub const MODEL_TOLERANCE: f64 = 1e-2;
/// Randomized trials per primitive.
pub const PRIMITIVE_TRIALS: usize = 50;

type CheckFn = fn(&mut ChaCha8Rng) -> Result<CheckReport>;

pub struct Case {
    pub name: &'static str,
    pub tolerance: f64,
    pub trials: usize,
    check: CheckFn,
}

#[derive(Clone, Debug)]
pub struct CaseResult {
    pub name: &'static str,
    pub tolerance: f64,
    pub trials: usize,
    /// Worst relative error over all trials.
    pub max_rel_error: f64,
    pub checked: usize,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

impl Case {
    pub fn run(&self, seed: u64) -> Result<CaseResult> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv(self.name));
        let mut out = CaseResult {
            name: self.name,
            tolerance: self.tolerance,
            trials: self.trials,
            max_rel_error: 0.0,
            checked: 0,
        };
        for _ in 0..self.trials {
            let r = (self.check)(&mut rng)?;
            out.max_rel_error = out.max_rel_error.max(r.max_rel_error);
            out.checked += r.checked;
        }
        Ok(out)
    }
}

fn fnv(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x100_0000_01b3)
    })
}

macro_rules! case {
    ($name:literal, $f:ident) => {
        Case {
            name: $name,
            tolerance: TOLERANCE,
            trials: PRIMITIVE_TRIALS,
            check: $f,
        }
    };
    ($name:literal, $f:ident, $trials:expr) => {
        Case {
            name: $name,
            tolerance: TOLERANCE,
            trials: $trials,
            check: $f,
        }
    };
    ($name:literal, $f:ident, $trials:expr, $tol:expr) => {
        Case {
            name: $name,
            tolerance: $tol,
            trials: $trials,
            check: $f,
        }
    };
}

pub fn cases() -> Vec<Case> {
    vec![
        case!("conv2d", conv2d),
        case!("conv2d_depthwise", conv2d_depthwise),
        case!("grid_sample", grid_sample),
        case!("batch_norm_train", batch_norm_train),
        case!("batch_norm_eval", batch_norm_eval),
        case!("binary", binary),
        case!("unary", unary),
        case!("kinked", kinked),
        case!("concat_slice", concat_slice),
        case!("pad", pad),
        case!("pixel_shuffle", pixel_shuffle),
        case!("pools", pools),
        case!("reductions", reductions),
        case!("losses", losses),
        case!("channel_attention", channel_attention, 5),
        case!("spatial_attention", spatial_attention, 5),
        case!("sk_fusion", sk_fusion, 5),
        case!("soft_reconstruction", soft_reconstruction, 5),
        case!("learnable_skip", learnable_skip, 5),
        case!("deform_conv", deform_conv, 10),
        case!("iffe", iffe, 2),
        case!("msfm", msfm, 2),
        case!("alm", alm, 2),
        case!("contrastive", contrastive, 2),
        case!("stage1_loss", stage1_loss, 2),
        case!("stage1_network", stage1_network, 1, MODEL_TOLERANCE),
        case!("tsnet_end_to_end", tsnet_end_to_end, 1, MODEL_TOLERANCE),
    ]
}

/// Run every case, or only the one called `only`.
pub fn run(only: Option<&str>, seed: u64) -> Result<Vec<CaseResult>> {
    let all = cases();
    let chosen: Vec<&Case> = match only {
        Some(name) => {
            let c = all.iter().find(|c| c.name == name).ok_or_else(|| {
                let names: Vec<&str> = all.iter().map(|c| c.name).collect();
                Error::invalid("gradcheck", format!("unknown op {name:?}; known: {}", names.join(", ")))
            })?;
            vec![c]
        }
        None => all.iter().collect(),
    };
    chosen.into_iter().map(|c| c.run(seed)).collect()
}

// ------------------------------------------------------------- helpers

fn uniform(rng: &mut ChaCha8Rng, shape: impl Into<Shape>, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(lo..hi))
}

/// Uniform values at least `gap` away from every point in `kinks`.
fn away(rng: &mut ChaCha8Rng, shape: impl Into<Shape>, lo: f64, hi: f64, kinks: &[f64], gap: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| loop {
        let v = rng.gen_range(lo..hi);
        if kinks.iter().all(|k| (v - k).abs() > gap) {
            break v;
        }
    })
}

/// Distinct values spaced well above the finite-difference step, so max
/// reductions have no near-ties.
fn spaced(rng: &mut ChaCha8Rng, shape: impl Into<Shape>) -> Tensor<f64> {
    let shape = shape.into();
    let n = shape.numel();
    let mut vals: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * (i as f64 + 0.5) / n as f64).collect();
    vals.shuffle(rng);
    Tensor::from_vec(shape, vals).expect("length matches")
}

fn small_shape(rng: &mut ChaCha8Rng, min_hw: usize) -> Shape {
    Shape::new(
        rng.gen_range(1..=2),
        rng.gen_range(1..=4),
        rng.gen_range(min_hw..=6),
        rng.gen_range(min_hw..=6),
    )
}

fn check_inputs<F>(inputs: &[Tensor<f64>], f: F) -> Result<CheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    GradCheck::default().inputs(inputs, f)
}

/// Build a block into a fresh store, give every all-zero trainable tensor
/// small random values (zero-initialized heads and offset predictors sit on
/// kinks of the sampler otherwise), then register the block input as a
/// trainable tensor so it is checked alongside the parameters.
fn block_store<B>(
    rng: &mut ChaCha8Rng,
    input: Tensor<f64>,
    build: impl FnOnce(&mut Init<'_, f64>) -> Result<B>,
) -> Result<(ParamStore<f64>, B, ParamId)> {
    let mut store = ParamStore::new();
    let mut init_rng = ChaCha8Rng::seed_from_u64(rng.gen());
    let block = build(&mut Init::new(&mut store, &mut init_rng))?;
    jitter_zeros(&mut store, rng, 0.1);
    let input = store.insert("input", input, ParamKind::Trainable)?;
    Ok((store, block, input))
}

fn jitter_zeros(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng, scale: f64) {
    let ids: Vec<ParamId> = store.ids_of_kind(ParamKind::Trainable).collect();
    for id in ids {
        if store.value(id).data().iter().all(|&v| v == 0.0) {
            for v in store.value_mut(id).data_mut() {
                *v = rng.gen_range(-scale..scale);
            }
        }
    }
}

/// Up to `n` random `(tensor, element)` picks over trainable tensors.
fn picks(store: &ParamStore<f64>, rng: &mut ChaCha8Rng, n: usize) -> Vec<(ParamId, usize)> {
    let mut all: Vec<(ParamId, usize)> = store
        .ids_of_kind(ParamKind::Trainable)
        .flat_map(|id| (0..store.value(id).numel()).map(move |j| (id, j)))
        .collect();
    all.shuffle(rng);
    all.truncate(n);
    all
}

fn check_block<B>(
    rng: &mut ChaCha8Rng,
    input: Tensor<f64>,
    n: usize,
    build: impl FnOnce(&mut Init<'_, f64>) -> Result<B>,
    forward: impl Fn(&B, &mut Ctx<'_, f64>, Var) -> Result<Var>,
) -> Result<CheckReport> {
    check_block_with(rng, input, n, build, |_, _| {}, forward)
}

/// As [`check_block`], with a hook to adjust parameters before checking.
fn check_block_with<B>(
    rng: &mut ChaCha8Rng,
    input: Tensor<f64>,
    n: usize,
    build: impl FnOnce(&mut Init<'_, f64>) -> Result<B>,
    prepare: impl FnOnce(&B, &mut ParamStore<f64>),
    forward: impl Fn(&B, &mut Ctx<'_, f64>, Var) -> Result<Var>,
) -> Result<CheckReport> {
    let (mut store, block, input) = block_store(rng, input, build)?;
    prepare(&block, &mut store);
    let chosen = picks(&store, rng, n);
    GradCheck::default().params(&mut store, &chosen, |cx| {
        let x = cx.p(input);
        forward(&block, cx, x)
    })
}

// ---------------------------------------------------------- primitives

fn conv2d(rng: &mut ChaCha8Rng) -> Result<CheckReport> {
    let s = small_shape(rng, 5);
    let cout = rng.gen_range(1..=4);
    let divisors: Vec<usize> = (1..=s.c).filter(|g| s.c % g == 0 && cout % g == 0).collect();
    let groups = *divisors.choose(rng).expect("1 divides");
    let k = *[1, 2, 3].choose(rng).expect("nonempty");
    let stride = rng.gen_range(1..=2);
    let dilation = rng.gen_range(1..=2);
    let p = rng.gen_range(0..=2);
    let pad = if rng.gen_bool(0.5) {
        PaddingSpec::Zero(p)
    } else {
        PaddingSpec::Reflect(p)
    };
    let x = uniform(rng, s, -1.0, 1.0);
    let w = uniform(rng, [cout, s.c / groups, k, k], -1.0, 1.0);
    let b = uniform(rng, [1, cout, 1, 1], -1.0, 1.0);
    check_inputs(&[x, w, b], |t, v| {
        t.conv2d(v[0], v[1], Some(v[2]), stride, pad, dilation, groups)
    })
}

fn conv2d_depthwise(rng: &mut ChaCha8Rng) -> Result<CheckReport> {
    let s = small_shape(rng, 5);
    let k = *[3, 5].choose(rng).expect("nonempty");
    let dilation = rng.gen_range(1..=2);
    let pad = PaddingSpec::Reflect(dilation * (k - 1) / 2);
    let x = uniform(rng, s, -1.0, 1.0);
    let w = uniform(rng, [s.c, 1, k, k], -1.0, 1.0);
    let b = uniform(rng, [1, s.c, 1, 1], -1.0, 1.0);
    check_inputs(&[x, w, b], |t, v| {
        t.conv2d(v[0], v[1], Some(v[2]), 1, pad, dilation, s.c)
    })
}

fn grid_sample(rng: &mut ChaCha8Rng) -> Result<CheckReport> {
    let s = small_shape(rng, 2);
    let k = rng.gen_range(1..=3);
    let (ho, wo) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
    let x = uniform(rng, s, -1.0, 1.0);
    // Coordinates off the integer lattice, including points partly outside.
    let coords = Tensor::from_fn([s.n, 2 * k, ho, wo], |_, c, _, _| {
        let extent = if c % 2 == 0 { s.h } else { s.w } as f64;
        let base = rng.gen_range(-1..extent as i64) as f64;
        base + rng.gen_range(0.05..0.95)
    });
    check_inputs(&[x, coords], |t, v| t.grid_sample_bilinear(v[0], v[1]))
}

fn batch_norm_train(rng: &mut ChaCha8Rng) -> Result<CheckReport> {
    let mut s = small_shape(rng, 2);
    s.n = 2;
    let x = uniform(rng, s, -1.0, 1.0);
    let g = uniform(rng, [1, s.c, 1, 1], 0.5, 1.5);
    let b = uniform(rng, [1, s.c, 1, 1], -1.0, 1.0);
    check_inputs(&[x, g, b], |t, v| Ok(t.batch_norm_train(v[0], v[1], v[2], 1e-5)?.0))
}

fn batch_norm_eval(rng: &mut ChaCha8Rng) -> Result<CheckReport> {
    let s = small_shape(rng, 1);
    let x = uniform(rng, s, -1.0, 1.0);
    let g = uniform(rng, [1, s.c, 1, 1], 0.5, 1.5);
    let b = uniform(rng, [1, s.c, 1, 1], -1.0, 1.0);
    let mean: Vec<f64> = (0..s.c).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let var: Vec<f64> = (0..s.c).map(|_| rng.gen_range(0.2..2.0)).collect();
    check_inputs(&[x, g, b], |t, v| {
        t.batch_norm_eval(v[0], v[1], v[2], &mean, &var, 1e-5)
    })
}

fn binary(rng: &mut ChaCha8Rng) -> Result<CheckReport> {
    let s = small_shape(rng, 1);
    let mut bs = s;
    for dim in [&mut bs.n, &mut bs.c, &mut bs.h, &mut bs.w] {
        if rng.gen_bool(0.5) {
            *dim = 1;
        }
    }
    let a = uniform(rng, s, -1.0, 1.0);
    let b = away(rng, bs, -1.5, 1.5, &[0.0], 0.5);
    check_inputs(&[a, b], |t, v| {
        let sum = t.add(v[0], v[1])?;
        let diff = t.sub(sum, v[1])?;
        let diff = t.sub(diff, v[1])?;
        let prod = t.mul(diff, v[1])?;
        t.div(prod, v[1])
    })
}

fn unary(rng: &mut ChaCha8Rng) -> Result<CheckReport> {
    let s = small_shape(rng, 1);
    let a = uniform(rng, s, -3.0, 3.0);
    check_inputs(&[a], |t, v| {
        let x = t.sigmoid(v[0])?;
        let g = t.gelu(v[0])?;
        let y = t.mul(x, g)?;
        let y = t.scalar_mul(y, -1.7)?;
        t.add_scalar(y, 0.3)
    })
}

/// Piecewise-linear operators, evaluated away from their kinks.
fn kinked(rng: &mut ChaCha8Rng) -> Result<CheckReport> {
    let s = small_shape(rng, 1);
    let a = away(rng, s, -2.0, 2.0, &[-1.0, 0.0, 0.5], 0.01);
    check_inputs(&[a], |t, v| {
        let r = t.relu(v[0])?;
        let b = t.abs(v[0])?;
        let c = t.clamp(v[0], -1.0, 0.5)?;
        let rb = t.add(r, b)?;
        let rb = t.mul(rb, v[0])?;
        t.add(rb, c)
    })
}

fn concat_slice(rng: &mut ChaCha8Rng) -> Result<CheckReport> {
    let s = small_shape(rng, 1);
    let a = uniform(rng, s, -1.0, 1.0);
    let bc = rng.gen_range(1..=3);
    let b = uniform(rng, s.with_c(bc), -1.0, 1.0);
    let total = 2 * s.c + bc;
    let start = rng.gen_range(0..total);
    let len = rng.gen_range(1..=total - start);
    check_inputs(&[a, b], |t, v| {
        let cat = t.concat(&[v[0], v[1], v[0]])?;
        let sl = t.slice_channels(cat, start, len)?;
        let sq = t.mul(sl, sl)?;
        let n = t.shape(sq);
        t.reshape(sq, [1, n.numel(), 1, 1])
    })
}

fn pad(rng: &mut ChaCha8Rng) -> Result<CheckReport> {
    let s = small_shape(rng, 2);
    let p = rng.gen_range(1..=4);
    let mode = if rng.gen_bool(0.5) {
        PadMode::Zero
    } else {
        PadMode::Reflect
    };
    let a = uniform(rng, s, -1.0, 1.0);
    check_inputs(&[a], |t, v| t.pad(v[0], p, mode))
}

fn pixel_shuffle(rng: &mut ChaCha8Rng) -> Result<CheckReport> {
    let r = rng.gen_range(1..=2);
    let s = Shape::new(
        rng.gen_range(1..=2),
        r * r * rng.gen_range(1..=2),
        rng.gen_range(1..=4),
        rng.gen_range(1..=4),
    );
    let a = uniform(rng, s, -1.0, 1.0);
    check_inputs(&[a], |t, v| t.pixel_shuffle(v[0], r))
}

fn pools(rng: &mut ChaCha8Rng) -> Result<CheckReport> {
    let s = small_shape(rng, 1);
    let a = spaced(rng, s);
    check_inputs(&[a], |t, v| {
        let ga = t.global_avg_pool(v[0])?;
        let gm = t.global_max_pool(v[0])?;
        let cm = t.channel_mean(v[0])?;
        let cx = t.channel_max(v[0])?;
        let g = t.mul(ga, gm)?;
        let c = t.add(cm, cx)?;
        // (N, C, 1, 1) times (N, 1, H, W) broadcasts neither way; sum both.
        let g = t.sum(g)?;
        let c = t.mul(c, c)?;
        let c = t.sum(c)?;
        t.add(g, c)
    })
}

fn reductions(rng: &mut ChaCha8Rng) -> Result<CheckReport> {
    let s = small_shape(rng, 1);
    let a = uniform(rng, s, -1.0, 1.0);
    check_inputs(&[a], |t, v| {
        let sq = t.mul(v[0], v[0])?;
        let m = t.mean(sq)?;
        let s = t.sum(v[0])?;
        t.mul(m, s)
    })
}

fn losses(rng: &mut ChaCha8Rng) -> Result<CheckReport> {
    let s = small_shape(rng, 1);
    let a = uniform(rng, s, -2.0, 2.0);
    // Keep |a - b| off the L1 kink at zero.
    let delta = away(rng, s, -2.0, 2.0, &[0.0], 0.01);
    let b = Tensor::from_fn(s, |n, c, h, w| a.at(n, c, h, w) - delta.at(n, c, h, w));
    check_inputs(&[a, b], |t, v| {
        let h = t.smooth_l1(v[0], v[1])?;
        let l = t.l1(v[0], v[1])?;
        let l = t.scalar_mul(l, 0.5)?;
        t.add(h, l)
    })
}

// -------------------------------------------------------------- blocks

fn block_input(rng: &mut ChaCha8Rng, c: usize, hw: usize) -> Tensor<f64> {
    uniform(rng, [2, c, hw, hw], -1.0, 1.0)
}

fn channel_attention(rng: &mut ChaCha8Rng) -> Result<CheckReport> {
    let x = block_input(rng, 8, 4);
    check_block(
        rng,
        x,
        64,
        |i| ChannelAttention::new(i, "ca", 8, 4),
        |b, cx, x| b.forward(cx, x),
    )
}

fn spatial_attention(rng: &mut ChaCha8Rng) -> Result<CheckReport> {
    // Spaced values keep the channel max away from ties.
    let x = spaced(rng, [2, 3, 5, 5]);
    check_block(
        rng,
        x,
        64,
        |i| SpatialAttention::new(i, "sa"),
        |b, cx, x| b.forward(cx, x),
    )
}

fn sk_fusion(rng: &mut ChaCha8Rng) -> Result<CheckReport> {
    let x = block_input(rng, 8, 3);
    let other = block_input(rng, 8, 3);
    check_block(
        rng,
        x,
        64,
        |i| {
            Ok((
                SkFusion::new(i, "sk", 8)?,
                i.tensor("other", other, ParamKind::Trainable)?,
            ))
        },
        |(b, other), cx, x| {
            let o = cx.p(*other);
            b.forward(cx, x, o)
        },
    )
}

fn soft_reconstruction(rng: &mut ChaCha8Rng) -> Result<CheckReport> {
    let feats = block_input(rng, 4, 4);
    let image = block_input(rng, 3, 4);
    check_block(
        rng,
        feats,
        64,
        |i| {
            Ok((
                SoftReconstruction::new(i, "head", 4)?,
                i.tensor("image", image, ParamKind::Trainable)?,
            ))
        },
        |(b, image), cx, f| {
            let im = cx.p(*image);
            b.forward(cx, f, im)
        },
    )
}

fn learnable_skip(rng: &mut ChaCha8Rng) -> Result<CheckReport> {
    let x = block_input(rng, 2, 3);
    let theta = rng.gen_range(-2.0..2.0);
    check_block(
        rng,
        x,
        64,
        |i| LearnableSkip::new(i, "skip", theta),
        |b, cx, x| b.forward(cx, x),
    )
}

fn deform_conv(rng: &mut ChaCha8Rng) -> Result<CheckReport> {
    let s = Shape::new(
        rng.gen_range(1..=2),
        rng.gen_range(1..=3),
        rng.gen_range(2..=5),
        rng.gen_range(2..=5),
    );
    let cout = rng.gen_range(1..=3);
    let x = uniform(rng, s, -1.0, 1.0);
    // Integer part in {-1, 0, 1}, fractional part off the lattice.
    let offsets = Tensor::from_fn([s.n, 18, s.h, s.w], |_, _, _, _| {
        rng.gen_range(-1..=1) as f64 + rng.gen_range(0.05..0.95)
    });
    let w = uniform(rng, [cout, s.c, 3, 3], -1.0, 1.0);
    let b = uniform(rng, [1, cout, 1, 1], -1.0, 1.0);
    check_inputs(&[x, offsets, w, b], |t, v| {
        deform_conv_with_offsets(t, v[0], v[1], v[2], Some(v[3]))
    })
}

fn iffe(rng: &mut ChaCha8Rng) -> Result<CheckReport> {
    let x = block_input(rng, 8, 4);
    check_block(rng, x, 96, |i| Iffe::new(i, "iffe", 8, 4), |b, cx, x| b.forward(cx, x))
}

fn msfm(rng: &mut ChaCha8Rng) -> Result<CheckReport> {
    let x = block_input(rng, 8, 4);
    let cfg = ModelConfig::micro();
    check_block(
        rng,
        x,
        96,
        |i| Msfm::new(i, "msfm", 8, &cfg),
        |b, cx, x| b.forward(cx, x),
    )
}

fn alm(rng: &mut ChaCha8Rng) -> Result<CheckReport> {
    let x = block_input(rng, 8, 4);
    check_block_with(
        rng,
        x,
        96,
        |i| Alm::new(i, "alm", 8, 4),
        |b, store| {
            // Offsets near +0.5 keep every tap mid-cell, off the sampler's kinks.
            let off = &b.dcn.offset;
            for v in store.value_mut(off.weight).data_mut() {
                *v *= 0.01;
            }
            for v in store.value_mut(off.bias.expect("offset bias")).data_mut() {
                *v = 0.5;
            }
        },
        |b, cx, x| b.forward(cx, x),
    )
}

fn contrastive(rng: &mut ChaCha8Rng) -> Result<CheckReport> {
    let extractor = FrozenExtractor::<f64>::random(rng.gen())?;
    let s = Shape::new(1, 3, 8, 8);
    let anchor = uniform(rng, s, -1.0, 1.0);
    let positive = uniform(rng, s, -1.0, 1.0);
    let negative = uniform(rng, s, -1.0, 1.0);
    check_inputs(&[anchor], |t, v| {
        let p = t.constant(positive.clone());
        let n = t.constant(negative.clone());
        extractor.contrastive(t, v[0], p, n)
    })
}

fn micro_model(rng: &mut ChaCha8Rng, ts_all: bool) -> Result<TsNet<f64>> {
    let mut cfg = ModelConfig::micro();
    cfg.ablation.ts_all = ts_all;
    let mut net = TsNet::<f64>::new(&cfg, rng.gen())?;
    jitter_zeros(&mut net.weights1, rng, 0.1);
    // Deformable taps mid-cell, as in the ALM case.
    let ids: Vec<ParamId> = net.weights1.ids().collect();
    for id in ids {
        let name = net.weights1.name(id).to_string();
        if name.ends_with("dcn.offset.weight") {
            net.weights1
                .value_mut(id)
                .data_mut()
                .iter_mut()
                .for_each(|v| *v *= 0.01);
        } else if name.ends_with("dcn.offset.bias") {
            net.weights1.value_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.5);
        }
    }
    Ok(net)
}

fn haze_pair(rng: &mut ChaCha8Rng) -> (Tensor<f64>, Tensor<f64>) {
    let s = Shape::new(2, 3, 8, 8);
    (uniform(rng, s, -0.9, 0.9), uniform(rng, s, -0.9, 0.9))
}

/// Stage-one objective with respect to the restored image.
fn stage1_loss(rng: &mut ChaCha8Rng) -> Result<CheckReport> {
    let extractor = FrozenExtractor::<f64>::random(rng.gen())?;
    let cfg = LossConfig::default();
    let (hazy, clean) = haze_pair(rng);
    let restored = uniform(rng, hazy.shape(), -1.0, 1.0);
    check_inputs(&[restored], |t, v| {
        let j = t.constant(clean.clone());
        let i = t.constant(hazy.clone());
        Ok(stage1_loss_fn(t, j, i, v[0], Some((&extractor, &cfg)))?.total)
    })
}

/// Stage-one objective with respect to random network parameters.
fn stage1_network(rng: &mut ChaCha8Rng) -> Result<CheckReport> {
    let extractor = FrozenExtractor::<f64>::random(rng.gen())?;
    let cfg = LossConfig::default();
    let mut net = micro_model(rng, false)?;
    let (hazy, clean) = haze_pair(rng);
    let chosen = picks(&net.weights1, rng, 32);
    let arch = &net.arch;
    GradCheck::default().params(&mut net.weights1, &chosen, |cx| {
        let i = cx.constant(hazy.clone());
        let j = cx.constant(clean.clone());
        let out = arch.stage1_forward(cx, i)?;
        Ok(stage1_loss_fn(cx, j, i, out.raw, Some((&extractor, &cfg)))?.total)
    })
}

fn tsnet_end_to_end(rng: &mut ChaCha8Rng) -> Result<CheckReport> {
    let mut net = micro_model(rng, true)?;
    let (hazy, clean) = haze_pair(rng);
    let chosen = picks(&net.weights1, rng, 32);
    let arch = &net.arch;
    GradCheck::default().params(&mut net.weights1, &chosen, |cx| {
        let i = cx.constant(hazy.clone());
        let j = cx.constant(clean.clone());
        let s1 = arch.stage1_forward(cx, i)?;
        let (raw, _) = arch.stage2_forward(cx, s1.c)?;
        cx.smooth_l1(raw, j)
    })
}
