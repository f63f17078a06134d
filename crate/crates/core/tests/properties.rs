mod common;

use std::sync::OnceLock;

use common::{reference_psnr, reference_ssim, rng, uniform};
use proptest::prelude::*;
use tsnet::data::{recover_clean, synthesize_haze};
use tsnet::losses::{contrastive_loss, FrozenExtractor, LossConfig};
use tsnet::metrics::{psnr, ssim};
use tsnet::model::{Alm, Iffe, ModelConfig, Msfm, TsNet};
use tsnet::nn::{ChannelAttention, Ctx, DeformConv3x3, Mode, SkFusion, SpatialAttention};
use tsnet::optim::{cosine_lr, Schedule};
use tsnet::{Init, ParamStore, Tape, Tensor};

fn extractor() -> &'static FrozenExtractor<f64> {
    static EX: OnceLock<FrozenExtractor<f64>> = OnceLock::new();
    EX.get_or_init(|| FrozenExtractor::random(FrozenExtractor::<f64>::DEFAULT_SEED).unwrap())
}

fn extent() -> impl Strategy<Value = usize> {
    prop::sample::select(vec![16usize, 32, 64])
}

fn cfg() -> ProptestConfig {
    ProptestConfig {
        cases: 12,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(cfg())]

    #[test]
    fn blocks_preserve_shape(n in 1usize..=2, h in extent(), w in extent(), seed in 0u64..1000) {
        let mut store = ParamStore::<f64>::new();
        let mut r = rng(seed);
        let cfg = ModelConfig::micro();
        let (ca, sa, sk, dcn, iffe, msfm, alm) = {
            let mut i = Init::new(&mut store, &mut r);
            (
                ChannelAttention::new(&mut i, "ca", 8, 4).unwrap(),
                SpatialAttention::new(&mut i, "sa").unwrap(),
                SkFusion::new(&mut i, "sk", 8).unwrap(),
                DeformConv3x3::new(&mut i, "dcn", 8, 8).unwrap(),
                Iffe::new(&mut i, "iffe", 8, 4).unwrap(),
                Msfm::new(&mut i, "msfm", 8, &cfg).unwrap(),
                Alm::new(&mut i, "alm", 8, 4).unwrap(),
            )
        };
        let x = uniform([n, 8, h, w], -1.0, 1.0, &mut rng(seed + 1));
        let mut cx = Ctx::new(&mut store, Mode::Train);
        let v = cx.constant(x.clone());
        let outs = [
            ca.forward(&mut cx, v).unwrap(),
            sa.forward(&mut cx, v).unwrap(),
            sk.forward(&mut cx, v, v).unwrap(),
            dcn.forward(&mut cx, v).unwrap(),
            iffe.forward(&mut cx, v).unwrap(),
            msfm.forward(&mut cx, v).unwrap(),
            alm.forward(&mut cx, v).unwrap(),
        ];
        for o in outs {
            prop_assert_eq!(cx.shape(o), x.shape());
        }
    }

    #[test]
    fn model_preserves_shape(n in 1usize..=2, h in extent(), w in extent(), seed in 0u64..1000) {
        let mut net = TsNet::<f64>::new(&ModelConfig::micro(), seed).unwrap();
        let arch = net.arch.clone();
        let x = uniform([n, 3, h, w], -1.0, 1.0, &mut rng(seed));
        let mut cx = Ctx::new(&mut net.weights1, Mode::Train);
        let i = cx.constant(x.clone());
        let s1 = arch.stage1_forward(&mut cx, i).unwrap();
        prop_assert_eq!(cx.shape(s1.c), x.shape());
        let c = cx.value(s1.c).clone();
        drop(cx);
        let mut cx = Ctx::new(&mut net.weights2, Mode::Train);
        let cv = cx.constant(c);
        let (_, d) = arch.stage2_forward(&mut cx, cv).unwrap();
        prop_assert_eq!(cx.shape(d), x.shape());
        prop_assert!(cx.value(d).data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn contrastive_is_non_negative_and_linear_in_beta(seed in 0u64..10_000, beta in 0.01f64..2.0) {
        let mut r = rng(seed);
        let imgs: Vec<Tensor<f64>> = (0..3).map(|_| uniform([1, 3, 32, 32], -1.0, 1.0, &mut r)).collect();
        let eval = |beta: f64| {
            let mut t = Tape::new();
            let v: Vec<_> = imgs.iter().map(|x| t.constant(x.clone())).collect();
            let cfg = LossConfig { beta, ..LossConfig::default() };
            let l = contrastive_loss(&mut t, extractor(), &cfg, v[0], v[1], v[2]).unwrap();
            t.value(l).item()
        };
        let (a, b) = (eval(beta), eval(2.0 * beta));
        prop_assert!(a >= 0.0);
        prop_assert!((b - 2.0 * a).abs() <= 1e-12 * b.max(1.0));
    }

    #[test]
    fn contrastive_grows_as_restored_nears_hazy(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let clean = uniform([1, 3, 32, 32], 0.0, 1.0, &mut r);
        let hazy = clean.map(|v| 0.5 * v + 0.4);
        let mut last = f64::NEG_INFINITY;
        for k in 0..4 {
            let a = k as f64 / 4.0;
            let restored = Tensor::from_fn(clean.shape(), |n, c, y, x| {
                (1.0 - a) * clean.at(n, c, y, x) + a * hazy.at(n, c, y, x)
            });
            let mut t = Tape::new();
            let (rv, cv, hv) = (t.constant(restored), t.constant(clean.clone()), t.constant(hazy.clone()));
            let l = contrastive_loss(&mut t, extractor(), &LossConfig::default(), rv, cv, hv).unwrap();
            let l = t.value(l).item();
            prop_assert!(l > last, "{} then {}", last, l);
            last = l;
        }
    }

    #[test]
    fn metrics_agree_with_reference(seed in 0u64..10_000, h in 11usize..20, w in 11usize..20, amp in 0.0f64..0.5) {
        let mut r = rng(seed);
        let a = uniform([1, 3, h, w], 0.0, 1.0, &mut r);
        let noise = uniform([1, 3, h, w], -1.0, 1.0, &mut r);
        let b = Tensor::from_fn(a.shape(), |n, c, y, x| (a.at(n, c, y, x) + amp * noise.at(n, c, y, x)).clamp(0.0, 1.0));
        let s = ssim(&a, &b, 1.0).unwrap();
        prop_assert!(s <= 1.0 + 1e-12);
        prop_assert!((s - reference_ssim(&a, &b)).abs() <= 1e-6);
        prop_assert!((ssim(&a, &a, 1.0).unwrap() - 1.0).abs() <= 1e-9);
        if a.max_abs_diff(&b) > 0.0 {
            let p = psnr(&a, &b, 1.0).unwrap();
            prop_assert_eq!(p, psnr(&b, &a, 1.0).unwrap());
            prop_assert!((p - reference_psnr(&a, &b)).abs() <= 1e-6);
        }
    }

    #[test]
    fn haze_composition_invariants(seed in 0u64..10_000, a in 0.7f64..1.0) {
        let mut r = rng(seed);
        let j = uniform([1, 3, 8, 8], 0.0, 1.0, &mut r);
        let t = uniform([1, 1, 8, 8], 0.05, 1.0, &mut r);
        let atm = [a, a * 0.98, a * 0.96];
        let i = synthesize_haze(&j, atm, &t).unwrap();
        prop_assert!(i.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let back = recover_clean(&i, atm, &t);
        prop_assert!(back.max_abs_diff(&j) <= 1e-12);
        let ones = Tensor::full([1, 1, 8, 8], 1.0);
        let clear = synthesize_haze(&j, atm, &ones).unwrap();
        prop_assert_eq!(clear.data(), j.data());
    }

    #[test]
    fn cosine_schedule_is_monotone(total in 1u64..5000) {
        let s = Schedule::new(total);
        let mut prev = f64::INFINITY;
        for step in (0..=total).step_by((total as usize / 50).max(1)) {
            let lr = cosine_lr(step, &s);
            prop_assert!(lr <= prev && lr >= s.eta_min && lr <= s.eta_max);
            prev = lr;
        }
        prop_assert!((cosine_lr(total, &s) - s.eta_min).abs() < 1e-18);
    }
}
