mod common;

use common::{close, rng, uniform};
use rand_chacha::ChaCha8Rng;
use tsnet::model::{Alm, Iffe, ModelConfig, Msfm, Msplck};
use tsnet::nn::{
    deform_conv_with_offsets, Activation, ChannelAttention, Conv2d, ConvOpts, Ctx, DeformConv3x3, Downsample,
    LearnableSkip, Mlp, Mode, SkFusion, SoftReconstruction, SpatialAttention, Upsample,
};
use tsnet::{Init, PaddingSpec, ParamKind, ParamStore, Tape, Tensor};

fn build<B>(seed: u64, f: impl FnOnce(&mut Init<'_, f64>) -> tsnet::Result<B>) -> (B, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let mut r: ChaCha8Rng = rng(seed);
    let b = f(&mut Init::new(&mut store, &mut r)).unwrap();
    (b, store)
}

/// Zero every trainable tensor whose name contains one of `parts`.
fn zero(store: &mut ParamStore<f64>, parts: &[&str]) {
    let ids: Vec<_> = store.ids_of_kind(ParamKind::Trainable).collect();
    for id in ids {
        if parts.iter().any(|p| store.name(id).contains(p)) {
            let s = store.value(id).shape();
            *store.value_mut(id) = Tensor::zeros(s);
        }
    }
}

fn run(
    store: &mut ParamStore<f64>,
    x: &Tensor<f64>,
    f: impl FnOnce(&mut Ctx<'_, f64>, tsnet::Var) -> tsnet::Result<tsnet::Var>,
) -> Tensor<f64> {
    let mut cx = Ctx::new(store, Mode::Train);
    let v = cx.constant(x.clone());
    let y = f(&mut cx, v).unwrap();
    cx.value(y).clone()
}

#[test]
fn channel_attention_zero_weights_halve_input() {
    let (ca, mut st) = build(1, |i| ChannelAttention::new(i, "ca", 16, 8));
    let x = uniform([2, 16, 5, 5], -2.0, 2.0, &mut rng(2));
    let y = run(&mut st.clone(), &x, |cx, v| ca.forward(cx, v));
    assert_eq!(y.shape(), x.shape());
    let g = run(&mut st.clone(), &x, |cx, v| ca.gate(cx, v));
    assert!(g.data().iter().all(|&v| v > 0.0 && v < 1.0));
    zero(&mut st, &["ca."]);
    let y = run(&mut st, &x, |cx, v| ca.forward(cx, v));
    assert!(close(&y, &x.map(|v| 0.5 * v), 1e-15));
}

#[test]
fn channel_attention_needs_enough_channels() {
    let mut store = ParamStore::<f64>::new();
    let mut r = rng(0);
    assert!(ChannelAttention::new(&mut Init::new(&mut store, &mut r), "ca", 4, 8).is_err());
}

#[test]
fn spatial_attention_zero_weights_and_constant_input() {
    let (sa, mut st) = build(3, |i| SpatialAttention::new(i, "sa"));
    let c = Tensor::from_fn([1, 4, 9, 9], |_, ch, _, _| ch as f64 * 0.3 - 0.4);
    let g = run(&mut st.clone(), &c, |cx, v| sa.gate(cx, v));
    let g0 = g.data()[0];
    // reflect padding keeps a constant field constant
    assert!(g.data().iter().all(|&v| (v - g0).abs() < 1e-12));
    let x = uniform([2, 4, 6, 7], -1.0, 1.0, &mut rng(4));
    zero(&mut st, &["sa."]);
    let y = run(&mut st, &x, |cx, v| sa.forward(cx, v));
    assert!(close(&y, &x.map(|v| 0.5 * v), 1e-15));
}

#[test]
fn learnable_skip_values() {
    let (skip, mut st) = build(0, |i| LearnableSkip::new(i, "k", 0.0));
    let x = Tensor::from_vec([1, 1, 1, 2], vec![2.0, 4.0]).unwrap();
    assert_eq!(
        run(&mut st.clone(), &x, |cx, v| skip.forward(cx, v)).data(),
        &[1.0, 2.0]
    );
    for (theta, expect) in [(40.0, 1.0), (-40.0, 0.0)] {
        *st.value_mut(skip.theta) = Tensor::scalar(theta);
        let k = skip.weight(&st);
        assert!(k >= 0.0 && k <= 1.0 && (k - expect).abs() < 1e-12);
        let y = run(&mut st, &x, |cx, v| skip.forward(cx, v));
        assert!(close(&y, &x.map(|v| v * expect), 1e-12));
    }
}

#[test]
fn sk_fusion_is_convex() {
    let (sk, mut st) = build(5, |i| SkFusion::new(i, "sk", 8));
    let mut r = rng(6);
    let a = uniform([2, 8, 4, 4], -1.0, 1.0, &mut r);
    let b = uniform([2, 8, 4, 4], -1.0, 1.0, &mut r);
    let mut cx = Ctx::new(&mut st, Mode::Train);
    let (av, bv) = (cx.constant(a.clone()), cx.constant(b.clone()));
    let (wa, wb) = sk.weights(&mut cx, av, bv).unwrap();
    let sum: Vec<f64> = cx
        .value(wa)
        .data()
        .iter()
        .zip(cx.value(wb).data())
        .map(|(x, y)| x + y)
        .collect();
    assert!(sum.iter().all(|s| (s - 1.0).abs() < 1e-12));
    let same = sk.forward(&mut cx, av, av).unwrap();
    assert!(close(cx.value(same), &a, 1e-12));
    drop(cx);
    zero(&mut st, &["sk."]);
    let mut cx = Ctx::new(&mut st, Mode::Train);
    let (av, bv) = (cx.constant(a.clone()), cx.constant(b.clone()));
    let y = sk.forward(&mut cx, av, bv).unwrap();
    let mid = Tensor::from_fn(a.shape(), |n, c, i, j| 0.5 * (a.at(n, c, i, j) + b.at(n, c, i, j)));
    assert!(close(cx.value(y), &mid, 1e-12));
    let other = cx.constant(Tensor::zeros([2, 8, 4, 5]));
    assert!(sk.forward(&mut cx, av, other).is_err());
}

#[test]
fn soft_reconstruction_identities() {
    let mut r = rng(7);
    let image = uniform([2, 3, 4, 4], -1.0, 1.0, &mut r);
    let (_head, mut st) = build(0, |i| SoftReconstruction::new(i, "head", 4));
    let kb = |k: &Tensor<f64>, b: &Tensor<f64>| {
        Tensor::from_fn([2, 4, 4, 4], |n, c, i, j| {
            if c == 0 {
                k.at(n, 0, i, j)
            } else {
                b.at(n, c - 1, i, j)
            }
        })
    };
    let eval = |st: &mut ParamStore<f64>, kbt: Tensor<f64>| {
        let mut cx = Ctx::new(st, Mode::Train);
        let (kv, iv) = (cx.constant(kbt), cx.constant(image.clone()));
        let res = SoftReconstruction::residual(&mut cx, kv, iv).unwrap();
        cx.value(res).clone()
    };
    let ones = Tensor::full([2, 1, 4, 4], 1.0);
    let zeros3 = Tensor::zeros([2, 3, 4, 4]);
    assert!(eval(&mut st, kb(&ones, &zeros3)).data().iter().all(|&v| v == 0.0));
    let j = uniform([2, 3, 4, 4], -1.0, 1.0, &mut r);
    let b = eval(&mut st, kb(&Tensor::zeros([2, 1, 4, 4]), &j));
    let restored = Tensor::from_fn(image.shape(), |n, c, y, x| image.at(n, c, y, x) + b.at(n, c, y, x));
    assert!(close(&restored, &j, 1e-15));
    let k = uniform([2, 1, 4, 4], -1.0, 2.0, &mut r);
    let bb = uniform([2, 3, 4, 4], -1.0, 1.0, &mut r);
    let res = eval(&mut st, kb(&k, &bb));
    let lhs = Tensor::from_fn(image.shape(), |n, c, y, x| image.at(n, c, y, x) + res.at(n, c, y, x));
    let rhs = Tensor::from_fn(image.shape(), |n, c, y, x| {
        k.at(n, 0, y, x) * image.at(n, c, y, x) + bb.at(n, c, y, x)
    });
    assert!(close(&lhs, &rhs, 1e-12));
}

#[test]
fn soft_reconstruction_starts_as_identity() {
    let (head, mut st) = build(8, |i| SoftReconstruction::new(i, "head", 6));
    let mut r = rng(9);
    let feats = uniform([1, 6, 4, 4], -1.0, 1.0, &mut r);
    let image = uniform([1, 3, 4, 4], -1.0, 1.0, &mut r);
    let mut cx = Ctx::new(&mut st, Mode::Train);
    let (f, i) = (cx.constant(feats), cx.constant(image));
    let b = head.forward(&mut cx, f, i).unwrap();
    assert!(cx.value(b).data().iter().all(|&v| v == 0.0));
}

#[test]
fn down_and_up_shape_laws() {
    let (layers, mut st) = build(10, |i| {
        Ok((Downsample::new(i, "down", 24, 48)?, Upsample::new(i, "up", 48, 24)?))
    });
    let x = uniform([1, 24, 64, 64], -1.0, 1.0, &mut rng(11));
    let mut cx = Ctx::new(&mut st, Mode::Train);
    let v = cx.constant(x);
    let d = layers.0.forward(&mut cx, v).unwrap();
    assert_eq!(cx.shape(d).dims(), [1, 48, 32, 32]);
    let u = layers.1.forward(&mut cx, d).unwrap();
    assert_eq!(cx.shape(u).dims(), [1, 24, 64, 64]);
    let odd = cx.constant(Tensor::zeros([1, 24, 7, 8]));
    assert!(layers.0.forward(&mut cx, odd).is_err());
    let c = cx.constant(Tensor::full([1, 8, 3, 3], 0.25));
    let shuffled = cx.pixel_shuffle(c, 2).unwrap();
    assert!(cx.value(shuffled).data().iter().all(|&v| v == 0.25));
}

#[test]
fn mlp_zero_and_identity() {
    let (mlp, mut st) = build(12, |i| Mlp::new(i, "mlp", 4, 4, 4, Activation::Identity));
    let x = uniform([1, 4, 3, 3], -1.0, 1.0, &mut rng(13));
    let eye = Tensor::from_fn([4, 4, 1, 1], |o, i, _, _| if o == i { 1.0 } else { 0.0 });
    for conv in [&mlp.fc1, &mlp.fc2] {
        *st.value_mut(conv.weight) = eye.clone();
        *st.value_mut(conv.bias.unwrap()) = Tensor::zeros([1, 4, 1, 1]);
    }
    assert!(close(&run(&mut st.clone(), &x, |cx, v| mlp.forward(cx, v)), &x, 1e-15));
    zero(&mut st, &["mlp."]);
    assert!(run(&mut st, &x, |cx, v| mlp.forward(cx, v))
        .data()
        .iter()
        .all(|&v| v == 0.0));
}

#[test]
fn deform_conv_zero_offsets_match_conv() {
    let (dcn, mut st) = build(14, |i| DeformConv3x3::new(i, "dcn", 3, 5));
    assert_eq!(dcn.offset.out_channels, 18);
    let mut r = rng(15);
    for _ in 0..10 {
        let x = uniform([2, 3, 6, 7], -1.0, 1.0, &mut r);
        let y = run(&mut st, &x, |cx, v| dcn.forward(cx, v));
        let mut t = Tape::new();
        let xv = t.constant(x);
        let w = t.constant(st.value(dcn.weight).clone());
        let b = t.constant(st.value(dcn.bias).clone());
        let reference = t.conv2d(xv, w, Some(b), 1, PaddingSpec::Reflect(1), 1, 1).unwrap();
        assert!(close(&y, t.value(reference), 1e-12));
    }
    let tiny = Tensor::zeros([1, 3, 1, 4]);
    let mut cx = Ctx::new(&mut st, Mode::Train);
    let v = cx.constant(tiny);
    assert!(dcn.forward(&mut cx, v).is_err());
}

#[test]
fn deform_conv_constant_field_ignores_interior_offsets() {
    let mut r = rng(16);
    let x = Tensor::from_fn([1, 2, 8, 8], |_, c, _, _| 0.3 + c as f64);
    let w = uniform([4, 2, 3, 3], -1.0, 1.0, &mut r);
    let off = uniform([1, 18, 8, 8], -0.45, 0.45, &mut r);
    let mut t = Tape::new();
    let (xv, wv, ov) = (t.constant(x), t.constant(w), t.constant(off));
    let y = deform_conv_with_offsets(&mut t, xv, ov, wv, None).unwrap();
    let z = t.constant(Tensor::zeros([1, 18, 8, 8]));
    let y0 = deform_conv_with_offsets(&mut t, xv, z, wv, None).unwrap();
    // border outputs can sample past the padded field, so compare the interior
    let (a, b) = (t.value(y), t.value(y0));
    for o in 0..4 {
        for i in 1..7 {
            for j in 1..7 {
                assert!((a.at(0, o, i, j) - b.at(0, o, i, j)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn msplck_concat_and_nested_receptive_fields() {
    let branches = ModelConfig::tsnet_s().msplck_branches;
    let (m, mut st) = build(17, |i| Msplck::new(i, "m", 4, &branches, 0));
    let x = uniform([1, 4, 16, 16], -1.0, 1.0, &mut rng(18));
    let y = run(&mut st, &x, |cx, v| m.forward(cx, v));
    assert_eq!(y.shape().dims(), [1, 12, 16, 16]);

    let mut extents = Vec::new();
    for (bi, b) in m.branches.iter().enumerate() {
        let n = 31;
        let mut imp = Tensor::zeros([1, 4, n, n]);
        imp.set(0, 0, 15, 15, 1.0);
        let mut s = st.clone();
        *s.value_mut(b.weight) = Tensor::full(s.value(b.weight).shape(), 1.0);
        *s.value_mut(b.bias.unwrap()) = Tensor::zeros([1, 4, 1, 1]);
        let out = run(&mut s, &imp, |cx, v| b.forward(cx, v));
        let rows: Vec<usize> = (0..n).filter(|&i| out.at(0, 0, i, 15) != 0.0).collect();
        let extent = rows.last().unwrap() - rows.first().unwrap() + 1;
        assert_eq!(extent, branches[bi].receptive_field());
        extents.push(extent);
    }
    assert!(extents.windows(2).all(|w| w[0] < w[1]), "{extents:?}");
}

#[test]
fn iffe_identity_kernels_triple_input() {
    let (iffe, mut st) = build(19, |i| Iffe::new(i, "iffe", 8, 8));
    let eye = Tensor::from_fn(
        [8, 8, 3, 3],
        |o, i, y, x| if o == i && y == 1 && x == 1 { 1.0 } else { 0.0 },
    );
    for c in &iffe.convs {
        *st.value_mut(c.weight) = eye.clone();
        *st.value_mut(c.bias.unwrap()) = Tensor::zeros([1, 8, 1, 1]);
    }
    let x = uniform([2, 8, 6, 6], -1.0, 1.0, &mut rng(20));
    let i1 = run(&mut st.clone(), &x, |cx, v| iffe.chain(cx, v));
    assert!(close(&i1, &x.map(|v| 3.0 * v), 1e-12));
    assert_eq!(iffe.fuse.in_channels, 16);
    let o = run(&mut st, &x, |cx, v| iffe.forward(cx, v));
    assert_eq!(o.shape(), x.shape());
}

#[test]
fn msfm_zero_weight_reduction() {
    let cfg = ModelConfig::micro();
    let (m, mut st) = build(21, |i| Msfm::new(i, "msfm", 8, &cfg));
    let x = uniform([2, 8, 8, 8], -1.0, 1.0, &mut rng(22));
    zero(&mut st, &["proj1", "proj2", "msplck", "mlp", "iffe."]);
    let mut cx = Ctx::new(&mut st, Mode::Train);
    let v = cx.constant(x.clone());
    let tr = m.trace(&mut cx, v).unwrap();
    assert!(close(cx.value(tr.fb), &x.map(|v| 0.5 * v), 1e-15));
    assert!(close(cx.value(tr.inner), &x.map(|v| 0.25 * v), 1e-15));
    assert_eq!(cx.shape(tr.out), x.shape());
}

#[test]
fn msfm_every_parameter_gets_gradient() {
    let cfg = ModelConfig::micro();
    let (m, mut st) = build(23, |i| Msfm::new(i, "msfm", 8, &cfg));
    let x = uniform([2, 8, 8, 8], -1.0, 1.0, &mut rng(24));
    let mut cx = Ctx::new(&mut st, Mode::Train);
    let v = cx.constant(x);
    let y = m.forward(&mut cx, v).unwrap();
    let sq = cx.mul(y, y).unwrap();
    let l = cx.sum(sq).unwrap();
    let g = cx.tape.backward(l).unwrap();
    drop(cx);
    g.accumulate_into(&mut st);
    for id in st.ids_of_kind(ParamKind::Trainable).collect::<Vec<_>>() {
        let norm: f64 = st.grad(id).map_or(0.0, |g| g.data().iter().map(|v| v * v).sum());
        assert!(norm > 0.0, "{} has no gradient", st.name(id));
    }
}

#[test]
fn alm_zero_offsets_and_offset_gradients() {
    let (alm, mut st) = build(25, |i| Alm::new(i, "alm", 8, 4));
    let x = uniform([1, 8, 6, 6], -1.0, 1.0, &mut rng(26));
    let y = run(&mut st.clone(), &x, |cx, v| alm.forward(cx, v));
    let conv = Conv2d {
        weight: alm.dcn.weight,
        bias: Some(alm.dcn.bias),
        in_channels: 8,
        out_channels: 8,
        kernel: 3,
        opts: ConvOpts::default(),
    };
    let reference = run(&mut st.clone(), &x, |cx, v| {
        let c = conv.forward(cx, v)?;
        let a = alm.ca.forward(cx, c)?;
        let k = alm.skip.forward(cx, v)?;
        cx.add(a, k)
    });
    assert!(close(&y, &reference, 1e-12));
    assert_eq!(y.shape(), x.shape());

    let mut cx = Ctx::new(&mut st, Mode::Train);
    let v = cx.constant(x);
    let y = alm.forward(&mut cx, v).unwrap();
    let sq = cx.mul(y, y).unwrap();
    let l = cx.sum(sq).unwrap();
    let g = cx.tape.backward(l).unwrap();
    drop(cx);
    g.accumulate_into(&mut st);
    let gw = st.grad(alm.dcn.offset.weight).unwrap();
    assert!(gw.data().iter().any(|&v| v != 0.0));
}
