//! The building blocks on one feature map: output shapes, trainable sizes,
//! and the value each block starts from.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsnet::model::{Alm, Iffe, ModelConfig, Msfm, Msplck};
use tsnet::nn::{ChannelAttention, Ctx, DeformConv3x3, Mode, SkFusion, SpatialAttention};
use tsnet::{Init, ParamStore, Tensor, Var};

fn report(name: &str, store: &ParamStore<f64>, cx: &Ctx<'_, f64>, y: Var, x: &Tensor<f64>) {
    let prefix = format!("{}.", name.to_lowercase());
    let count: usize = store
        .iter()
        .filter(|(n, _, k)| n.starts_with(&prefix) && *k == tsnet::ParamKind::Trainable)
        .map(|(_, t, _)| t.numel())
        .sum();
    let out = cx.value(y);
    let rms = |t: &Tensor<f64>| (t.data().iter().map(|v| v * v).sum::<f64>() / t.numel() as f64).sqrt();
    println!(
        "{name:7} {} -> {}  {count:6} params  rms out/in {:.3}",
        x.shape(),
        out.shape(),
        rms(out) / rms(x)
    );
}

fn main() -> tsnet::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::from_fn([2, 16, 32, 32], |_, _, _, _| rng.gen_range(-1.0..1.0));
    let cfg = ModelConfig::tiny();
    let mut store = ParamStore::<f64>::new();
    let mut init_rng = ChaCha8Rng::seed_from_u64(1);
    let mut init = Init::new(&mut store, &mut init_rng);
    let ca = ChannelAttention::new(&mut init, "ca", 16, cfg.ca_reduction)?;
    let sa = SpatialAttention::new(&mut init, "sa")?;
    let sk = SkFusion::new(&mut init, "sk", 16)?;
    let dcn = DeformConv3x3::new(&mut init, "dcn", 16, 16)?;
    let msplck = Msplck::new(&mut init, "msplck", 16, &cfg.msplck_branches, cfg.msplck_context_kernel)?;
    let iffe = Iffe::new(&mut init, "iffe", 16, cfg.ca_reduction)?;
    let msfm = Msfm::new(&mut init, "msfm", 16, &cfg)?;
    let alm = Alm::new(&mut init, "alm", 16, cfg.ca_reduction)?;
    let names = store.clone();

    let mut cx = Ctx::new(&mut store, Mode::Train);
    let v = cx.constant(x.clone());
    let outs = [
        ("CA", ca.forward(&mut cx, v)?),
        ("SA", sa.forward(&mut cx, v)?),
        ("SK", sk.forward(&mut cx, v, v)?),
        ("DCN", dcn.forward(&mut cx, v)?),
        ("MSPLCK", msplck.forward(&mut cx, v)?),
        ("IFFE", iffe.forward(&mut cx, v)?),
        ("MSFM", msfm.forward(&mut cx, v)?),
        ("ALM", alm.forward(&mut cx, v)?),
    ];
    for (name, y) in outs {
        report(name, &names, &cx, y, &x);
    }
    for b in &cfg.msplck_branches {
        println!(
            "branch kernel {} dilation {} covers {}x{}",
            b.kernel,
            b.dilation,
            b.receptive_field(),
            b.receptive_field()
        );
    }
    Ok(())
}
