//! Parameter counts of the published variants and the ablation lattice.

use tsnet::model::{param_count, Ablation, ModelConfig, TsNet};

fn main() -> tsnet::Result<()> {
    for (name, cfg) in [
        ("TSNet-S", ModelConfig::tsnet_s()),
        ("TSNet-L", ModelConfig::tsnet_l()),
        ("tiny", ModelConfig::tiny()),
        ("micro", ModelConfig::micro()),
    ] {
        let net = TsNet::<f32>::new(&cfg, 0)?;
        let s1 = net.weights1.trainable_count();
        let s2 = net.weights2.trainable_count();
        println!("{name:8} stage1 {s1:>9} stage2 {s2:>9} total {:>9}", s1 + s2);
    }
    let base = ModelConfig::tsnet_s();
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
        println!("{name:8} {:>9}", param_count(&base.clone().with_ablation(ab))?);
    }
    Ok(())
}
