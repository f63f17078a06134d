use std::path::PathBuf;
use std::process::Command;

/// Example binaries are built next to the test executable's `deps` directory.
fn example(name: &str) -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().join("examples").join(name)
}

fn run(name: &str, args: &[&str]) -> String {
    let path = example(name);
    assert!(path.exists(), "{} not built", path.display());
    let out = Command::new(&path)
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap();
    assert!(out.status.success(), "{name}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn quick_examples_run() {
    let dir = tempfile::tempdir().unwrap();
    let census = run("param_census", &[]);
    assert!(census.contains("TSNet-S"));
    let grad = run("autograd", &[]);
    assert!(grad.contains("central difference"));
    let haze = run("haze_synthesis", &[dir.path().to_str().unwrap()]);
    assert_eq!(haze.lines().count(), 5);
    assert!(dir.path().join("ramp_hazy.png").exists());
    assert!(run("blocks", &[]).contains("MSFM"));
    assert!(run("deformable_conv", &[]).contains("matches conv2d: true"));
    assert!(run("metrics", &[]).contains("identical      PSNR  100.00 dB  SSIM 1.0000"));
    let data = dir.path().join("data");
    assert!(run("build_dataset", &[data.to_str().unwrap()]).contains("test : 20 pairs"));
}

#[test]
fn gradcheck_example_reports_no_failures() {
    let out = run("gradcheck_suite", &[]);
    assert!(out.contains("0 failing"), "{out}");
}

#[test]
fn checkpoint_workflow_example() {
    let out = run("checkpoints", &["1"]);
    assert!(out.contains("stage-1 file unchanged: true"), "{out}");
    assert!(out.contains("dehazes to (1, 3, 45, 45)"));
}
