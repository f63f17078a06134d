//! Deformable sampling with hand-set offsets: zero offsets give the plain
//! convolution, integer offsets translate, half-pixel offsets interpolate.

use tsnet::nn::deform_conv_with_offsets;
use tsnet::{PaddingSpec, Tape, Tensor};

fn main() -> tsnet::Result<()> {
    let (h, w) = (6, 8);
    let img = Tensor::from_fn([1, 1, h, w], |_, _, y, x| (10 * y + x) as f64);
    // centre tap only, so each output reads one displaced sample
    let mut kernel = Tensor::zeros([1, 1, 3, 3]);
    kernel.set(0, 0, 1, 1, 1.0);
    let mut tape = Tape::new();
    let x = tape.constant(img.clone());
    let k = tape.constant(kernel);
    let plain = tape.conv2d(x, k, None, 1, PaddingSpec::Reflect(1), 1, 1)?;
    println!("input row 2: {:?}", row(&img, 2));

    for (label, dx) in [("zero offsets", 0.0), ("dx = +1", 1.0), ("dx = +0.5", 0.5)] {
        // channel 2k is the vertical offset of tap k, 2k+1 the horizontal
        let off = Tensor::from_fn([1, 18, h, w], |_, c, _, _| if c % 2 == 1 { dx } else { 0.0 });
        let o = tape.constant(off);
        let y = deform_conv_with_offsets(&mut tape, x, o, k, None)?;
        let out = tape.value(y).clone();
        println!("{label:13} row 2: {:?}", row(&out, 2));
        if dx == 0.0 {
            println!(
                "{:13} matches conv2d: {}",
                "",
                out.max_abs_diff(tape.value(plain)) == 0.0
            );
        }
    }
    Ok(())
}

fn row(t: &Tensor<f64>, y: usize) -> Vec<f64> {
    (0..t.shape().w).map(|x| t.at(0, 0, y, x)).collect()
}
