//! Reverse-mode differentiation on the tape, checked against a central
//! difference for one input entry.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsnet::{PaddingSpec, Tape, Tensor};

fn loss(tape: &mut Tape<f64>, x: &Tensor<f64>, w: &Tensor<f64>) -> tsnet::Result<(tsnet::Var, tsnet::Var)> {
    let xv = tape.leaf(x.clone(), true);
    let wv = tape.constant(w.clone());
    let y = tape.conv2d(xv, wv, None, 1, PaddingSpec::Reflect(1), 1, 1)?;
    let y = tape.gelu(y)?;
    let pooled = tape.global_avg_pool(y)?;
    let g = tape.sigmoid(pooled)?;
    let gated = tape.mul(y, g)?;
    Ok((xv, tape.mean(gated)?))
}

fn main() -> tsnet::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::from_fn([1, 2, 6, 6], |_, _, _, _| rng.gen_range(-1.0..1.0));
    let w = Tensor::from_fn([3, 2, 3, 3], |_, _, _, _| rng.gen_range(-0.5..0.5));

    let mut tape = Tape::new();
    let (xv, l) = loss(&mut tape, &x, &w)?;
    println!("{} nodes on the tape, loss {:.6}", tape.len(), tape.value(l).item());
    let grads = tape.backward(l)?;
    let gx = grads.get(xv).expect("input requires grad");

    let (k, eps) = (17, 1e-5);
    let f = |delta: f64| -> tsnet::Result<f64> {
        let mut xp = x.clone();
        xp.data_mut()[k] += delta;
        let mut t = Tape::new();
        let (_, l) = loss(&mut t, &xp, &w)?;
        Ok(t.value(l).item())
    };
    let numeric = (f(eps)? - f(-eps)?) / (2.0 * eps);
    println!(
        "d loss / d x[{k}]: analytic {:.9}, central difference {numeric:.9}",
        gx.data()[k]
    );
    Ok(())
}
