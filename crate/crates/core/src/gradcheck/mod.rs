//! Central finite-difference verification of reverse-mode gradients.
//!
//! The scalar objective is `sum(w * f(inputs))` with a fixed pseudo-random
//! projection `w`. A plain sum would hide errors in operators whose outputs
//! sum to a constant (batch normalization, softmax-style gates).

pub mod suite;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Ctx, Mode};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Outcome of one finite-difference comparison.
#[derive(Clone, Debug)]
pub struct CheckReport {
    pub max_rel_error: f64,
    /// `(input index, element index)` of the worst element.
    pub worst: (usize, usize),
    pub checked: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    /// Relative step; the absolute step is `eps * max(1, |x|)`.
    pub eps: f64,
    /// Magnitude below which errors are measured absolutely.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            eps: 1e-4,
            floor: 1e-6,
            seed: 0x5eed,
        }
    }
}

fn projection(shape: crate::Shape, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
}

fn project(tape: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var> {
    if tape.shape(out).numel() == 1 {
        return Ok(out);
    }
    let w = tape.constant(projection(tape.shape(out), seed));
    let prod = tape.mul(out, w)?;
    tape.sum(prod)
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

impl GradCheck {
    pub fn rel_error(&self, analytic: f64, numeric: f64) -> f64 {
        (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(self.floor)
    }

    /// Check `f` with respect to every element of every input tensor.
    pub fn inputs<F>(&self, inputs: &[Tensor<f64>], f: F) -> Result<CheckReport>
    where
        F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
    {
        let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
            let mut tape = Tape::new();
            let vars: Vec<Var> = vals.iter().map(|v| tape.constant(v.clone())).collect();
            let out = f(&mut tape, &vars)?;
            let loss = project(&mut tape, out, self.seed)?;
            finite(tape.value(loss).item(), "objective")
        };

        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|v| tape.leaf(v.clone(), true)).collect();
        let out = f(&mut tape, &vars)?;
        let loss = project(&mut tape, out, self.seed)?;
        let grads = tape.backward(loss)?;

        let mut report = CheckReport {
            max_rel_error: 0.0,
            worst: (0, 0),
            checked: 0,
        };
        let mut work = inputs.to_vec();
        for (ti, var) in vars.iter().enumerate() {
            let zero = Tensor::zeros(inputs[ti].shape());
            let analytic = grads.get(*var).unwrap_or(&zero);
            for j in 0..inputs[ti].numel() {
                let x = inputs[ti].data()[j];
                let h = self.eps * x.abs().max(1.0);
                work[ti].data_mut()[j] = x + h;
                let up = eval(&work)?;
                work[ti].data_mut()[j] = x - h;
                let down = eval(&work)?;
                work[ti].data_mut()[j] = x;
                let numeric = (up - down) / (2.0 * h);
                let a = finite(analytic.data()[j], "analytic gradient")?;
                let e = self.rel_error(a, numeric);
                if e > report.max_rel_error {
                    report.max_rel_error = e;
                    report.worst = (ti, j);
                }
                report.checked += 1;
            }
        }
        Ok(report)
    }

    /// Check `f` with respect to selected scalar entries of stored parameters.
    /// Each evaluation runs on a fresh training-mode context.
    pub fn params<F>(&self, store: &mut ParamStore<f64>, picks: &[(ParamId, usize)], mut f: F) -> Result<CheckReport>
    where
        F: FnMut(&mut Ctx<'_, f64>) -> Result<Var>,
    {
        let eval = |store: &mut ParamStore<f64>, f: &mut F| -> Result<f64> {
            let mut cx = Ctx::new(store, Mode::Train);
            let out = f(&mut cx)?;
            let loss = project(&mut cx.tape, out, self.seed)?;
            finite(cx.value(loss).item(), "objective")
        };

        let grads = {
            let mut cx = Ctx::new(store, Mode::Train);
            let out = f(&mut cx)?;
            let loss = project(&mut cx.tape, out, self.seed)?;
            cx.tape.backward(loss)?
        };
        let lookup = |id: ParamId| grads.params().iter().find(|(p, _)| *p == id).map(|(_, g)| g);

        let mut report = CheckReport {
            max_rel_error: 0.0,
            worst: (0, 0),
            checked: 0,
        };
        for (k, &(id, j)) in picks.iter().enumerate() {
            let a = lookup(id).map(|g| g.data()[j]).unwrap_or(0.0);
            let x = store.value(id).data()[j];
            let h = self.eps * x.abs().max(1.0);
            store.value_mut(id).data_mut()[j] = x + h;
            let up = eval(store, &mut f)?;
            store.value_mut(id).data_mut()[j] = x - h;
            let down = eval(store, &mut f)?;
            store.value_mut(id).data_mut()[j] = x;
            let numeric = (up - down) / (2.0 * h);
            let e = self.rel_error(finite(a, "analytic gradient")?, numeric);
            if e > report.max_rel_error {
                report.max_rel_error = e;
                report.worst = (k, j);
            }
            report.checked += 1;
        }
        Ok(report)
    }
}
