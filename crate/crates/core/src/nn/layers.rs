use crate::error::{Error, Result};
use crate::nn::{Ctx, Mode};
use crate::params::{Init, ParamId};
use crate::tape::{PaddingSpec, Var};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct ConvOpts {
    pub stride: usize,
    pub dilation: usize,
    pub groups: usize,
    pub bias: bool,
    /// Reflect (true) or zero (false) "same" padding.
    pub reflect: bool,
    /// Start from all-zero weights and bias.
    pub zero_init: bool,
}

impl Default for ConvOpts {
    fn default() -> Self {
        ConvOpts {
            stride: 1,
            dilation: 1,
            groups: 1,
            bias: true,
            reflect: true,
            zero_init: false,
        }
    }
}

impl ConvOpts {
    pub fn stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }

    pub fn dilation(mut self, d: usize) -> Self {
        self.dilation = d;
        self
    }

    pub fn groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }

    pub fn no_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn zero_pad(mut self) -> Self {
        self.reflect = false;
        self
    }

    pub fn zeroed(mut self) -> Self {
        self.zero_init = true;
        self
    }
}

/// Convolution with "same"-style padding `dilation * (k - 1) / 2`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub opts: ConvOpts,
}

impl Conv2d {
    pub fn new<T: Scalar>(
        init: &mut Init<'_, T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        opts: ConvOpts,
    ) -> Result<Self> {
        if cin % opts.groups != 0 || cout % opts.groups != 0 {
            return Err(Error::Config(format!(
                "{name}: channels {cin}->{cout} not divisible by groups {}",
                opts.groups
            )));
        }
        let mut s = init.scope(name);
        let fan_in = (cin / opts.groups) * kernel * kernel;
        let bound = if opts.zero_init {
            0.0
        } else {
            1.0 / (fan_in as f64).sqrt()
        };
        let wshape = [cout, cin / opts.groups, kernel, kernel];
        let weight = s.uniform("weight", wshape, bound)?;
        let bias = if opts.bias {
            Some(s.uniform("bias", [1, cout, 1, 1], bound)?)
        } else {
            None
        };
        Ok(Conv2d {
            weight,
            bias,
            in_channels: cin,
            out_channels: cout,
            kernel,
            opts,
        })
    }

    pub fn padding(&self) -> PaddingSpec {
        let p = self.opts.dilation * (self.kernel - 1) / 2;
        if self.opts.reflect {
            PaddingSpec::Reflect(p)
        } else {
            PaddingSpec::Zero(p)
        }
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let w = cx.p(self.weight);
        let b = self.bias.map(|b| cx.p(b));
        let pad = self.padding();
        cx.conv2d(x, w, b, self.opts.stride, pad, self.opts.dilation, self.opts.groups)
    }
}

/// Per-channel batch normalization with running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    /// Number of batches folded into the running statistics.
    pub tracked: ParamId,
    pub name: String,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm {
    pub const EPS: f64 = 1e-5;
    pub const MOMENTUM: f64 = 0.1;

    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, channels: usize) -> Result<Self> {
        let mut s = init.scope(name);
        Ok(BatchNorm {
            gamma: s.constant("weight", [1, channels, 1, 1], 1.0)?,
            beta: s.constant("bias", [1, channels, 1, 1], 0.0)?,
            running_mean: s.buffer("running_mean", [1, channels, 1, 1], 0.0)?,
            running_var: s.buffer("running_var", [1, channels, 1, 1], 1.0)?,
            tracked: s.buffer("num_batches_tracked", [1, 1, 1, 1], 0.0)?,
            name: name.to_string(),
            eps: Self::EPS,
            momentum: Self::MOMENTUM,
        })
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let gamma = cx.p(self.gamma);
        let beta = cx.p(self.beta);
        match cx.mode {
            Mode::Train => {
                let (y, m) = cx.tape.batch_norm_train(x, gamma, beta, self.eps)?;
                let mom = T::of(self.momentum);
                let keep = T::one() - mom;
                let unbiased = m.unbiased_var();
                let rm = cx.store.value_mut(self.running_mean).data_mut();
                rm.iter_mut().zip(&m.mean).for_each(|(r, &v)| *r = keep * *r + mom * v);
                let rv = cx.store.value_mut(self.running_var).data_mut();
                rv.iter_mut()
                    .zip(&unbiased)
                    .for_each(|(r, &v)| *r = keep * *r + mom * v);
                cx.store.value_mut(self.tracked).data_mut()[0] += T::one();
                Ok(y)
            }
            Mode::Eval => {
                if cx.store.value(self.tracked).item() <= T::zero() {
                    return Err(Error::UninitializedStats(self.name.clone()));
                }
                let mean = cx.store.value(self.running_mean).data().to_vec();
                let var = cx.store.value(self.running_var).data().to_vec();
                cx.tape.batch_norm_eval(x, gamma, beta, &mean, &var, self.eps)
            }
        }
    }
}

/// `k * F` with `k = sigmoid(theta)`, one scalar per skip site.
#[derive(Clone, Debug)]
pub struct LearnableSkip {
    pub theta: ParamId,
}

impl LearnableSkip {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, theta: f64) -> Result<Self> {
        Ok(LearnableSkip {
            theta: init.constant(name, [1, 1, 1, 1], theta)?,
        })
    }

    /// Current weight `k`.
    pub fn weight<T: Scalar>(&self, store: &crate::ParamStore<T>) -> T {
        crate::ops::elementwise::sigmoid(store.value(self.theta).item())
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let theta = cx.p(self.theta);
        let k = cx.sigmoid(theta)?;
        cx.mul(x, k)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Identity,
}

/// Pointwise two-layer perceptron: 1x1 conv, activation, 1x1 conv.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Conv2d,
    pub fc2: Conv2d,
    pub act: Activation,
}

impl Mlp {
    pub fn new<T: Scalar>(
        init: &mut Init<'_, T>,
        name: &str,
        cin: usize,
        hidden: usize,
        cout: usize,
        act: Activation,
    ) -> Result<Self> {
        let mut s = init.scope(name);
        Ok(Mlp {
            fc1: Conv2d::new(&mut s, "fc1", cin, hidden, 1, ConvOpts::default())?,
            fc2: Conv2d::new(&mut s, "fc2", hidden, cout, 1, ConvOpts::default())?,
            act,
        })
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let h = self.fc1.forward(cx, x)?;
        let h = match self.act {
            Activation::Gelu => cx.gelu(h)?,
            Activation::Identity => h,
        };
        self.fc2.forward(cx, h)
    }
}

/// Overwrite a stored tensor, keeping its shape.
pub(crate) fn set_value<T: Scalar>(store: &mut crate::ParamStore<T>, id: ParamId, value: Tensor<T>) -> Result<()> {
    if store.value(id).shape() != value.shape() {
        return Err(Error::shape(
            "set_value",
            format!("{} vs {}", store.value(id).shape(), value.shape()),
        ));
    }
    *store.value_mut(id) = value;
    Ok(())
}
