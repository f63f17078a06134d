use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvOpts, Ctx};
use crate::params::Init;
use crate::tape::Var;
use crate::tensor::{Scalar, Tensor};

/// Selective-kernel fusion of two equally shaped branches. Per-channel
/// softmax weights over the two branches come from a bottleneck MLP on the
/// pooled sum.
#[derive(Clone, Debug)]
pub struct SkFusion {
    pub fc1: Conv2d,
    pub fc2: Conv2d,
    pub channels: usize,
}

impl SkFusion {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, channels: usize) -> Result<Self> {
        let hidden = (channels / 8).max(4);
        let mut s = init.scope(name);
        Ok(SkFusion {
            fc1: Conv2d::new(&mut s, "fc1", channels, hidden, 1, ConvOpts::default().no_bias())?,
            fc2: Conv2d::new(&mut s, "fc2", hidden, 2 * channels, 1, ConvOpts::default().no_bias())?,
            channels,
        })
    }

    /// Branch weights `(w_a, w_b)`, each `(N, C, 1, 1)`, summing to one.
    pub fn weights<T: Scalar>(&self, cx: &mut Ctx<'_, T>, a: Var, b: Var) -> Result<(Var, Var)> {
        if cx.shape(a) != cx.shape(b) {
            return Err(Error::Broadcast {
                op: "sk_fusion",
                lhs: cx.shape(a),
                rhs: cx.shape(b),
            });
        }
        let sum = cx.add(a, b)?;
        let s = cx.global_avg_pool(sum)?;
        let h = self.fc1.forward(cx, s)?;
        let h = cx.gelu(h)?;
        let logits = self.fc2.forward(cx, h)?;
        let la = cx.slice_channels(logits, 0, self.channels)?;
        let lb = cx.slice_channels(logits, self.channels, self.channels)?;
        // two-way softmax: exp(la) / (exp(la) + exp(lb)) = sigmoid(la - lb)
        let diff = cx.sub(la, lb)?;
        let wa = cx.sigmoid(diff)?;
        let neg = cx.scalar_mul(wa, -1.0)?;
        let wb = cx.add_scalar(neg, 1.0)?;
        Ok((wa, wb))
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, a: Var, b: Var) -> Result<Var> {
        let (wa, wb) = self.weights(cx, a, b)?;
        let pa = cx.mul(a, wa)?;
        let pb = cx.mul(b, wb)?;
        cx.add(pa, pb)
    }
}

/// Output head predicting `(K, B)` so that the restored image is
/// `K * I + B`. Returns the residual `b = (K - 1) * I + B` to be added to
/// the input.
#[derive(Clone, Debug)]
pub struct SoftReconstruction {
    pub conv: Conv2d,
}

impl SoftReconstruction {
    /// Zero weights with K-bias 1: the head starts as the identity restorer.
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, channels: usize) -> Result<Self> {
        let mut s = init.scope(name);
        let conv = Conv2d::new(&mut s, "conv", channels, 4, 3, ConvOpts::default().zeroed())?;
        let bias = conv.bias.expect("head has bias");
        drop(s);
        let mut b = Tensor::<T>::zeros([1, 4, 1, 1]);
        b.data_mut()[0] = T::one();
        super::layers::set_value(init.store_mut(), bias, b)?;
        Ok(SoftReconstruction { conv })
    }

    /// Split precomputed `(K, B)` maps into the residual.
    pub fn residual<T: Scalar>(cx: &mut Ctx<'_, T>, kb: Var, image: Var) -> Result<Var> {
        let s = cx.shape(kb);
        if s.c != 4 {
            return Err(Error::shape(
                "soft_reconstruction",
                format!("expected 4 channels, got {}", s.c),
            ));
        }
        let k = cx.slice_channels(kb, 0, 1)?;
        let b = cx.slice_channels(kb, 1, 3)?;
        let km1 = cx.add_scalar(k, -1.0)?;
        let scaled = cx.mul(image, km1)?;
        cx.add(scaled, b)
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, features: Var, image: Var) -> Result<Var> {
        let kb = self.conv.forward(cx, features)?;
        Self::residual(cx, kb, image)
    }
}

/// Stride-2 3x3 convolution halving the spatial size.
#[derive(Clone, Debug)]
pub struct Downsample {
    pub conv: Conv2d,
}

impl Downsample {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, cin: usize, cout: usize) -> Result<Self> {
        Ok(Downsample {
            conv: Conv2d::new(init, name, cin, cout, 3, ConvOpts::default().stride(2))?,
        })
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let s = cx.shape(x);
        if s.h % 2 != 0 || s.w % 2 != 0 {
            return Err(Error::shape("downsample", format!("odd spatial extent in {s}")));
        }
        self.conv.forward(cx, x)
    }
}

/// Pointwise projection to `4 * cout` channels then depth-to-space by 2.
#[derive(Clone, Debug)]
pub struct Upsample {
    pub conv: Conv2d,
}

impl Upsample {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, cin: usize, cout: usize) -> Result<Self> {
        Ok(Upsample {
            conv: Conv2d::new(init, name, cin, 4 * cout, 1, ConvOpts::default())?,
        })
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(cx, x)?;
        cx.pixel_shuffle(y, 2)
    }
}
