use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvOpts, Ctx};
use crate::params::Init;
use crate::tape::Var;
use crate::tensor::Scalar;

/// Squeeze-and-excitation gate: `sigmoid(W2 gelu(W1 GAP(x))) * x`.
#[derive(Clone, Debug)]
pub struct ChannelAttention {
    pub reduce: Conv2d,
    pub expand: Conv2d,
}

impl ChannelAttention {
    pub const DEFAULT_REDUCTION: usize = 8;

    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, channels: usize, reduction: usize) -> Result<Self> {
        if reduction == 0 || channels < reduction || channels % reduction != 0 {
            return Err(Error::Config(format!(
                "{name}: channel attention needs channels ({channels}) divisible by and >= reduction ({reduction})"
            )));
        }
        let hidden = channels / reduction;
        let mut s = init.scope(name);
        Ok(ChannelAttention {
            reduce: Conv2d::new(&mut s, "reduce", channels, hidden, 1, ConvOpts::default())?,
            expand: Conv2d::new(&mut s, "expand", hidden, channels, 1, ConvOpts::default())?,
        })
    }

    /// The `(N, C, 1, 1)` gate alone.
    pub fn gate<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let s = cx.global_avg_pool(x)?;
        let h = self.reduce.forward(cx, s)?;
        let h = cx.gelu(h)?;
        let g = self.expand.forward(cx, h)?;
        cx.sigmoid(g)
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let g = self.gate(cx, x)?;
        cx.mul(x, g)
    }
}

/// Spatial gate from the per-pixel channel mean and max maps.
#[derive(Clone, Debug)]
pub struct SpatialAttention {
    pub conv: Conv2d,
}

impl SpatialAttention {
    pub const KERNEL: usize = 7;

    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str) -> Result<Self> {
        let mut s = init.scope(name);
        Ok(SpatialAttention {
            conv: Conv2d::new(&mut s, "conv", 2, 1, Self::KERNEL, ConvOpts::default())?,
        })
    }

    /// The `(N, 1, H, W)` gate alone.
    pub fn gate<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let avg = cx.channel_mean(x)?;
        let max = cx.channel_max(x)?;
        let both = cx.concat(&[avg, max])?;
        let g = self.conv.forward(cx, both)?;
        cx.sigmoid(g)
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let g = self.gate(cx, x)?;
        cx.mul(x, g)
    }
}
