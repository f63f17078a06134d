use crate::error::Result;
use crate::nn::{
    Activation, BatchNorm, ChannelAttention, Conv2d, ConvOpts, Ctx, DeformConv3x3, LearnableSkip, Mlp, SpatialAttention,
};
use crate::params::Init;
use crate::tape::Var;
use crate::tensor::Scalar;

use super::config::{Branch, ModelConfig};

/// Multi-scale parallel large-kernel convolution: an optional dense context
/// conv followed by parallel depthwise dilated branches, concatenated.
#[derive(Clone, Debug)]
pub struct Msplck {
    pub context: Option<Conv2d>,
    pub branches: Vec<Conv2d>,
}

impl Msplck {
    pub fn new<T: Scalar>(
        init: &mut Init<'_, T>,
        name: &str,
        channels: usize,
        branches: &[Branch],
        context_kernel: usize,
    ) -> Result<Self> {
        let mut s = init.scope(name);
        let context = if context_kernel > 0 {
            Some(Conv2d::new(
                &mut s,
                "context",
                channels,
                channels,
                context_kernel,
                ConvOpts::default(),
            )?)
        } else {
            None
        };
        let branches = branches
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let opts = ConvOpts::default().groups(channels).dilation(b.dilation);
                Conv2d::new(&mut s, &format!("branch{i}"), channels, channels, b.kernel, opts)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Msplck { context, branches })
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let x = match &self.context {
            Some(c) => c.forward(cx, x)?,
            None => x,
        };
        let outs = self
            .branches
            .iter()
            .map(|b| b.forward(cx, x))
            .collect::<Result<Vec<_>>>()?;
        cx.concat(&outs)
    }
}

/// Three chained 3x3 convs summed, channel and spatial attention in
/// parallel, then a pointwise fuse with a weighted input skip.
#[derive(Clone, Debug)]
pub struct Iffe {
    pub convs: [Conv2d; 3],
    pub ca: ChannelAttention,
    pub sa: SpatialAttention,
    pub fuse: Conv2d,
    pub skip: LearnableSkip,
}

impl Iffe {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, channels: usize, reduction: usize) -> Result<Self> {
        let mut s = init.scope(name);
        let mut conv = |n: &str| Conv2d::new(&mut s, n, channels, channels, 3, ConvOpts::default());
        let convs = [conv("c1")?, conv("c2")?, conv("c3")?];
        Ok(Iffe {
            convs,
            ca: ChannelAttention::new(&mut s, "ca", channels, reduction)?,
            sa: SpatialAttention::new(&mut s, "sa")?,
            fuse: Conv2d::new(&mut s, "fuse", 2 * channels, channels, 1, ConvOpts::default())?,
            skip: LearnableSkip::new(&mut s, "skip", 0.0)?,
        })
    }

    /// `I1 = c1(I) + c2(c1(I)) + c3(c2(c1(I)))`.
    pub fn chain<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let a = self.convs[0].forward(cx, x)?;
        let b = self.convs[1].forward(cx, a)?;
        let c = self.convs[2].forward(cx, b)?;
        let ab = cx.add(a, b)?;
        cx.add(ab, c)
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let i1 = self.chain(cx, x)?;
        let ca = self.ca.forward(cx, i1)?;
        let sa = self.sa.forward(cx, i1)?;
        let i2 = cx.concat(&[ca, sa])?;
        let o = self.fuse.forward(cx, i2)?;
        let skip = self.skip.forward(cx, x)?;
        cx.add(o, skip)
    }
}

/// Multi-scale fusion block.
#[derive(Clone, Debug)]
pub struct Msfm {
    pub norm1: BatchNorm,
    pub proj1: Conv2d,
    pub msplck: Msplck,
    pub mlp: Mlp,
    pub skip1: LearnableSkip,
    pub norm2: BatchNorm,
    pub proj2: Conv2d,
    pub skip2: LearnableSkip,
    pub iffe: Iffe,
}

pub struct MsfmTrace {
    pub fa: Var,
    pub fb: Var,
    /// Input to the enhancement unit.
    pub inner: Var,
    pub out: Var,
}

impl Msfm {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, channels: usize, cfg: &ModelConfig) -> Result<Self> {
        let mut s = init.scope(name);
        let c = channels;
        let k = cfg.msplck_branches.len();
        Ok(Msfm {
            norm1: BatchNorm::new(&mut s, "norm1", c)?,
            proj1: Conv2d::new(&mut s, "proj1", c, c, 1, ConvOpts::default())?,
            msplck: Msplck::new(&mut s, "msplck", c, &cfg.msplck_branches, cfg.msplck_context_kernel)?,
            mlp: Mlp::new(&mut s, "mlp", k * c, cfg.mlp_ratio * c, c, Activation::Gelu)?,
            skip1: LearnableSkip::new(&mut s, "skip1", 0.0)?,
            norm2: BatchNorm::new(&mut s, "norm2", c)?,
            proj2: Conv2d::new(&mut s, "proj2", c, c, 1, ConvOpts::default())?,
            skip2: LearnableSkip::new(&mut s, "skip2", 0.0)?,
            iffe: Iffe::new(&mut s, "iffe", c, cfg.ca_reduction)?,
        })
    }

    pub fn trace<T: Scalar>(&self, cx: &mut Ctx<'_, T>, f: Var) -> Result<MsfmTrace> {
        let n = self.norm1.forward(cx, f)?;
        let fa = self.proj1.forward(cx, n)?;
        let m = self.msplck.forward(cx, fa)?;
        let m = self.mlp.forward(cx, m)?;
        let s1 = self.skip1.forward(cx, f)?;
        let fb = cx.add(m, s1)?;
        let n = self.norm2.forward(cx, fb)?;
        let p = self.proj2.forward(cx, n)?;
        let s2 = self.skip2.forward(cx, fb)?;
        let inner = cx.add(p, s2)?;
        let out = self.iffe.forward(cx, inner)?;
        Ok(MsfmTrace { fa, fb, inner, out })
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, f: Var) -> Result<Var> {
        Ok(self.trace(cx, f)?.out)
    }
}

/// Adaptive learning module: `CA(DCN(X)) + k * X`.
#[derive(Clone, Debug)]
pub struct Alm {
    pub dcn: DeformConv3x3,
    pub ca: ChannelAttention,
    pub skip: LearnableSkip,
}

impl Alm {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, channels: usize, reduction: usize) -> Result<Self> {
        let mut s = init.scope(name);
        Ok(Alm {
            dcn: DeformConv3x3::new(&mut s, "dcn", channels, channels)?,
            ca: ChannelAttention::new(&mut s, "ca", channels, reduction)?,
            skip: LearnableSkip::new(&mut s, "skip", 0.0)?,
        })
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let d = self.dcn.forward(cx, x)?;
        let a = self.ca.forward(cx, d)?;
        let s = self.skip.forward(cx, x)?;
        cx.add(a, s)
    }
}
