use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvOpts, Ctx, Downsample, SkFusion, SoftReconstruction, Upsample};
use crate::params::Init;
use crate::tape::Var;
use crate::tensor::Scalar;

use super::blocks::{Alm, Msfm};
use super::config::ModelConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    /// `(K, B)` head; the network output is the residual `b`.
    Soft,
    /// Three-channel image predicted directly.
    Direct,
    /// `(K, B)` head applied to the network input, `K * x + B`, starting at
    /// the identity.
    Refine,
}

#[derive(Clone, Debug)]
struct Level {
    blocks: Vec<Msfm>,
}

impl Level {
    fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, mut x: Var) -> Result<Var> {
        for b in &self.blocks {
            x = b.forward(cx, x)?;
        }
        Ok(x)
    }
}

#[derive(Clone, Debug)]
struct Decoder {
    up: Upsample,
    /// Pointwise projection of the encoder feature when widths differ.
    skip_proj: Option<Conv2d>,
    fuse: SkFusion,
    level: Level,
}

/// Symmetric U-Net of MSFM levels with ALM units at the bottleneck.
#[derive(Clone, Debug)]
pub struct StageNetwork {
    pub dims: Vec<usize>,
    pub head_kind: Head,
    embed: Conv2d,
    encoders: Vec<(Level, Downsample)>,
    bottleneck: Level,
    alms: Vec<Alm>,
    decoders: Vec<Decoder>,
    head: HeadLayer,
}

#[derive(Clone, Debug)]
enum HeadLayer {
    Soft(SoftReconstruction),
    Conv(Conv2d),
}

impl StageNetwork {
    pub fn new<T: Scalar>(
        init: &mut Init<'_, T>,
        name: &str,
        cfg: &ModelConfig,
        blocks: &[usize],
        dims: &[usize],
        use_alm: bool,
        head_kind: Head,
    ) -> Result<Self> {
        if blocks.len() != dims.len() || dims.len() % 2 == 0 {
            return Err(Error::Config(format!("{name}: need an odd number of levels")));
        }
        let mut s = init.scope(name);
        let depth = dims.len() / 2;
        let level = |s: &mut Init<'_, T>, i: usize| -> Result<Level> {
            let blocks = (0..blocks[i])
                .map(|b| Msfm::new(s, &format!("level{i}.block{b}"), dims[i], cfg))
                .collect::<Result<Vec<_>>>()?;
            Ok(Level { blocks })
        };
        let embed = Conv2d::new(&mut s, "embed", 3, dims[0], 3, ConvOpts::default())?;
        let mut encoders = Vec::with_capacity(depth);
        for i in 0..depth {
            let l = level(&mut s, i)?;
            let down = Downsample::new(&mut s, &format!("down{i}"), dims[i], dims[i + 1])?;
            encoders.push((l, down));
        }
        let bottleneck = level(&mut s, depth)?;
        let alms = if use_alm {
            (0..cfg.alm_count)
                .map(|a| Alm::new(&mut s, &format!("alm{a}"), dims[depth], cfg.ca_reduction))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let mut decoders = Vec::with_capacity(depth);
        for j in depth + 1..dims.len() {
            let up = Upsample::new(&mut s, &format!("up{j}"), dims[j - 1], dims[j])?;
            let enc = dims.len() - 1 - j;
            let skip_proj = if dims[enc] != dims[j] {
                Some(Conv2d::new(
                    &mut s,
                    &format!("skip{j}"),
                    dims[enc],
                    dims[j],
                    1,
                    ConvOpts::default(),
                )?)
            } else {
                None
            };
            let fuse = SkFusion::new(&mut s, &format!("fuse{j}"), dims[j])?;
            decoders.push(Decoder {
                up,
                skip_proj,
                fuse,
                level: level(&mut s, j)?,
            });
        }
        let last = dims[dims.len() - 1];
        let head = match head_kind {
            Head::Soft => HeadLayer::Soft(SoftReconstruction::new(&mut s, "head", last)?),
            Head::Direct => HeadLayer::Conv(Conv2d::new(&mut s, "head", last, 3, 3, ConvOpts::default())?),
            Head::Refine => HeadLayer::Soft(SoftReconstruction::new(&mut s, "head", last)?),
        };
        Ok(StageNetwork {
            dims: dims.to_vec(),
            head_kind,
            embed,
            encoders,
            bottleneck,
            alms,
            decoders,
            head,
        })
    }

    pub fn divisor(&self) -> usize {
        1 << self.encoders.len()
    }

    pub fn alm_count(&self) -> usize {
        self.alms.len()
    }

    /// Network output for a 3-channel image: the residual `b` for a soft
    /// head, otherwise an unclamped image.
    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, image: Var) -> Result<Var> {
        let s = cx.shape(image);
        let d = self.divisor();
        if s.c != 3 {
            return Err(Error::shape("stage_forward", format!("expected 3 channels, got {s}")));
        }
        if s.h % d != 0 || s.w % d != 0 || s.h < 2 * d || s.w < 2 * d {
            return Err(Error::shape(
                "stage_forward",
                format!("spatial dims of {s} must be multiples of {d} and at least {}", 2 * d),
            ));
        }
        let mut x = self.embed.forward(cx, image)?;
        let mut skips = Vec::with_capacity(self.encoders.len());
        for (level, down) in &self.encoders {
            x = level.forward(cx, x)?;
            skips.push(x);
            x = down.forward(cx, x)?;
        }
        x = self.bottleneck.forward(cx, x)?;
        for alm in &self.alms {
            x = alm.forward(cx, x)?;
        }
        for dec in &self.decoders {
            let up = dec.up.forward(cx, x)?;
            let mut skip = skips.pop().expect("one skip per decoder");
            if let Some(p) = &dec.skip_proj {
                skip = p.forward(cx, skip)?;
            }
            x = dec.fuse.forward(cx, up, skip)?;
            x = dec.level.forward(cx, x)?;
        }
        match (&self.head, self.head_kind) {
            (HeadLayer::Soft(h), Head::Refine) => {
                let r = h.forward(cx, x, image)?;
                cx.add(image, r)
            }
            (HeadLayer::Soft(h), _) => h.forward(cx, x, image),
            (HeadLayer::Conv(h), _) => h.forward(cx, x),
        }
    }
}
