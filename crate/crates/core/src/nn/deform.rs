use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvOpts, Ctx};
use crate::ops::PadMode;
use crate::params::{Init, ParamId};
use crate::tape::{PaddingSpec, Tape, Var};
use crate::tensor::{Scalar, Shape, Tensor};

/// Number of sampling points of a 3x3 kernel.
pub const TAPS: usize = 9;

/// Deformable 3x3 convolution (offsets only, no modulation).
///
/// A 3x3 predictor produces a `(dy, dx)` pair for each tap at each output
/// pixel. Taps are sampled bilinearly from the reflect-padded input at
/// their regular lattice position plus the predicted offset.
#[derive(Clone, Debug)]
pub struct DeformConv3x3 {
    pub offset: Conv2d,
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl DeformConv3x3 {
    pub fn new<T: Scalar>(init: &mut Init<'_, T>, name: &str, cin: usize, cout: usize) -> Result<Self> {
        let mut s = init.scope(name);
        let offset = Conv2d::new(&mut s, "offset", cin, 2 * TAPS, 3, ConvOpts::default().zeroed())?;
        let bound = 1.0 / ((cin * TAPS) as f64).sqrt();
        Ok(DeformConv3x3 {
            offset,
            weight: s.uniform("weight", [cout, cin, 3, 3], bound)?,
            bias: s.uniform("bias", [1, cout, 1, 1], bound)?,
            in_channels: cin,
            out_channels: cout,
        })
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let s = cx.shape(x);
        if s.c != self.in_channels {
            return Err(Error::shape(
                "deform_conv",
                format!("layer expects {} channels, input has {}", self.in_channels, s.c),
            ));
        }
        if s.h < 2 || s.w < 2 {
            return Err(Error::shape(
                "deform_conv",
                format!("input {s} too small for reflect padding"),
            ));
        }
        let offsets = self.offset.forward(cx, x)?;
        let w = cx.p(self.weight);
        let b = cx.p(self.bias);
        deform_conv_with_offsets(cx, x, offsets, w, Some(b))
    }
}

/// Regular 3x3 lattice in padded coordinates: tap `(ky, kx)` of output
/// pixel `(i, j)` sits at `(i + ky, j + kx)`.
fn base_grid<T: Scalar>(n: usize, h: usize, w: usize) -> Tensor<T> {
    Tensor::from_fn([n, 2 * TAPS, h, w], |_, c, i, j| {
        let k = c / 2;
        let (ky, kx) = (k / 3, k % 3);
        T::of(if c % 2 == 0 { (i + ky) as f64 } else { (j + kx) as f64 })
    })
}

/// Deformable convolution given explicit offsets `(N, 18, H, W)` and a
/// `(Cout, Cin, 3, 3)` kernel.
pub fn deform_conv_with_offsets<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    offsets: Var,
    weight: Var,
    bias: Option<Var>,
) -> Result<Var> {
    let s = tape.shape(x);
    let os = tape.shape(offsets);
    if os != Shape::new(s.n, 2 * TAPS, s.h, s.w) {
        return Err(Error::shape("deform_conv", format!("offsets {os} for input {s}")));
    }
    let ws = tape.shape(weight);
    if ws.c != s.c || ws.h != 3 || ws.w != 3 {
        return Err(Error::shape("deform_conv", format!("kernel {ws} for input {s}")));
    }
    let padded = tape.pad(x, 1, PadMode::Reflect)?;
    let grid = tape.constant(base_grid(s.n, s.h, s.w));
    let coords = tape.add(offsets, grid)?;
    let cols = tape.grid_sample_bilinear(padded, coords)?;
    let flat = tape.reshape(weight, [ws.n, ws.c * TAPS, 1, 1])?;
    tape.conv2d(cols, flat, bias, 1, PaddingSpec::Zero(0), 1, 1)
}
