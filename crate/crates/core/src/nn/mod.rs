//! Parameterized building blocks evaluated on a [`Ctx`].

mod attention;
mod deform;
mod fusion;
mod layers;

pub use attention::{ChannelAttention, SpatialAttention};
pub use deform::{deform_conv_with_offsets, DeformConv3x3};
pub use fusion::{Downsample, SkFusion, SoftReconstruction, Upsample};
pub use layers::{Activation, BatchNorm, Conv2d, ConvOpts, LearnableSkip, Mlp};

use std::ops::{Deref, DerefMut};

use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Scalar;

/// Whether batch normalization uses batch moments (and updates running
/// statistics) or the stored running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One forward pass: a fresh tape plus the parameter store it reads from.
pub struct Ctx<'s, T> {
    pub tape: Tape<T>,
    pub store: &'s mut ParamStore<T>,
    pub mode: Mode,
}

impl<'s, T: Scalar> Ctx<'s, T> {
    pub fn new(store: &'s mut ParamStore<T>, mode: Mode) -> Self {
        Ctx {
            tape: Tape::new(),
            store,
            mode,
        }
    }

    /// Tape node for a stored tensor.
    pub fn p(&mut self, id: ParamId) -> Var {
        self.tape.param(self.store, id)
    }
}

impl<T> Deref for Ctx<'_, T> {
    type Target = Tape<T>;

    fn deref(&self) -> &Tape<T> {
        &self.tape
    }
}

impl<T> DerefMut for Ctx<'_, T> {
    fn deref_mut(&mut self) -> &mut Tape<T> {
        &mut self.tape
    }
}
