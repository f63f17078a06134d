use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Ctx, Mode};
use crate::params::{Init, ParamStore};
use crate::tape::Var;
use crate::tensor::{Scalar, Tensor};

use super::config::ModelConfig;
use super::network::{Head, StageNetwork};

/// Value range of images inside the networks.
pub const LO: f64 = -1.0;
pub const HI: f64 = 1.0;

/// Stage-one tape nodes.
pub struct Stage1Out {
    /// Learned residual, present when the residual head is enabled.
    pub b: Option<Var>,
    /// `I + b` (or the direct head output) before clamping; used by the loss.
    pub raw: Var,
    /// Dehazed image clamped to the valid range.
    pub c: Var,
}

/// Layer structure of both stages, independent of the weights.
#[derive(Clone, Debug)]
pub struct Architecture {
    pub config: ModelConfig,
    pub stage1: StageNetwork,
    pub stage2: Option<StageNetwork>,
}

impl Architecture {
    pub fn fused(&self) -> bool {
        self.config.ablation.ts_all
    }

    pub fn stage1_forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, image: Var) -> Result<Stage1Out> {
        let y = self.stage1.forward(cx, image)?;
        let (b, raw) = if self.config.ablation.use_cl {
            (Some(y), cx.add(image, y)?)
        } else {
            (None, y)
        };
        let c = cx.clamp(raw, LO, HI)?;
        Ok(Stage1Out { b, raw, c })
    }

    /// Unclamped and clamped stage-two output.
    pub fn stage2_forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, c: Var) -> Result<(Var, Var)> {
        let net = self
            .stage2
            .as_ref()
            .ok_or_else(|| Error::Config("model has no second stage".into()))?;
        let raw = net.forward(cx, c)?;
        let d = cx.clamp(raw, LO, HI)?;
        Ok((raw, d))
    }
}

/// The two-stage model. Weights of the stages live in separate stores,
/// except for TS-all where both networks share `weights1`.
pub struct TsNet<T> {
    pub arch: Architecture,
    pub weights1: ParamStore<T>,
    pub weights2: ParamStore<T>,
}

impl<T: Scalar> TsNet<T> {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights1 = ParamStore::new();
        let mut weights2 = ParamStore::new();
        let ab = config.ablation;
        let head1 = if ab.use_cl { Head::Soft } else { Head::Direct };
        let stage1 = {
            let mut init = Init::new(&mut weights1, &mut rng);
            StageNetwork::new(
                &mut init,
                "stage1",
                config,
                &config.stage1_blocks,
                &config.stage1_dims,
                ab.use_alm,
                head1,
            )?
        };
        let stage2 = if config.has_stage2() {
            let store = if ab.ts_all { &mut weights1 } else { &mut weights2 };
            let mut init = Init::new(store, &mut rng);
            Some(StageNetwork::new(
                &mut init,
                "stage2",
                config,
                &config.stage2_blocks,
                &config.stage2_dims,
                ab.use_alm,
                Head::Refine,
            )?)
        } else {
            None
        };
        Ok(TsNet {
            arch: Architecture {
                config: config.clone(),
                stage1,
                stage2,
            },
            weights1,
            weights2,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.arch.config
    }

    /// Trainable scalars across both stages.
    pub fn param_count(&self) -> usize {
        self.weights1.trainable_count() + self.weights2.trainable_count()
    }

    /// Store holding the second-stage weights.
    pub fn stage2_store(&mut self) -> &mut ParamStore<T> {
        if self.arch.fused() {
            &mut self.weights1
        } else {
            &mut self.weights2
        }
    }

    /// Stage one in evaluation mode.
    pub fn dehaze_stage1(&mut self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let mut cx = Ctx::new(&mut self.weights1, Mode::Eval);
        let i = cx.constant(image.clone());
        let out = self.arch.stage1_forward(&mut cx, i)?;
        Ok(cx.value(out.c).clone())
    }

    /// Full inference in evaluation mode: the final image `d`, or `c` when
    /// there is no second stage.
    pub fn infer(&mut self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let c = self.dehaze_stage1(image)?;
        if self.arch.stage2.is_none() {
            return Ok(c);
        }
        let store = if self.arch.fused() {
            &mut self.weights1
        } else {
            &mut self.weights2
        };
        let mut cx = Ctx::new(store, Mode::Eval);
        let cv = cx.constant(c);
        let (_, d) = self.arch.stage2_forward(&mut cx, cv)?;
        Ok(cx.value(d).clone())
    }
}

impl<T: Scalar> TsNet<T> {
    /// Smallest valid spatial extent at or above `n`.
    pub fn valid_extent(&self, n: usize) -> usize {
        let d = self.arch.config.stage1_divisor().max(self.arch.config.stage2_divisor());
        n.max(2 * d).div_ceil(d) * d
    }

    /// Dehaze images with values in `[0, 1]` and any spatial size. Inputs
    /// are edge-padded to a valid extent and the result cropped back.
    pub fn dehaze(&mut self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let s = image.shape();
        let (h, w) = (self.valid_extent(s.h), self.valid_extent(s.w));
        let two = T::of(2.0);
        let padded = Tensor::from_fn([s.n, s.c, h, w], |n, c, y, x| {
            image.at(n, c, y.min(s.h - 1), x.min(s.w - 1)) * two - T::one()
        });
        let out = self.infer(&padded)?;
        let half = T::of(0.5);
        Ok(Tensor::from_fn(s, |n, c, y, x| (out.at(n, c, y, x) + T::one()) * half))
    }
}

/// Trainable scalar count of a freshly built model.
pub fn param_count(config: &ModelConfig) -> Result<usize> {
    Ok(TsNet::<f32>::new(config, 0)?.param_count())
}
