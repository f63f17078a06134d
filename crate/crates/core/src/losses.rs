//! Training objectives: smooth L1 and the contrastive regularizer built on a
//! frozen feature pyramid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{ParamKind, ParamStore};
use crate::tape::{PaddingSpec, Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// Weights of the contrastive term.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossConfig {
    pub beta: f64,
    pub omega: Vec<f64>,
    /// Layer indices of the extractor whose outputs are compared.
    pub taps: Vec<usize>,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            beta: 0.1,
            omega: vec![1.0, 0.25, 0.125],
            taps: FrozenExtractor::<f32>::DEFAULT_TAPS.to_vec(),
        }
    }
}

/// Guard added to the contrastive denominator.
pub const DENOM_EPS: f64 = 1e-7;

/// Mean Huber loss with unit threshold.
pub fn smooth_l1<T: Scalar>(tape: &mut Tape<T>, x: Var, y: Var) -> Result<Var> {
    tape.smooth_l1(x, y)
}

#[derive(Clone, Debug)]
struct Layer {
    stride: usize,
    weight: String,
    bias: String,
}

/// Fixed 12-layer 3x3 convolution pyramid with GELU activations: widths
/// 8/16/32 in groups of four, stride 2 at layers 2, 6 and 10.
#[derive(Clone, Debug)]
pub struct FrozenExtractor<T> {
    store: ParamStore<T>,
    layers: Vec<Layer>,
}

impl<T: Scalar> FrozenExtractor<T> {
    pub const DEPTH: usize = 12;
    pub const DEFAULT_TAPS: [usize; 3] = [3, 7, 11];
    pub const DEFAULT_SEED: u64 = 0xfeed_5eed;

    fn plan() -> Vec<(usize, usize, usize)> {
        (0..Self::DEPTH)
            .map(|i| {
                let width = |l: usize| 8usize << (l / 4);
                let cin = if i == 0 { 3 } else { width(i - 1) };
                let stride = if i % 4 == 2 { 2 } else { 1 };
                (cin, width(i), stride)
            })
            .collect()
    }

    fn layers() -> Vec<Layer> {
        Self::plan()
            .iter()
            .enumerate()
            .map(|(i, &(_, _, stride))| Layer {
                stride,
                weight: format!("layer{i}.weight"),
                bias: format!("layer{i}.bias"),
            })
            .collect()
    }

    /// Deterministic weights from `seed` (He-uniform, zero bias).
    pub fn random(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (i, &(cin, cout, _)) in Self::plan().iter().enumerate() {
            let bound = (6.0 / (cin * 9) as f64).sqrt();
            let w = Tensor::from_fn([cout, cin, 3, 3], |_, _, _, _| T::of(rng.gen_range(-bound..bound)));
            store.insert(format!("layer{i}.weight"), w, ParamKind::Frozen)?;
            store.insert(
                format!("layer{i}.bias"),
                Tensor::zeros([1, cout, 1, 1]),
                ParamKind::Frozen,
            )?;
        }
        Ok(FrozenExtractor {
            store,
            layers: Self::layers(),
        })
    }

    /// Weights from a store holding `layer{i}.weight` / `layer{i}.bias` with
    /// the pyramid's shapes.
    pub fn from_store(src: &ParamStore<T>) -> Result<Self> {
        let mut ex = Self::random(0)?;
        ex.store.load_from(src)?;
        ex.store.freeze_all();
        Ok(ex)
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    /// Whether any extractor tensor would receive gradients.
    pub fn requires_grad(&self) -> bool {
        self.store.ids().any(|id| self.store.requires_grad(id))
    }

    /// Outputs of the layers listed in `taps` (ascending order not required).
    pub fn extract(&self, tape: &mut Tape<T>, img: Var, taps: &[usize]) -> Result<Vec<Var>> {
        if let Some(&bad) = taps.iter().find(|&&t| t >= self.layers.len()) {
            return Err(Error::invalid(
                "frozen_extract",
                format!("tap {bad} out of range for {} layers", self.layers.len()),
            ));
        }
        let last = taps.iter().copied().max().unwrap_or(0);
        let mut outs = vec![None; self.layers.len()];
        let mut x = img;
        for (i, layer) in self.layers.iter().enumerate().take(last + 1) {
            let w = tape.constant(self.store.value(self.store.id(&layer.weight)?).clone());
            let b = tape.constant(self.store.value(self.store.id(&layer.bias)?).clone());
            x = tape.conv2d(x, w, Some(b), layer.stride, PaddingSpec::Zero(1), 1, 1)?;
            x = tape.gelu(x)?;
            outs[i] = Some(x);
        }
        Ok(taps
            .iter()
            .map(|&t| outs[t].expect("computed up to last tap"))
            .collect())
    }

    /// `beta * sum_i omega_i * L1(R_i(positive), R_i(anchor)) / L1(R_i(negative), R_i(anchor))`
    /// with default weights.
    pub fn contrastive(&self, tape: &mut Tape<T>, anchor: Var, positive: Var, negative: Var) -> Result<Var> {
        contrastive_loss(tape, self, &LossConfig::default(), anchor, positive, negative)
    }
}

/// Contrastive regularizer pulling `restored` toward `clean` and pushing it
/// from `hazy` in feature space. Gradients reach `restored` only.
pub fn contrastive_loss<T: Scalar>(
    tape: &mut Tape<T>,
    extractor: &FrozenExtractor<T>,
    cfg: &LossConfig,
    restored: Var,
    clean: Var,
    hazy: Var,
) -> Result<Var> {
    if cfg.omega.len() != cfg.taps.len() {
        return Err(Error::Config(format!(
            "{} contrastive weights for {} taps",
            cfg.omega.len(),
            cfg.taps.len()
        )));
    }
    for (name, v) in [("clean", clean), ("hazy", hazy)] {
        if tape.shape(v) != tape.shape(restored) {
            return Err(Error::shape(
                "contrastive_loss",
                format!("{name} {} vs restored {}", tape.shape(v), tape.shape(restored)),
            ));
        }
    }
    // Reference images are detached.
    let clean = tape.constant(tape.value(clean).clone());
    let hazy = tape.constant(tape.value(hazy).clone());
    let fr = extractor.extract(tape, restored, &cfg.taps)?;
    let fp = extractor.extract(tape, clean, &cfg.taps)?;
    let fn_ = extractor.extract(tape, hazy, &cfg.taps)?;
    let mut total: Option<Var> = None;
    for (i, &w) in cfg.omega.iter().enumerate() {
        let num = tape.l1(fp[i], fr[i])?;
        let den = tape.l1(fn_[i], fr[i])?;
        if tape.value(den).item().f64() <= DENOM_EPS {
            log::warn!(
                "contrastive tap {}: restored matches the hazy input, denominator guard active",
                cfg.taps[i]
            );
        }
        let den = tape.add_scalar(den, DENOM_EPS)?;
        let ratio = tape.div(num, den)?;
        let term = tape.scalar_mul(ratio, cfg.beta * w)?;
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    match total {
        Some(t) => Ok(t),
        None => Ok(tape.constant(Tensor::scalar(T::zero()))),
    }
}

/// Loss components of one training step.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub smooth: Var,
    pub contrastive: Option<Var>,
}

/// `smooth_l1(J, restored) + contrastive(restored; J, I)`; the contrastive
/// term is skipped when no extractor is given or `beta` is zero.
pub fn stage1_loss<T: Scalar>(
    tape: &mut Tape<T>,
    clean: Var,
    hazy: Var,
    restored: Var,
    contrast: Option<(&FrozenExtractor<T>, &LossConfig)>,
) -> Result<LossParts> {
    let smooth = tape.smooth_l1(restored, clean)?;
    let contrastive = match contrast {
        Some((ex, cfg)) if cfg.beta != 0.0 => Some(contrastive_loss(tape, ex, cfg, restored, clean, hazy)?),
        _ => None,
    };
    let total = match contrastive {
        Some(c) => tape.add(smooth, c)?,
        None => smooth,
    };
    Ok(LossParts {
        total,
        smooth,
        contrastive,
    })
}

pub fn stage2_loss<T: Scalar>(tape: &mut Tape<T>, clean: Var, output: Var) -> Result<Var> {
    tape.smooth_l1(output, clean)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_loss(d: f64) -> f64 {
        let mut t = Tape::<f64>::new();
        let a = t.constant(Tensor::scalar(d));
        let b = t.constant(Tensor::scalar(0.0));
        let l = smooth_l1(&mut t, a, b).unwrap();
        t.value(l).item()
    }

    #[test]
    fn smooth_l1_branches() {
        assert_eq!(scalar_loss(0.0), 0.0);
        assert!((scalar_loss(0.5) - 0.125).abs() < 1e-15);
        assert!((scalar_loss(2.0) - 1.5).abs() < 1e-15);
        assert!((scalar_loss(-2.0) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn smooth_l1_shape_mismatch() {
        let mut t = Tape::<f64>::new();
        let a = t.constant(Tensor::zeros([1, 1, 2, 2]));
        let b = t.constant(Tensor::zeros([1, 1, 2, 3]));
        assert!(smooth_l1(&mut t, a, b).is_err());
    }

    fn img(seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn([1, 3, 16, 16], |_, _, _, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn extractor_pyramid() {
        let ex = FrozenExtractor::<f64>::random(FrozenExtractor::<f64>::DEFAULT_SEED).unwrap();
        assert!(!ex.requires_grad());
        let mut t = Tape::new();
        let x = t.constant(img(1));
        let f1 = ex.extract(&mut t, x, &[3, 7, 11]).unwrap();
        let f2 = ex.extract(&mut t, x, &[3, 7, 11]).unwrap();
        let sizes: Vec<usize> = f1.iter().map(|&v| t.shape(v).h).collect();
        assert_eq!(sizes, vec![8, 4, 2]);
        for (a, b) in f1.iter().zip(&f2) {
            assert_eq!(t.value(*a).data(), t.value(*b).data());
        }
        assert!(ex.extract(&mut t, x, &[12]).is_err());
    }

    #[test]
    fn contrastive_oracles() {
        let ex = FrozenExtractor::<f64>::random(7).unwrap();
        let cfg = LossConfig::default();
        let mut t = Tape::new();
        let j = t.constant(img(2));
        let i = t.constant(img(3));
        // restored = J: every numerator vanishes
        let r = t.leaf(img(2), true);
        let l = contrastive_loss(&mut t, &ex, &cfg, r, j, i).unwrap();
        assert_eq!(t.value(l).item(), 0.0);
        // J = I: every ratio is L1/(L1 + eps), so the loss is just below beta * sum(omega)
        let r = t.leaf(img(4), true);
        let l = contrastive_loss(&mut t, &ex, &cfg, r, j, j).unwrap();
        assert!((t.value(l).item() - 0.1375).abs() < 1e-5);
    }

    #[test]
    fn beta_zero_reduces_to_smooth_l1() {
        let ex = FrozenExtractor::<f64>::random(7).unwrap();
        let cfg = LossConfig {
            beta: 0.0,
            ..LossConfig::default()
        };
        let mut t = Tape::new();
        let j = t.constant(img(2));
        let i = t.constant(img(3));
        let r = t.constant(img(4));
        let parts = stage1_loss(&mut t, j, i, r, Some((&ex, &cfg))).unwrap();
        let plain = t.smooth_l1(r, j).unwrap();
        assert!(parts.contrastive.is_none());
        assert_eq!(t.value(parts.total).item(), t.value(plain).item());
        let perfect = stage1_loss(&mut t, j, i, j, Some((&ex, &LossConfig::default()))).unwrap();
        assert_eq!(t.value(perfect.total).item(), 0.0);
        let s2 = stage2_loss(&mut t, j, j).unwrap();
        assert_eq!(t.value(s2).item(), 0.0);
    }
}
