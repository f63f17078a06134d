use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ChannelAttention;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    S,
    L,
    #[serde(rename = "tiny")]
    Tiny,
}

/// Feature switches for the ablation lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    /// Stage one predicts the residual added to the hazy input (otherwise it
    /// predicts the clean image directly).
    #[serde(rename = "use_CL")]
    pub use_cl: bool,
    #[serde(rename = "use_ALM")]
    pub use_alm: bool,
    pub use_stage2: bool,
    /// Train both stages as one network with a loss on the final output only.
    pub ts_all: bool,
}

impl Ablation {
    pub const FULL: Ablation = Ablation {
        use_cl: true,
        use_alm: true,
        use_stage2: true,
        ts_all: false,
    };

    pub const BASE: Ablation = Ablation {
        use_cl: false,
        use_alm: false,
        use_stage2: false,
        ts_all: false,
    };
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation::FULL
    }
}

/// One depthwise dilated branch of the multi-scale large-kernel block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Branch {
    pub kernel: usize,
    pub dilation: usize,
}

impl Branch {
    pub const fn receptive_field(&self) -> usize {
        self.dilation * (self.kernel - 1) + 1
    }
}

fn default_branches() -> Vec<Branch> {
    vec![
        Branch { kernel: 3, dilation: 1 },
        Branch { kernel: 5, dilation: 3 },
        Branch { kernel: 7, dilation: 3 },
    ]
}

fn default_context_kernel() -> usize {
    5
}

fn default_mlp_ratio() -> usize {
    4
}

fn default_alm_count() -> usize {
    2
}

fn default_reduction() -> usize {
    ChannelAttention::DEFAULT_REDUCTION
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub stage1_blocks: Vec<usize>,
    pub stage1_dims: Vec<usize>,
    pub stage2_blocks: Vec<usize>,
    pub stage2_dims: Vec<usize>,
    #[serde(default)]
    pub ablation: Ablation,
    #[serde(default = "default_reduction")]
    pub ca_reduction: usize,
    #[serde(default = "default_branches")]
    pub msplck_branches: Vec<Branch>,
    /// Dense convolution ahead of the dilated branches; 0 disables it.
    #[serde(default = "default_context_kernel")]
    pub msplck_context_kernel: usize,
    /// Hidden width of the fusion MLP as a multiple of the block width.
    #[serde(default = "default_mlp_ratio")]
    pub mlp_ratio: usize,
    #[serde(default = "default_alm_count")]
    pub alm_count: usize,
}

impl ModelConfig {
    pub fn tsnet_s() -> Self {
        ModelConfig {
            variant: Variant::S,
            stage1_blocks: vec![1, 1, 2, 1, 1],
            stage1_dims: vec![24, 48, 96, 48, 24],
            stage2_blocks: vec![1, 2, 1],
            stage2_dims: vec![24, 48, 24],
            ablation: Ablation::FULL,
            ca_reduction: default_reduction(),
            msplck_branches: default_branches(),
            msplck_context_kernel: default_context_kernel(),
            mlp_ratio: default_mlp_ratio(),
            alm_count: default_alm_count(),
        }
    }

    pub fn tsnet_l() -> Self {
        ModelConfig {
            variant: Variant::L,
            stage1_blocks: vec![2, 2, 4, 2, 2],
            ..Self::tsnet_s()
        }
    }

    /// TSNet-S block counts at desk-scale widths, with a narrower MLP.
    pub fn tiny() -> Self {
        ModelConfig {
            variant: Variant::Tiny,
            stage1_dims: vec![8, 16, 32, 16, 8],
            stage2_dims: vec![8, 16, 8],
            mlp_ratio: 2,
            ..Self::tsnet_s()
        }
    }

    /// Smallest configuration used for whole-model gradient checks.
    pub fn micro() -> Self {
        ModelConfig {
            variant: Variant::Tiny,
            stage1_dims: vec![4, 8, 16, 8, 4],
            stage2_dims: vec![4, 8, 4],
            ca_reduction: 4,
            ..Self::tsnet_s()
        }
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        self.ablation = ablation;
        self
    }

    /// Whether the second-stage network is built at all.
    pub fn has_stage2(&self) -> bool {
        self.ablation.use_stage2 || self.ablation.ts_all
    }

    /// Spatial divisor required of stage-1 inputs.
    pub fn stage1_divisor(&self) -> usize {
        1 << (self.stage1_dims.len() / 2)
    }

    pub fn stage2_divisor(&self) -> usize {
        1 << (self.stage2_dims.len() / 2)
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, blocks: &[usize], dims: &[usize], len: usize| -> Result<()> {
            if blocks.len() != len || dims.len() != len {
                return Err(Error::Config(format!(
                    "{name}: expected {len} block counts and dims, got {} and {}",
                    blocks.len(),
                    dims.len()
                )));
            }
            for i in 0..len / 2 {
                if dims[i] != dims[len - 1 - i] {
                    return Err(Error::Config(format!("{name}: dims {dims:?} not symmetric")));
                }
            }
            for &d in dims {
                if d == 0 || d < self.ca_reduction || d % self.ca_reduction != 0 {
                    return Err(Error::Config(format!(
                        "{name}: width {d} incompatible with channel-attention reduction {}",
                        self.ca_reduction
                    )));
                }
            }
            Ok(())
        };
        check("stage1", &self.stage1_blocks, &self.stage1_dims, 5)?;
        check("stage2", &self.stage2_blocks, &self.stage2_dims, 3)?;
        if self.msplck_branches.is_empty()
            || self
                .msplck_branches
                .iter()
                .any(|b| b.kernel % 2 == 0 || b.dilation == 0)
        {
            return Err(Error::Config("branches need odd kernels and dilation >= 1".into()));
        }
        if self.msplck_context_kernel != 0 && self.msplck_context_kernel % 2 == 0 {
            return Err(Error::Config("context kernel must be odd".into()));
        }
        if self.mlp_ratio == 0 {
            return Err(Error::Config("mlp_ratio must be >= 1".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_variants() {
        let s = ModelConfig::tsnet_s();
        assert_eq!(s.stage1_blocks, vec![1, 1, 2, 1, 1]);
        assert_eq!(s.stage2_blocks, vec![1, 2, 1]);
        assert_eq!(s.stage1_dims, vec![24, 48, 96, 48, 24]);
        assert_eq!(s.stage2_dims, vec![24, 48, 24]);
        let l = ModelConfig::tsnet_l();
        assert_eq!(l.stage1_blocks, vec![2, 2, 4, 2, 2]);
        assert_eq!(l.stage2_blocks, s.stage2_blocks);
        for (a, b) in l.stage1_blocks.iter().zip(&s.stage1_blocks) {
            assert!(a > b);
        }
        for cfg in [s, l, ModelConfig::tiny(), ModelConfig::micro()] {
            cfg.validate().unwrap();
        }
    }

    #[test]
    fn json_roundtrip_and_defaults() {
        let cfg = ModelConfig::tiny().with_ablation(Ablation::BASE);
        let back = ModelConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(cfg, back);
        let minimal = r#"{"variant":"S","stage1_blocks":[1,1,2,1,1],"stage1_dims":[24,48,96,48,24],
            "stage2_blocks":[1,2,1],"stage2_dims":[24,48,24]}"#;
        assert_eq!(ModelConfig::from_json(minimal).unwrap(), ModelConfig::tsnet_s());
        assert!(cfg.to_json().contains("\"use_CL\""));
    }

    #[test]
    fn rejects_asymmetric_dims() {
        let mut cfg = ModelConfig::tiny();
        cfg.stage1_dims = vec![8, 16, 32, 16, 16];
        assert!(cfg.validate().is_err());
        cfg = ModelConfig::tiny();
        cfg.stage2_blocks = vec![1, 1];
        assert!(cfg.validate().is_err());
    }
}
