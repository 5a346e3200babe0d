use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::BN_EPS;

/// Widths and block counts for three consecutive stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageGroup {
    pub widths: [usize; 3],
    pub blocks: [usize; 3],
}

/// Structural switches for ablation studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    pub fusion1: bool,
    pub fusion2: bool,
    /// When false a single 1x1 conv-BN projection replaces the pyramid
    /// pooling module.
    pub rppm: bool,
    /// Number of stacked 1x1 convs in each block's 1x1 path; 0 removes it.
    pub num_1x1: usize,
    pub residual: bool,
    pub residual_bn: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation { fusion1: true, fusion2: true, rppm: true, num_1x1: 2, residual: true, residual_bn: false }
    }
}

/// Declarative network description.
///
/// `stem` covers stages 1-3, `semantic` and `detail` stages 4-6 of each
/// branch. Stage 6 of both branches is made of bottleneck blocks; all other
/// stages use reparameterizable blocks. The first block of stages 1-5 in
/// the stem and semantic branch halves the resolution; the detail branch
/// stays at 1/8.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDef {
    pub name: String,
    #[serde(default = "default_in_channels")]
    pub in_channels: usize,
    pub num_classes: usize,
    /// Head width `O_c`.
    pub head_channels: usize,
    /// Branch width of the pyramid pooling module.
    #[serde(default = "default_ppm_channels")]
    pub ppm_channels: usize,
    #[serde(default = "default_true")]
    pub aux_head: bool,
    #[serde(default = "default_eps")]
    pub bn_eps: f64,
    pub stem: StageGroup,
    pub semantic: StageGroup,
    pub detail: StageGroup,
    #[serde(default)]
    pub ablation: Ablation,
}

fn default_in_channels() -> usize {
    3
}

fn default_ppm_channels() -> usize {
    128
}

fn default_true() -> bool {
    true
}

fn default_eps() -> f64 {
    BN_EPS
}

/// Total downsampling of the semantic branch; inputs must be multiples.
pub const INPUT_MULTIPLE: usize = 64;

pub const PRESETS: [&str; 5] = ["micro", "rdrnet-s", "rdrnet-s-simple", "rdrnet-m", "rdrnet-l"];

impl NetworkDef {
    fn base(name: &str, head: usize, stem: StageGroup, semantic: StageGroup, detail: StageGroup) -> Self {
        NetworkDef {
            name: name.into(),
            in_channels: 3,
            num_classes: 19,
            head_channels: head,
            ppm_channels: 128,
            aux_head: true,
            bn_eps: BN_EPS,
            stem,
            semantic,
            detail,
            ablation: Ablation::default(),
        }
    }

    pub fn rdrnet_s() -> Self {
        Self::base(
            "rdrnet-s",
            128,
            StageGroup { widths: [32, 32, 64], blocks: [1, 5, 4] },
            StageGroup { widths: [128, 256, 512], blocks: [6, 6, 1] },
            StageGroup { widths: [64, 64, 128], blocks: [4, 4, 1] },
        )
    }

    pub fn rdrnet_s_simple() -> Self {
        NetworkDef { name: "rdrnet-s-simple".into(), head_channels: 64, ..Self::rdrnet_s() }
    }

    pub fn rdrnet_m() -> Self {
        Self::base(
            "rdrnet-m",
            128,
            StageGroup { widths: [64, 64, 128], blocks: [1, 5, 4] },
            StageGroup { widths: [256, 512, 1024], blocks: [6, 6, 1] },
            StageGroup { widths: [128, 128, 256], blocks: [4, 4, 1] },
        )
    }

    pub fn rdrnet_l() -> Self {
        Self::base(
            "rdrnet-l",
            256,
            StageGroup { widths: [64, 64, 128], blocks: [1, 7, 6] },
            StageGroup { widths: [256, 512, 1024], blocks: [8, 8, 2] },
            StageGroup { widths: [128, 128, 256], blocks: [6, 6, 2] },
        )
    }

    /// Smallest variant, for fast end-to-end tests.
    pub fn micro() -> Self {
        NetworkDef {
            num_classes: 4,
            ppm_channels: 32,
            ..Self::base(
                "micro",
                32,
                StageGroup { widths: [8, 8, 16], blocks: [1, 1, 1] },
                StageGroup { widths: [32, 64, 128], blocks: [1, 1, 1] },
                StageGroup { widths: [16, 16, 32], blocks: [1, 1, 1] },
            )
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        Some(match name {
            "micro" => Self::micro(),
            "rdrnet-s" => Self::rdrnet_s(),
            "rdrnet-s-simple" => Self::rdrnet_s_simple(),
            "rdrnet-m" => Self::rdrnet_m(),
            "rdrnet-l" => Self::rdrnet_l(),
            _ => return None,
        })
    }

    /// First violated rule as `(key, message)`.
    pub(crate) fn issue(&self) -> Option<(&'static str, String)> {
        let positive = [
            ("in_channels", self.in_channels),
            ("num_classes", self.num_classes),
            ("head_channels", self.head_channels),
            ("ppm_channels", self.ppm_channels),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Some((k, "must be positive".into()));
        }
        if self.num_classes > 255 {
            return Some(("num_classes", "at most 255 classes (255 is the ignore label)".into()));
        }
        if !(self.bn_eps > 0.0 && self.bn_eps.is_finite()) {
            return Some(("bn_eps", format!("must be a positive number, got {}", self.bn_eps)));
        }
        for (key, g) in [("stem", &self.stem), ("semantic", &self.semantic), ("detail", &self.detail)] {
            if g.widths.contains(&0) {
                return Some(("widths", format!("{key} widths must be positive")));
            }
            if g.blocks.contains(&0) {
                return Some(("blocks", format!("{key} block counts must be positive")));
            }
        }
        if !self.semantic.widths[2].is_multiple_of(2) || !self.detail.widths[2].is_multiple_of(2) {
            return Some(("widths", "stage 6 widths must be even".into()));
        }
        if self.ablation.num_1x1 > 3 {
            return Some(("num_1x1", format!("must be in 0..=3, got {}", self.ablation.num_1x1)));
        }
        None
    }

    pub fn validate(&self) -> Result<()> {
        match self.issue() {
            Some((key, msg)) => Err(Error::InvalidDef(format!("{key}: {msg}"))),
            None => Ok(()),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("network definitions always serialize")
    }
}
