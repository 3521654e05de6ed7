use cad_core::PolarGridSpec;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, NetError};

/// Per-point input features of the pillar encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// Sector-local x and y, z, intensity, radial offset from the pillar
    /// center, angular offset from the sector center, height above `z_min`.
    Augmented,
    /// Sensor-frame x, y, z and intensity; not rotation equivariant.
    Raw,
}

impl FeatureMode {
    pub fn width(self) -> usize {
        match self {
            FeatureMode::Augmented => 7,
            FeatureMode::Raw => 4,
        }
    }
}

/// How historical frames are combined with the current one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// Stability attention over historical frames.
    Sam,
    /// Channelwise max over all frames, equivalent to encoding the merged
    /// cloud as a single frame.
    Merge,
    /// Current frame only.
    Single,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PillarEncoderCfg {
    pub features: FeatureMode,
    /// Shared MLP widths; the last one is the pillar channel count.
    pub widths: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamCfg {
    pub fusion: Fusion,
    /// Query/key embedding width.
    pub embed_dim: usize,
    /// Channels of the fused feature.
    pub fused_channels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneCfg {
    /// Encoder stage widths; decoder stages mirror them.
    pub channels: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub grid: PolarGridSpec,
    /// Historical frames per sample.
    pub f: usize,
    pub encoder: PillarEncoderCfg,
    pub sam: SamCfg,
    pub backbone: BackboneCfg,
    /// Parameter initialization seed.
    pub seed: u64,
}

impl NetConfig {
    /// Default widths: 32 pillar channels, 16-wide embeddings, 32 fused
    /// channels, backbone (32, 64, 128).
    pub fn new(grid: PolarGridSpec, f: usize) -> Self {
        Self {
            grid,
            f,
            encoder: PillarEncoderCfg { features: FeatureMode::Augmented, widths: vec![16, 32] },
            sam: SamCfg { fusion: Fusion::Sam, embed_dim: 16, fused_channels: 32 },
            backbone: BackboneCfg { channels: [32, 64, 128] },
            seed: 0,
        }
    }

    /// Narrow variant for CPU training runs.
    pub fn small(grid: PolarGridSpec, f: usize) -> Self {
        Self {
            encoder: PillarEncoderCfg { features: FeatureMode::Augmented, widths: vec![16, 16] },
            sam: SamCfg { fusion: Fusion::Sam, embed_dim: 8, fused_channels: 16 },
            backbone: BackboneCfg { channels: [16, 32, 64] },
            ..Self::new(grid, f)
        }
    }

    pub fn pillar_channels(&self) -> usize {
        *self.encoder.widths.last().expect("validated")
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.encoder.widths.is_empty() || self.encoder.widths.contains(&0) {
            return Err(config_err("encoder widths must be non-empty and positive"));
        }
        if self.sam.embed_dim == 0 || self.sam.fused_channels == 0 || self.backbone.channels.contains(&0) {
            return Err(config_err("channel widths must be positive"));
        }
        if self.sam.fusion != Fusion::Single && self.f == 0 {
            return Err(config_err("multi-frame fusion needs f >= 1"));
        }
        if !self.grid.n_r().is_multiple_of(8) || !self.grid.n_phi().is_multiple_of(8) {
            return Err(config_err("grid sizes must be multiples of 8"));
        }
        Ok(())
    }
}
