use serde::{Deserialize, Serialize};

use super::AdamConfig;
use crate::colormap::ColorMapConfig;
use crate::error::{Error, Result};
use crate::flow::FbConfig;
use crate::grad::L1Norm;
use crate::models::{IspNetConfig, UNetConfig};
use crate::rawproc::PreprocessConfig;

/// How the misaligned target enters the prediction loss.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignMode {
    /// Raw target, all-ones mask.
    NoAlign,
    /// Target warped by the flow, all-ones mask.
    AlignedLoss,
    /// Warped target and the forward-backward consistency mask.
    #[default]
    Mask,
}

impl AlignMode {
    pub const ALL: [AlignMode; 3] = [AlignMode::NoAlign, AlignMode::AlignedLoss, AlignMode::Mask];

    pub fn name(self) -> &'static str {
        match self {
            AlignMode::NoAlign => "no_align",
            AlignMode::AlignedLoss => "aligned_loss",
            AlignMode::Mask => "mask",
        }
    }
}

impl std::str::FromStr for AlignMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AlignMode::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown align mode `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub pred: f64,
    pub map: f64,
    pub constraint: f64,
    pub clr_pred: f64,
    pub reconstruct: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            pred: 1.0,
            map: 1.0,
            constraint: 1.0,
            clr_pred: 1.0,
            reconstruct: 1.0,
        }
    }
}

impl LossWeights {
    fn validate(&self) -> Result<()> {
        let all = [self.pred, self.map, self.constraint, self.clr_pred, self.reconstruct];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Parameter("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Everything a training run reads. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: usize,
    pub batch: usize,
    /// RAW crop side; targets use twice this.
    pub crop: usize,
    pub adam: AdamConfig,
    pub align: AlignMode,
    pub colormap: ColorMapConfig,
    /// Feed the color hint to `F`; when false it sees zeros.
    pub color_hint: bool,
    pub weights: LossWeights,
    pub masked_norm: L1Norm,
    pub isp: IspNetConfig,
    pub unet: UNetConfig,
    pub preprocess: PreprocessConfig,
    /// Color-jitter the ground truth for `F`.
    pub jitter: bool,
    pub jitter_range: f64,
    /// Random flips and 90 degree rotations.
    pub augment: bool,
    pub fb: FbConfig,
    /// Save a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: usize,
    /// Emit a step event every this many steps (0: never).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            steps: 2000,
            batch: 4,
            crop: 16,
            adam: AdamConfig::default(),
            align: AlignMode::Mask,
            colormap: ColorMapConfig::default(),
            color_hint: true,
            weights: LossWeights::default(),
            masked_norm: L1Norm::PerPixel,
            isp: IspNetConfig::default(),
            unet: UNetConfig::toy(),
            preprocess: PreprocessConfig::default(),
            jitter: true,
            jitter_range: 0.2,
            augment: true,
            fb: FbConfig::default(),
            checkpoint_every: 0,
            log_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let c: TrainConfig = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.crop == 0 {
            return Err(Error::Parameter("batch and crop must be positive".into()));
        }
        if !(self.adam.lr >= 0.0) || !(self.jitter_range >= 0.0) {
            return Err(Error::Parameter("learning rate and jitter range must be non-negative".into()));
        }
        self.weights.validate()?;
        self.unet.validate()?;
        Ok(())
    }
}
