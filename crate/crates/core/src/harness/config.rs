use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::error::{Error, Result};
use crate::pen::{PenConfig, PenVariant};
use crate::seghead::{GtAssignment, HeadConfig};
use crate::synthgen::SceneConfig;
use crate::types::VoxelGeometry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// Learned projection trained jointly with the head.
    #[default]
    Pen,
    /// Maximum intensity projection.
    Mip,
    /// Fixed Gaussian depth embedding.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub input_mode: InputMode,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub batch_size: usize,
    pub crop: usize,
    pub epochs: usize,
    pub iters_per_epoch: usize,
    pub val_size: usize,
    pub seed: u64,
    pub pen_config: PenConfig,
    pub head_config: HeadConfig,
    pub augment_config: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            input_mode: InputMode::Pen,
            lr: 0.02,
            momentum: 0.9,
            weight_decay: 1e-5,
            grad_clip: 5.0,
            batch_size: 8,
            crop: 256,
            epochs: 50,
            iters_per_epoch: 50,
            val_size: 100,
            seed: 0,
            pen_config: PenConfig::default(),
            head_config: HeadConfig::default(),
            augment_config: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("crop", self.crop),
            ("epochs", self.epochs),
            ("iters_per_epoch", self.iters_per_epoch),
            ("val_size", self.val_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.lr >= 0.0 && self.momentum >= 0.0 && self.weight_decay >= 0.0 && self.grad_clip > 0.0) {
            return Err(Error::Config("optimizer settings must be nonnegative, grad_clip positive".into()));
        }
        if self.crop != self.augment_config.crop_hw {
            return Err(Error::Config("crop and augment crop_hw disagree".into()));
        }
        if self.pen_config.z_in != self.augment_config.z_in {
            return Err(Error::Config("PEN z_in and augment z_in disagree".into()));
        }
        let stride = 1usize << self.head_config.unet_levels;
        if self.crop % stride != 0 {
            return Err(Error::Config(format!("crop {} must be divisible by {stride}", self.crop)));
        }
        self.pen_config.validate()?;
        self.head_config.validate()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let flat: FlatTrainConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let cfg = flat.into_config();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&FlatTrainConfig::from_config(self)).expect("flat config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }
}

/// On-disk form of [`TrainConfig`]: one level of keys, all optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FlatTrainConfig {
    input_mode: InputMode,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
    grad_clip: f64,
    batch_size: usize,
    crop: usize,
    epochs: usize,
    iters_per_epoch: usize,
    val_size: usize,
    seed: u64,
    z_in: usize,
    kernel_sizes: Vec<usize>,
    branch_channels: usize,
    pen_variant: PenVariant,
    dropped_kernels: Vec<usize>,
    n_out: usize,
    gt_assignment: GtAssignment,
    unet_levels: usize,
    unet_base_width: usize,
    cellprob_threshold: f64,
    flow_steps: usize,
    flow_step_size: f64,
    cross_channel_suppression: bool,
    n_copies: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_axial_shift: Option<usize>,
}

impl Default for FlatTrainConfig {
    fn default() -> Self {
        Self::from_config(&TrainConfig::default())
    }
}

impl FlatTrainConfig {
    fn from_config(c: &TrainConfig) -> Self {
        Self {
            input_mode: c.input_mode,
            lr: c.lr,
            momentum: c.momentum,
            weight_decay: c.weight_decay,
            grad_clip: c.grad_clip,
            batch_size: c.batch_size,
            crop: c.crop,
            epochs: c.epochs,
            iters_per_epoch: c.iters_per_epoch,
            val_size: c.val_size,
            seed: c.seed,
            z_in: c.pen_config.z_in,
            kernel_sizes: c.pen_config.kernel_sizes.clone(),
            branch_channels: c.pen_config.branch_channels,
            pen_variant: c.pen_config.variant,
            dropped_kernels: c.pen_config.dropped_kernels.clone(),
            n_out: c.head_config.n_out,
            gt_assignment: c.head_config.gt_assignment,
            unet_levels: c.head_config.unet_levels,
            unet_base_width: c.head_config.unet_base_width,
            cellprob_threshold: c.head_config.cellprob_threshold,
            flow_steps: c.head_config.flow_steps,
            flow_step_size: c.head_config.flow_step_size,
            cross_channel_suppression: c.head_config.cross_channel_suppression,
            n_copies: c.augment_config.n_copies,
            max_axial_shift: c.augment_config.max_axial_shift,
        }
    }

    fn into_config(self) -> TrainConfig {
        TrainConfig {
            input_mode: self.input_mode,
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            grad_clip: self.grad_clip,
            batch_size: self.batch_size,
            crop: self.crop,
            epochs: self.epochs,
            iters_per_epoch: self.iters_per_epoch,
            val_size: self.val_size,
            seed: self.seed,
            pen_config: PenConfig {
                kernel_sizes: self.kernel_sizes,
                branch_channels: self.branch_channels,
                z_in: self.z_in,
                out_channels: 3,
                variant: self.pen_variant,
                dropped_kernels: self.dropped_kernels,
            },
            head_config: HeadConfig {
                n_out: self.n_out,
                gt_assignment: self.gt_assignment,
                unet_levels: self.unet_levels,
                unet_base_width: self.unet_base_width,
                cellprob_threshold: self.cellprob_threshold,
                flow_steps: self.flow_steps,
                flow_step_size: self.flow_step_size,
                cross_channel_suppression: self.cross_channel_suppression,
            },
            augment_config: AugmentConfig {
                crop_hw: self.crop,
                z_in: self.z_in,
                n_copies: self.n_copies,
                max_axial_shift: self.max_axial_shift,
                seed: self.seed,
            },
        }
    }
}

/// Fixture generation settings for the `synth` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_scenes: usize,
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    pub n_cells: usize,
    pub diameter_um_min: f64,
    pub diameter_um_max: f64,
    pub intensity_min: f64,
    pub intensity_max: f64,
    pub noise_sigma: f64,
    pub overlap_fraction_target: f64,
    pub dx_um: f64,
    pub dy_um: f64,
    pub dz_um: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let s = SceneConfig::default();
        Self {
            n_scenes: 5,
            depth: s.depth,
            height: s.height,
            width: s.width,
            n_cells: s.n_cells,
            diameter_um_min: s.diameter_um_range.0,
            diameter_um_max: s.diameter_um_range.1,
            intensity_min: s.intensity_range.0,
            intensity_max: s.intensity_range.1,
            noise_sigma: s.noise_sigma,
            overlap_fraction_target: s.overlap_fraction_target,
            dx_um: s.geometry.dx_um,
            dy_um: s.geometry.dy_um,
            dz_um: s.geometry.dz_um,
            seed: s.seed,
        }
    }
}

impl SynthConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Scene settings for scene `index`, each with its own seed.
    pub fn scene(&self, index: usize) -> SceneConfig {
        SceneConfig {
            depth: self.depth,
            height: self.height,
            width: self.width,
            n_cells: self.n_cells,
            diameter_um_range: (self.diameter_um_min, self.diameter_um_max),
            intensity_range: (self.intensity_min, self.intensity_max),
            noise_sigma: self.noise_sigma,
            overlap_fraction_target: self.overlap_fraction_target,
            geometry: VoxelGeometry { dx_um: self.dx_um, dy_um: self.dy_um, dz_um: self.dz_um },
            seed: self.seed.wrapping_mul(1_000_003).wrapping_add(index as u64),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_training_recipe() {
        let c = TrainConfig::default();
        assert_eq!((c.lr, c.momentum, c.weight_decay, c.grad_clip), (0.02, 0.9, 1e-5, 5.0));
        assert_eq!((c.batch_size, c.epochs, c.iters_per_epoch, c.val_size), (8, 50, 50, 100));
        c.validate().unwrap();
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let mut c = TrainConfig::default();
        c.input_mode = InputMode::Mip;
        c.pen_config.dropped_kernels = vec![11];
        c.augment_config.max_axial_shift = Some(4);
        let text = c.to_toml_string();
        assert_eq!(TrainConfig::from_toml_str(&text).unwrap(), c);
        let partial = TrainConfig::from_toml_str("epochs = 3\ncrop = 64\n").unwrap();
        assert_eq!((partial.epochs, partial.augment_config.crop_hw), (3, 64));
        assert!(TrainConfig::from_toml_str("not_a_key = 1").is_err());
    }
}
