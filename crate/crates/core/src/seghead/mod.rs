//! Multi-channel flow-based instance segmentation head.
//!
//! Each annotated cell is routed to one of `n_out` output channels by its
//! axial position. Every channel carries its own cell-probability, edge and
//! flow maps, so laterally overlapping cells at different depths can be
//! segmented separately.

mod assign;
mod instances;
mod loss;
mod targets;
mod unet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use assign::{assign_channels, assign_cells, random_assignment, ChannelAssignment};
pub use instances::{flows_to_instances, suppress_cross_channel};
pub use loss::{seg_loss, seg_loss_backward, LossBreakdown};
pub use targets::{heat_flow, make_targets, SegTargets};
pub use unet::{HeadCache, HeadModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GtAssignment {
    #[default]
    Kmeans,
    Random,
    Single,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub n_out: usize,
    pub gt_assignment: GtAssignment,
    pub unet_levels: usize,
    pub unet_base_width: usize,
    pub cellprob_threshold: f64,
    pub flow_steps: usize,
    pub flow_step_size: f64,
    pub cross_channel_suppression: bool,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            n_out: 3,
            gt_assignment: GtAssignment::Kmeans,
            unet_levels: 3,
            unet_base_width: 16,
            cellprob_threshold: 0.5,
            flow_steps: 200,
            flow_step_size: 1.0,
            cross_channel_suppression: false,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_out == 0 {
            return Err(Error::Config("n_out must be at least 1".into()));
        }
        if self.gt_assignment == GtAssignment::Single && self.n_out != 1 {
            return Err(Error::Config("single assignment requires n_out = 1".into()));
        }
        if self.unet_levels == 0 || self.unet_base_width == 0 {
            return Err(Error::Config("U-Net levels and width must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.cellprob_threshold) {
            return Err(Error::Config("cellprob_threshold must be in [0, 1)".into()));
        }
        if !(self.flow_step_size > 0.0) {
            return Err(Error::Config("flow_step_size must be positive".into()));
        }
        Ok(())
    }
}

/// Raw head output for one image: `4·n_out` maps ordered
/// [cellprob, edge, flow_y, flow_x] × channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SegPrediction {
    pub n_out: usize,
    pub height: usize,
    pub width: usize,
    pub maps: Vec<f64>,
}

impl SegPrediction {
    pub fn new(n_out: usize, height: usize, width: usize, maps: Vec<f64>) -> Result<Self> {
        if maps.len() != 4 * n_out * height * width {
            return Err(Error::Shape(format!(
                "prediction has {} values, expected {}",
                maps.len(),
                4 * n_out * height * width
            )));
        }
        Ok(Self { n_out, height, width, maps })
    }

    /// Map `kind` (0 cellprob, 1 edge, 2 flow_y, 3 flow_x) of channel `c`.
    pub fn map(&self, kind: usize, c: usize) -> &[f64] {
        let hw = self.height * self.width;
        let i = kind * self.n_out + c;
        &self.maps[i * hw..(i + 1) * hw]
    }

    /// Builds a prediction that reproduces `targets` exactly: logits of ±20
    /// and the target flows.
    pub fn from_targets(targets: &SegTargets) -> Self {
        let (n_out, h, w) = (targets.n_out, targets.height, targets.width);
        let mut maps = Vec::with_capacity(4 * n_out * h * w);
        let logit = |v: &f64| if *v > 0.5 { 20.0 } else { -20.0 };
        for c in 0..n_out {
            maps.extend(targets.cellprob(c).iter().map(logit));
        }
        for c in 0..n_out {
            maps.extend(targets.edges(c).iter().map(logit));
        }
        for c in 0..n_out {
            maps.extend_from_slice(targets.flow_y(c));
        }
        for c in 0..n_out {
            maps.extend_from_slice(targets.flow_x(c));
        }
        Self { n_out, height: h, width: w, maps }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub mask: Array2<bool>,
    pub channel: usize,
}

/// Instances recovered from a prediction. Detections from different
/// channels may overlap.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionSet {
    pub detections: Vec<Detection>,
    /// (H, W)
    pub dims: (usize, usize),
}

impl DetectionSet {
    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    pub fn masks(&self) -> Vec<&Array2<bool>> {
        self.detections.iter().map(|d| &d.mask).collect()
    }
}
