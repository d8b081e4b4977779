//! Fixed (non-learned) 3D→2D projections: maximum intensity projection and
//! the Gaussian linear depth embedding.

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normalize::normalize_unit;
use crate::types::{ImageStack, RgbProjection};

/// Per-pixel maximum over z, replicated into three channels and normalized.
pub fn mip(stack: &ImageStack) -> RgbProjection {
    let max = stack
        .voxels()
        .fold_axis(Axis(0), f64::NEG_INFINITY, |&acc, &v| acc.max(v));
    let (h, w) = max.dim();
    let rgb = Array3::from_shape_fn((3, h, w), |(_, y, x)| max[[y, x]]);
    RgbProjection::new(normalize_unit(&rgb)).expect("3xHxW")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Max,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthEmbedConfig {
    pub n_channels: usize,
    pub reduction: Reduction,
}

impl Default for DepthEmbedConfig {
    fn default() -> Self {
        Self {
            n_channels: 3,
            reduction: Reduction::Max,
        }
    }
}

/// Channel weights over slices: Gaussians with peaks spread evenly over
/// [0, Z−1] and a shared σ chosen so adjacent curves cross at half maximum.
///
/// A single channel degenerates to uniform weight 1.
pub fn gaussian_weights(depth: usize, n_channels: usize) -> Result<Array2<f64>> {
    if n_channels == 0 || n_channels > depth {
        return Err(Error::Config(format!(
            "depth embedding needs 1 <= channels <= Z, got {n_channels} channels for Z = {depth}"
        )));
    }
    if n_channels == 1 {
        return Ok(Array2::ones((1, depth)));
    }
    let spacing = (depth - 1) as f64 / (n_channels - 1) as f64;
    let sigma = spacing / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
    Ok(Array2::from_shape_fn((n_channels, depth), |(c, z)| {
        let mu = c as f64 * spacing;
        (-(z as f64 - mu).powi(2) / (2.0 * sigma * sigma)).exp()
    }))
}

/// Weighted reduction over z for each channel, before normalization.
pub fn depth_embed_channels(stack: &ImageStack, config: &DepthEmbedConfig) -> Result<Array3<f64>> {
    let (depth, h, w) = stack.dims();
    let weights = gaussian_weights(depth, config.n_channels)?;
    let voxels = stack.voxels();
    let mut out = Array3::zeros((config.n_channels, h, w));
    for c in 0..config.n_channels {
        let mut plane = out.index_axis_mut(Axis(0), c);
        match config.reduction {
            Reduction::Max => plane.fill(f64::NEG_INFINITY),
            Reduction::Sum => plane.fill(0.0),
        }
        for z in 0..depth {
            let wz = weights[[c, z]];
            let slice = voxels.index_axis(Axis(0), z);
            match config.reduction {
                Reduction::Max => plane.zip_mut_with(&slice, |acc, &v| *acc = acc.max(wz * v)),
                Reduction::Sum => plane.zip_mut_with(&slice, |acc, &v| *acc += wz * v),
            }
        }
    }
    Ok(out)
}

/// Gaussian depth embedding into RGB (low z → red, high z → blue).
///
/// One channel is replicated into all three; two channels fill red and green
/// and leave blue empty. More than three channels cannot be shown as RGB.
pub fn linear_depth_embed(stack: &ImageStack, config: &DepthEmbedConfig) -> Result<RgbProjection> {
    if config.n_channels > 3 {
        return Err(Error::Config(format!(
            "an RGB embedding holds at most 3 channels, got {}",
            config.n_channels
        )));
    }
    let raw = depth_embed_channels(stack, config)?;
    let (n, h, w) = raw.dim();
    let rgb = Array3::from_shape_fn((3, h, w), |(c, y, x)| match n {
        1 => raw[[0, y, x]],
        _ if c < n => raw[[c, y, x]],
        // The unused blue channel sits at the lowest embedded value so it
        // does not shift the joint normalization.
        _ => raw.iter().copied().fold(f64::INFINITY, f64::min),
    });
    RgbProjection::new(normalize_unit(&rgb))
}
