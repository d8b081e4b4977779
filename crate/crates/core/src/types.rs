//! Domain types shared by every stage: voxel stacks, per-cell annotations and
//! RGB projections.

use std::collections::HashSet;

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical voxel pitch in micrometres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelGeometry {
    pub dx_um: f64,
    pub dy_um: f64,
    pub dz_um: f64,
}

impl Default for VoxelGeometry {
    fn default() -> Self {
        Self {
            dx_um: 0.538,
            dy_um: 0.538,
            dz_um: 10.0,
        }
    }
}

impl VoxelGeometry {
    pub fn new(dx_um: f64, dy_um: f64, dz_um: f64) -> Result<Self> {
        let geometry = Self {
            dx_um,
            dy_um,
            dz_um,
        };
        geometry.validate()?;
        Ok(geometry)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("dx", self.dx_um), ("dy", self.dy_um), ("dz", self.dz_um)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Validation(format!(
                    "voxel size {name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// A Z×H×W grayscale voxel grid.
///
/// Stacks loaded from disk or generated are nonnegative. Preprocessed stacks
/// (mean-subtracted before max-combination) may carry negative values and are
/// built through [`ImageStack::from_signed`].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageStack {
    voxels: Array3<f64>,
    geometry: VoxelGeometry,
}

impl ImageStack {
    pub fn new(voxels: Array3<f64>, geometry: VoxelGeometry) -> Result<Self> {
        if let Some(v) = voxels.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Validation(format!(
                "stack voxels must be finite and nonnegative, found {v}"
            )));
        }
        Self::from_signed(voxels, geometry)
    }

    pub fn from_signed(voxels: Array3<f64>, geometry: VoxelGeometry) -> Result<Self> {
        geometry.validate()?;
        let (z, h, w) = voxels.dim();
        if z == 0 || h == 0 || w == 0 {
            return Err(Error::Validation(format!(
                "stack dimensions must be positive, got {z}x{h}x{w}"
            )));
        }
        if voxels.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("stack voxels must be finite".into()));
        }
        Ok(Self { voxels, geometry })
    }

    pub fn zeros(depth: usize, height: usize, width: usize, geometry: VoxelGeometry) -> Self {
        Self {
            voxels: Array3::zeros((depth, height, width)),
            geometry,
        }
    }

    pub fn depth(&self) -> usize {
        self.voxels.dim().0
    }

    pub fn height(&self) -> usize {
        self.voxels.dim().1
    }

    pub fn width(&self) -> usize {
        self.voxels.dim().2
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.voxels.dim()
    }

    pub fn voxels(&self) -> &Array3<f64> {
        &self.voxels
    }

    pub fn geometry(&self) -> VoxelGeometry {
        self.geometry
    }

    pub fn into_voxels(self) -> Array3<f64> {
        self.voxels
    }

    /// Zero-pads (centered) along z to `depth` slices. Extra slices go to the
    /// end when the padding is odd.
    pub fn center_pad_z(&self, depth: usize) -> Result<ImageStack> {
        let (z, h, w) = self.dims();
        if z > depth {
            return Err(Error::Shape(format!(
                "stack depth {z} exceeds target depth {depth}"
            )));
        }
        let front = (depth - z) / 2;
        let mut out = Array3::zeros((depth, h, w));
        out.slice_mut(ndarray::s![front..front + z, .., ..])
            .assign(&self.voxels);
        Ok(ImageStack {
            voxels: out,
            geometry: self.geometry,
        })
    }

    /// Copy with the stack mean subtracted from every voxel.
    pub fn mean_subtracted(&self) -> ImageStack {
        let mean = self.voxels.mean().unwrap_or(0.0);
        ImageStack {
            voxels: self.voxels.mapv(|v| v - mean),
            geometry: self.geometry,
        }
    }

    pub fn reversed_z(&self) -> ImageStack {
        let mut voxels = self.voxels.clone();
        voxels.invert_axis(Axis(0));
        ImageStack {
            voxels: voxels.as_standard_layout().to_owned(),
            geometry: self.geometry,
        }
    }
}

/// Ground truth for one cell: its projected 2D mask and axial extent in
/// slice-index units.
#[derive(Debug, Clone, PartialEq)]
pub struct CellAnnotation {
    pub id: u64,
    pub mask: Array2<bool>,
    pub z_centroid: f64,
    pub z_range: (usize, usize),
}

impl CellAnnotation {
    pub fn area(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Mean (row, col) of the mask pixels.
    pub fn centroid_yx(&self) -> (f64, f64) {
        let mut sy = 0.0;
        let mut sx = 0.0;
        let mut n = 0.0;
        for ((y, x), &m) in self.mask.indexed_iter() {
            if m {
                sy += y as f64;
                sx += x as f64;
                n += 1.0;
            }
        }
        if n == 0.0 {
            (0.0, 0.0)
        } else {
            (sy / n, sx / n)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet {
    pub cells: Vec<CellAnnotation>,
    /// (depth, height, width) of the annotated stack.
    pub dims: (usize, usize, usize),
}

impl AnnotationSet {
    pub fn new(cells: Vec<CellAnnotation>, dims: (usize, usize, usize)) -> Result<Self> {
        let set = Self { cells, dims };
        set.validate()?;
        Ok(set)
    }

    pub fn empty(dims: (usize, usize, usize)) -> Self {
        Self {
            cells: Vec::new(),
            dims,
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let (depth, h, w) = self.dims;
        let mut ids = HashSet::new();
        for cell in &self.cells {
            if !ids.insert(cell.id) {
                return Err(Error::Validation(format!("duplicate cell id {}", cell.id)));
            }
            if cell.mask.dim() != (h, w) {
                return Err(Error::Validation(format!(
                    "cell {} mask is {:?}, expected ({h}, {w})",
                    cell.id,
                    cell.mask.dim()
                )));
            }
            if !cell.mask.iter().any(|&m| m) {
                return Err(Error::Validation(format!("cell {} has an empty mask", cell.id)));
            }
            let (lo, hi) = cell.z_range;
            let zc = cell.z_centroid;
            if !(zc.is_finite() && lo as f64 <= zc && zc <= hi as f64 && hi < depth) {
                return Err(Error::Validation(format!(
                    "cell {} z statistics inconsistent: centroid {zc}, range ({lo}, {hi}), depth {depth}",
                    cell.id
                )));
            }
        }
        Ok(())
    }
}

/// A 3×H×W image with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct RgbProjection {
    pixels: Array3<f64>,
}

impl RgbProjection {
    /// Wraps a 3×H×W array, clamping values into [0, 1].
    pub fn new(pixels: Array3<f64>) -> Result<Self> {
        let (c, h, w) = pixels.dim();
        if c != 3 || h == 0 || w == 0 {
            return Err(Error::Shape(format!(
                "projection must be 3xHxW, got {c}x{h}x{w}"
            )));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("projection values must be finite".into()));
        }
        Ok(Self {
            pixels: pixels.mapv(|v| v.clamp(0.0, 1.0)),
        })
    }

    pub fn pixels(&self) -> &Array3<f64> {
        &self.pixels
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().2
    }

    pub fn into_pixels(self) -> Array3<f64> {
        self.pixels
    }
}
