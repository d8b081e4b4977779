//! Density augmentation: rotated, flipped and axially shifted copies of a
//! cropped stack are merged by voxelwise maximum so that one training sample
//! holds several times more cells, many of them overlapping laterally.

use ndarray::{s, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seghead::{assign_cells, make_targets, ChannelAssignment, HeadConfig, SegTargets};
use crate::types::{AnnotationSet, CellAnnotation, ImageStack};

const CROP_RETRIES: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub crop_hw: usize,
    pub z_in: usize,
    pub n_copies: usize,
    /// `None` uses `z_in` minus the native stack depth.
    pub max_axial_shift: Option<usize>,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { crop_hw: 256, z_in: 27, n_copies: 2, max_axial_shift: None, seed: 0 }
    }
}

impl AugmentConfig {
    fn shift_for(&self, depth: usize) -> Result<usize> {
        if self.crop_hw == 0 {
            return Err(Error::Config("crop_hw must be positive".into()));
        }
        if depth > self.z_in {
            return Err(Error::Config(format!(
                "stack depth {depth} exceeds z_in {}",
                self.z_in
            )));
        }
        let shift = self.max_axial_shift.unwrap_or(self.z_in - depth);
        if depth + shift > self.z_in {
            return Err(Error::Config(format!(
                "depth {depth} plus max shift {shift} exceeds z_in {}",
                self.z_in
            )));
        }
        Ok(shift)
    }
}

/// Lateral transform: `rot` quarter turns after an optional horizontal flip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PlaneTransform {
    pub rot: usize,
    pub flip: bool,
}

impl PlaneTransform {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        Self { rot: rng.gen_range(0..4), flip: rng.gen_bool(0.5) }
    }

    pub fn apply<T: Clone>(&self, a: &Array2<T>) -> Array2<T> {
        let mut v = a.view();
        if self.flip {
            v.invert_axis(ndarray::Axis(1));
        }
        for _ in 0..self.rot % 4 {
            // counter-clockwise quarter turn
            v = v.reversed_axes();
            v.invert_axis(ndarray::Axis(0));
        }
        v.as_standard_layout().to_owned()
    }

    pub fn apply_stack(&self, a: &Array3<f64>) -> Array3<f64> {
        let (z, h, w) = a.dim();
        let (oh, ow) = if self.rot % 2 == 1 { (w, h) } else { (h, w) };
        let mut out = Array3::zeros((z, oh, ow));
        for k in 0..z {
            out.slice_mut(s![k, .., ..]).assign(&self.apply(&a.slice(s![k, .., ..]).to_owned()));
        }
        out
    }
}

/// Random choices made by one [`densify`] call.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DensifyTrace {
    /// Top-left corner of the crop in the source frame (may be negative).
    pub crop_origin: (i64, i64),
    pub copy_transforms: Vec<PlaneTransform>,
    pub shifts: Vec<usize>,
    /// Slices of zero padding placed before the merged frame.
    pub z_offset: usize,
    pub final_transform: PlaneTransform,
}

fn crop_plane<T: Clone + Default>(a: &Array2<T>, y0: i64, x0: i64, size: usize) -> Array2<T> {
    let (h, w) = a.dim();
    Array2::from_shape_fn((size, size), |(y, x)| {
        let (sy, sx) = (y0 + y as i64, x0 + x as i64);
        if sy < 0 || sx < 0 || sy >= h as i64 || sx >= w as i64 {
            T::default()
        } else {
            a[[sy as usize, sx as usize]].clone()
        }
    })
}

fn shifted(cell: &CellAnnotation, t: usize, id: u64, mask: Array2<bool>) -> CellAnnotation {
    CellAnnotation {
        id,
        mask,
        z_centroid: cell.z_centroid + t as f64,
        z_range: (cell.z_range.0 + t, cell.z_range.1 + t),
    }
}

pub fn densify(stack: &ImageStack, annotations: &AnnotationSet, config: &AugmentConfig) -> Result<(ImageStack, AnnotationSet)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    densify_with_rng(stack, annotations, config, &mut rng).map(|(s, a, _)| (s, a))
}

/// [`densify`] driven by a caller-owned generator, also returning the
/// random choices it made.
pub fn densify_with_rng(
    stack: &ImageStack,
    annotations: &AnnotationSet,
    config: &AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(ImageStack, AnnotationSet, DensifyTrace)> {
    if annotations.is_empty() {
        return Err(Error::Validation("densify needs at least one annotated cell".into()));
    }
    let (depth, h, w) = stack.dims();
    if annotations.dims != (depth, h, w) {
        return Err(Error::Shape("annotations do not match the stack".into()));
    }
    let max_shift = config.shift_for(depth)?;
    let size = config.crop_hw;
    let centered = stack.mean_subtracted();

    let mut crop = None;
    for _ in 0..CROP_RETRIES {
        let cell = &annotations.cells[rng.gen_range(0..annotations.len())];
        let (cy, cx) = cell.centroid_yx();
        let y0 = cy.round() as i64 - (size / 2) as i64;
        let x0 = cx.round() as i64 - (size / 2) as i64;
        let cells: Vec<(usize, Array2<bool>)> = annotations
            .cells
            .iter()
            .enumerate()
            .map(|(i, c)| (i, crop_plane(&c.mask, y0, x0, size)))
            .filter(|(_, m)| m.iter().any(|&v| v))
            .collect();
        if !cells.is_empty() {
            crop = Some((y0, x0, cells));
            break;
        }
    }
    let (y0, x0, kept) =
        crop.ok_or_else(|| Error::Validation("no crop contained annotated pixels".into()))?;

    let mut base = Array3::zeros((depth, size, size));
    for k in 0..depth {
        let plane = centered.voxels().slice(s![k, .., ..]).to_owned();
        base.slice_mut(s![k, .., ..]).assign(&crop_plane(&plane, y0, x0, size));
    }

    let mut transforms = Vec::with_capacity(config.n_copies);
    let mut shifts = Vec::with_capacity(config.n_copies);
    for _ in 0..config.n_copies {
        transforms.push(PlaneTransform::random(rng));
        shifts.push(rng.gen_range(0..=max_shift));
    }
    let frame = depth + shifts.iter().copied().max().unwrap_or(0);
    let mut merged = Array3::zeros((frame, size, size));
    merged.slice_mut(s![..depth, .., ..]).assign(&base);
    let mut cells: Vec<CellAnnotation> = Vec::with_capacity(kept.len() * (config.n_copies + 1));
    for (i, m) in &kept {
        cells.push(shifted(&annotations.cells[*i], 0, cells.len() as u64, m.clone()));
    }
    for (tf, &t) in transforms.iter().zip(&shifts) {
        let copy = tf.apply_stack(&base);
        let mut region = merged.slice_mut(s![t..t + depth, .., ..]);
        region.zip_mut_with(&copy, |a, &b| *a = f64::max(*a, b));
        if frame > depth {
            // Outside the copy's span the copy is zero padding.
            for k in (0..frame).filter(|&k| k < t || k >= t + depth) {
                merged.slice_mut(s![k, .., ..]).mapv_inplace(|v| v.max(0.0));
            }
        }
        for (i, m) in &kept {
            cells.push(shifted(&annotations.cells[*i], t, cells.len() as u64, tf.apply(m)));
        }
    }

    let z_offset = (config.z_in - frame) / 2;
    let final_tf = PlaneTransform::random(rng);
    let mut out = Array3::zeros((config.z_in, size, size));
    out.slice_mut(s![z_offset..z_offset + frame, .., ..])
        .assign(&final_tf.apply_stack(&merged));
    let cells = cells
        .into_iter()
        .map(|c| {
            let mask = final_tf.apply(&c.mask);
            shifted(&c, z_offset, c.id, mask)
        })
        .collect();
    let out_stack = ImageStack::from_signed(out, stack.geometry())?;
    let out_set = AnnotationSet::new(cells, (config.z_in, size, size))?;
    let trace = DensifyTrace {
        crop_origin: (y0, x0),
        copy_transforms: transforms,
        shifts,
        z_offset,
        final_transform: final_tf,
    };
    Ok((out_stack, out_set, trace))
}

/// One augmented training example with its supervision.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub stack: ImageStack,
    pub annotations: AnnotationSet,
    pub assignment: ChannelAssignment,
    pub targets: SegTargets,
}

/// Draws a dataset item, densifies it and builds targets from the
/// post-augmentation axial positions.
pub fn batch_sample(
    dataset: &[(ImageStack, AnnotationSet)],
    config: &AugmentConfig,
    head: &HeadConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainingSample> {
    if dataset.is_empty() {
        return Err(Error::Validation("empty dataset".into()));
    }
    let (stack, ann) = &dataset[rng.gen_range(0..dataset.len())];
    let (stack, annotations, _) = densify_with_rng(stack, ann, config, rng)?;
    let assignment = assign_cells(&annotations, head, rng.gen())?;
    let targets = make_targets(&annotations, &assignment, head.n_out)?;
    Ok(TrainingSample { stack, annotations, assignment, targets })
}
