//! Deterministic synthetic scenes: the diagonal disk stack used to visualize
//! depth encodings, and randomized ellipsoid cell scenes with a controlled
//! fraction of laterally overlapping, axially separated cells.

use ndarray::{Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::disk_mask;
use crate::types::{AnnotationSet, CellAnnotation, ImageStack, VoxelGeometry};

/// Fine axial samples per acquired slice.
const FINE_PER_SLICE: usize = 10;
/// Half-width of the optical section, in fine samples.
const SECTION_HALF_WIDTH: i64 = 2;
const RETRIES_PER_CELL: usize = 100;

/// A stack with one disk per slice walking down the main diagonal, one
/// diameter per slice. Returns the stack and one annotation per slice.
pub fn gen_disk_stack(
    depth: usize,
    diameter_um: f64,
    geometry: VoxelGeometry,
) -> Result<(ImageStack, AnnotationSet)> {
    geometry.validate()?;
    if depth < 2 {
        return Err(Error::Config(format!("disk stack needs at least 2 slices, got {depth}")));
    }
    let diameter_px = (diameter_um / geometry.dx_um).round();
    if !(diameter_px >= 3.0) {
        return Err(Error::Config(format!(
            "disk diameter {diameter_um} µm is {diameter_px} px, need at least 3"
        )));
    }
    let size = ((depth + 1) as f64 * diameter_px).ceil() as usize;
    let mut voxels = Array3::zeros((depth, size, size));
    let mut cells = Vec::with_capacity(depth);
    for k in 0..depth {
        let center = (k + 1) as f64 * diameter_px;
        let mask = disk_mask(size, size, center, center, diameter_px);
        for ((y, x), &m) in mask.indexed_iter() {
            if m {
                voxels[[k, y, x]] = 1.0;
            }
        }
        cells.push(CellAnnotation {
            id: k as u64,
            mask,
            z_centroid: k as f64,
            z_range: (k, k),
        });
    }
    let stack = ImageStack::new(voxels, geometry)?;
    let annotations = AnnotationSet::new(cells, (depth, size, size))?;
    Ok((stack, annotations))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    pub n_cells: usize,
    pub diameter_um_range: (f64, f64),
    pub intensity_range: (f64, f64),
    pub noise_sigma: f64,
    /// Fraction of cells that laterally overlap another cell with a disjoint
    /// axial range.
    pub overlap_fraction_target: f64,
    pub geometry: VoxelGeometry,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            depth: 9,
            height: 128,
            width: 128,
            n_cells: 8,
            diameter_um_range: (8.0, 14.0),
            intensity_range: (0.5, 1.0),
            noise_sigma: 0.02,
            overlap_fraction_target: 0.35,
            geometry: VoxelGeometry::default(),
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        let (dlo, dhi) = self.diameter_um_range;
        let (ilo, ihi) = self.intensity_range;
        let bad = |m: String| Err(Error::Config(m));
        if self.depth == 0 || self.height == 0 || self.width == 0 {
            return bad("scene dimensions must be positive".into());
        }
        if self.n_cells == 0 {
            return bad("n_cells must be at least 1".into());
        }
        if !(dlo > 0.0 && dlo <= dhi) || dlo / self.geometry.dx_um < 3.0 || dlo / self.geometry.dy_um < 3.0 {
            return bad(format!(
                "diameter range ({dlo}, {dhi}) µm must be ordered and at least 3 px laterally"
            ));
        }
        if !(ilo > 0.0 && ilo <= ihi && ihi <= 1.0) {
            return bad(format!("intensity range ({ilo}, {ihi}) must lie in (0, 1]"));
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be nonnegative".into());
        }
        if !(0.0..=1.0).contains(&self.overlap_fraction_target) {
            return bad("overlap_fraction_target must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// One ellipsoidal cell rendered into the acquired (coarse) slices.
struct RenderedCell {
    /// Per acquired slice, sparse (y, x, value) samples of the object.
    slices: Vec<(usize, Vec<(usize, usize, f64)>)>,
    mask: Array2<bool>,
    z_range: (usize, usize),
    z_centroid: f64,
}

struct Ellipsoid {
    center_px: (f64, f64),
    center_z_um: f64,
    semi_axes_um: [f64; 3],
    /// Rows are the body axes expressed in world (x, y, z) coordinates.
    rotation: [[f64; 3]; 3],
    intensity: f64,
}

impl Ellipsoid {
    fn random(rng: &mut ChaCha8Rng, cfg: &SceneConfig, center_px: (f64, f64), center_z_um: f64) -> Self {
        let (dlo, dhi) = cfg.diameter_um_range;
        let semi_axes_um = [0, 1, 2].map(|_| rng.gen_range(dlo..=dhi) / 2.0);
        let mut q: [f64; 4] = [0.0; 4];
        for v in q.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let [w, x, y, z] = q.map(|v| v / n);
        let rotation = [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y + w * z), 2.0 * (x * z - w * y)],
            [2.0 * (x * y - w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z + w * x)],
            [2.0 * (x * z + w * y), 2.0 * (y * z - w * x), 1.0 - 2.0 * (x * x + y * y)],
        ];
        let (ilo, ihi) = cfg.intensity_range;
        Self {
            center_px,
            center_z_um,
            semi_axes_um,
            rotation,
            intensity: rng.gen_range(ilo..=ihi),
        }
    }

    fn max_semi_axis(&self) -> f64 {
        self.semi_axes_um.iter().copied().fold(0.0, f64::max)
    }

    /// Brightness at a world point (µm offsets from the center); zero outside.
    fn value_at(&self, offset: [f64; 3]) -> f64 {
        let mut rho2 = 0.0;
        for (axis, semi) in self.rotation.iter().zip(self.semi_axes_um) {
            let t = axis[0] * offset[0] + axis[1] * offset[1] + axis[2] * offset[2];
            rho2 += (t / semi).powi(2);
        }
        if rho2 <= 1.0 {
            self.intensity * (1.0 - 0.5 * rho2)
        } else {
            0.0
        }
    }

    fn render(&self, cfg: &SceneConfig) -> Option<RenderedCell> {
        let g = cfg.geometry;
        let r = self.max_semi_axis();
        let (cy, cx) = self.center_px;
        let y0 = ((cy - r / g.dy_um).floor().max(0.0)) as usize;
        let y1 = ((cy + r / g.dy_um).ceil() as i64).min(cfg.height as i64 - 1);
        let x0 = ((cx - r / g.dx_um).floor().max(0.0)) as usize;
        let x1 = ((cx + r / g.dx_um).ceil() as i64).min(cfg.width as i64 - 1);
        if y1 < y0 as i64 || x1 < x0 as i64 {
            return None;
        }
        let fine_dz = g.dz_um / FINE_PER_SLICE as f64;
        let samples = (2 * SECTION_HALF_WIDTH + 1) as f64;
        let mut mask = Array2::from_elem((cfg.height, cfg.width), false);
        let mut slices = Vec::new();
        let (mut weight, mut weighted_z) = (0.0, 0.0);
        for k in 0..cfg.depth {
            let plane = k as f64 * g.dz_um;
            if (plane - self.center_z_um).abs() > r + SECTION_HALF_WIDTH as f64 * fine_dz {
                continue;
            }
            let mut pixels = Vec::new();
            for y in y0..=y1 as usize {
                for x in x0..=x1 as usize {
                    let dy = (y as f64 - cy) * g.dy_um;
                    let dx = (x as f64 - cx) * g.dx_um;
                    let mut acc = 0.0;
                    for j in -SECTION_HALF_WIDTH..=SECTION_HALF_WIDTH {
                        let dz = plane + j as f64 * fine_dz - self.center_z_um;
                        acc += self.value_at([dx, dy, dz]);
                    }
                    let v = acc / samples;
                    if v > 0.0 {
                        pixels.push((y, x, v));
                        mask[[y, x]] = true;
                        weight += v;
                        weighted_z += v * k as f64;
                    }
                }
            }
            if !pixels.is_empty() {
                slices.push((k, pixels));
            }
        }
        if slices.is_empty() {
            return None;
        }
        let z_range = (slices[0].0, slices[slices.len() - 1].0);
        let z_centroid = (weighted_z / weight).clamp(z_range.0 as f64, z_range.1 as f64);
        Some(RenderedCell {
            slices,
            mask,
            z_range,
            z_centroid,
        })
    }
}

/// Occupied lateral area dilated by one pixel so separate units never touch.
fn dilated_hits(occupied: &Array2<bool>, mask: &Array2<bool>) -> bool {
    let (h, w) = mask.dim();
    for ((y, x), &m) in mask.indexed_iter() {
        if !m {
            continue;
        }
        for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
            for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                if occupied[[yy, xx]] {
                    return true;
                }
            }
        }
    }
    false
}

fn masks_intersect(a: &Array2<bool>, b: &Array2<bool>) -> bool {
    a.iter().zip(b.iter()).any(|(&p, &q)| p && q)
}

/// Places `n_cells` random ellipsoids, subsamples them axially and adds
/// noise. A `round(target * n / 2)` subset of pairs is stacked axially
/// (lateral overlap, disjoint z ranges); every other placement is laterally
/// separated from all others.
pub fn gen_cell_scene(config: &SceneConfig) -> Result<(ImageStack, AnnotationSet)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let g = config.geometry;
    let n = config.n_cells;
    let n_pairs = ((config.overlap_fraction_target * n as f64 / 2.0).round() as usize).min(n / 2);
    let n_single = n - 2 * n_pairs;
    let z_extent_um = (config.depth.saturating_sub(1)) as f64 * g.dz_um;

    let mut occupied = Array2::from_elem((config.height, config.width), false);
    let mut placed: Vec<RenderedCell> = Vec::with_capacity(n);
    let mut achieved_pairs = 0usize;

    let random_center = |rng: &mut ChaCha8Rng, margin_px: f64| {
        let ylo = margin_px.min(config.height as f64 / 2.0);
        let xlo = margin_px.min(config.width as f64 / 2.0);
        let cy = rng.gen_range(ylo..=(config.height as f64 - 1.0 - ylo).max(ylo));
        let cx = rng.gen_range(xlo..=(config.width as f64 - 1.0 - xlo).max(xlo));
        (cy, cx)
    };
    let capacity_error = |pairs: usize| Error::Capacity {
        achieved: 2.0 * pairs as f64 / n as f64,
        target: config.overlap_fraction_target,
    };

    // Pairs first: they need the most room.
    for _ in 0..n_pairs {
        let mut done = false;
        for _ in 0..RETRIES_PER_CELL {
            let margin = config.diameter_um_range.1 / 2.0 / g.dx_um.min(g.dy_um);
            let center = random_center(&mut rng, margin);
            let z_lo = rng.gen_range(0.0..=z_extent_um);
            let lower = Ellipsoid::random(&mut rng, config, center, z_lo);
            let Some(a) = lower.render(config) else { continue };
            if dilated_hits(&occupied, &a.mask) {
                continue;
            }
            let jitter = 0.3 * lower.max_semi_axis() / g.dx_um;
            let partner_center = (
                center.0 + rng.gen_range(-jitter..=jitter),
                center.1 + rng.gen_range(-jitter..=jitter),
            );
            let partner_z = rng.gen_range(0.0..=z_extent_um);
            let upper = Ellipsoid::random(&mut rng, config, partner_center, partner_z);
            let Some(b) = upper.render(config) else { continue };
            let disjoint_z = a.z_range.1 < b.z_range.0 || b.z_range.1 < a.z_range.0;
            if !disjoint_z || !masks_intersect(&a.mask, &b.mask) || dilated_hits(&occupied, &b.mask) {
                continue;
            }
            for m in [&a.mask, &b.mask] {
                occupied.zip_mut_with(m, |o, &v| *o |= v);
            }
            placed.push(a);
            placed.push(b);
            achieved_pairs += 1;
            done = true;
            break;
        }
        if !done {
            return Err(capacity_error(achieved_pairs));
        }
    }
    for _ in 0..n_single {
        let mut done = false;
        for _ in 0..RETRIES_PER_CELL {
            let margin = config.diameter_um_range.1 / 2.0 / g.dx_um.min(g.dy_um);
            let center = random_center(&mut rng, margin);
            let z = rng.gen_range(0.0..=z_extent_um);
            let cell = Ellipsoid::random(&mut rng, config, center, z);
            let Some(rendered) = cell.render(config) else { continue };
            if dilated_hits(&occupied, &rendered.mask) {
                continue;
            }
            occupied.zip_mut_with(&rendered.mask, |o, &v| *o |= v);
            placed.push(rendered);
            done = true;
            break;
        }
        if !done {
            return Err(capacity_error(achieved_pairs));
        }
    }

    let mut voxels = Array3::<f64>::zeros((config.depth, config.height, config.width));
    for cell in &placed {
        for (k, pixels) in &cell.slices {
            for &(y, x, v) in pixels {
                let slot = &mut voxels[[*k, y, x]];
                *slot = slot.max(v);
            }
        }
    }
    if config.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, config.noise_sigma).expect("valid sigma");
        for v in voxels.iter_mut() {
            *v = (*v + noise.sample(&mut rng)).max(0.0);
        }
    }

    let cells = placed
        .into_iter()
        .enumerate()
        .map(|(i, c)| CellAnnotation {
            id: i as u64,
            mask: c.mask,
            z_centroid: c.z_centroid,
            z_range: c.z_range,
        })
        .collect();
    let annotations = AnnotationSet::new(cells, (config.depth, config.height, config.width))?;
    let achieved = axial_overlap_fraction(&annotations);
    if (achieved - config.overlap_fraction_target).abs() > 0.10 {
        return Err(Error::Capacity {
            achieved,
            target: config.overlap_fraction_target,
        });
    }
    Ok((ImageStack::new(voxels, g)?, annotations))
}

/// Fraction of cells whose mask intersects another cell's mask while their
/// z ranges are disjoint.
pub fn axial_overlap_fraction(set: &AnnotationSet) -> f64 {
    if set.cells.is_empty() {
        return 0.0;
    }
    let cells = &set.cells;
    let overlapping = (0..cells.len())
        .filter(|&i| {
            cells.iter().enumerate().any(|(j, other)| {
                j != i
                    && (cells[i].z_range.1 < other.z_range.0 || other.z_range.1 < cells[i].z_range.0)
                    && masks_intersect(&cells[i].mask, &other.mask)
            })
        })
        .count();
    overlapping as f64 / cells.len() as f64
}
