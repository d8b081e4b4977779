use ndarray::{s, Array2, Array3};

use super::model::Model;
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, iou_matrix, match_detections, MetricsReport};
use crate::seghead::{Detection, DetectionSet};
use crate::types::{AnnotationSet, ImageStack};

/// Pooled counts and summed true-positive IoU over several images.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PooledCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub iou_sum: f64,
}

impl PooledCounts {
    pub fn add(&mut self, r: &MetricsReport) {
        self.tp += r.tp;
        self.fp += r.fp;
        self.fn_ += r.fn_;
        self.iou_sum += r.quality * r.tp as f64;
    }

    pub fn report(&self, threshold: f64) -> MetricsReport {
        MetricsReport::from_counts(self.tp, self.fp, self.fn_, self.iou_sum, threshold)
    }
}

/// Metrics of one detection set against ground truth.
pub fn score_detections(gt: &AnnotationSet, det: &DetectionSet, threshold: f64) -> Result<MetricsReport> {
    let g: Vec<&Array2<bool>> = gt.cells.iter().map(|c| &c.mask).collect();
    let p = det.masks();
    Ok(compute_metrics(&match_detections(&iou_matrix(&g, &p)?, threshold)))
}

/// Runs any detector over a dataset and pools TP/FP/FN.
pub fn evaluate_with<F>(dataset: &[(ImageStack, AnnotationSet)], threshold: f64, mut detect: F) -> Result<(MetricsReport, Vec<MetricsReport>)>
where
    F: FnMut(&ImageStack, &AnnotationSet) -> Result<DetectionSet>,
{
    if dataset.is_empty() {
        return Err(Error::Validation("evaluation dataset is empty".into()));
    }
    let mut pooled = PooledCounts::default();
    let mut per_image = Vec::with_capacity(dataset.len());
    for (stack, gt) in dataset {
        let det = detect(stack, gt)?;
        let r = score_detections(gt, &det, threshold)?;
        pooled.add(&r);
        per_image.push(r);
    }
    Ok((pooled.report(threshold), per_image))
}

/// Eval-mode detection over a dataset with pooled metrics.
pub fn evaluate(model: &Model, dataset: &[(ImageStack, AnnotationSet)], threshold: f64) -> Result<MetricsReport> {
    evaluate_with(dataset, threshold, |s, _| model.detect(s)).map(|(r, _)| r)
}

fn touches(mask: &Array2<bool>, y0: usize, y1: usize, x0: usize, x1: usize) -> bool {
    mask.slice(s![y0..y1, x0..x1]).iter().any(|&v| v)
}

/// Sliding-window detection with any per-tile detector.
///
/// Adjacent tiles share `overlap` pixels. A detection touching the strip of
/// width `overlap / 4` along an edge shared with a neighbour is left to that
/// neighbour; remaining duplicates with IoU above 0.5 are merged.
pub fn tiled_detect<F>(stack: &ImageStack, tile: usize, overlap: usize, mut detect: F) -> Result<DetectionSet>
where
    F: FnMut(&ImageStack) -> Result<DetectionSet>,
{
    if tile == 0 || tile <= 2 * overlap {
        return Err(Error::Config(format!(
            "tile {tile} must exceed twice the overlap {overlap}"
        )));
    }
    let (depth, h, w) = stack.dims();
    if h <= tile && w <= tile {
        return detect(stack);
    }
    let step = tile - overlap;
    let (hp, wp) = (h.max(tile), w.max(tile));
    let origins = |extent: usize| -> Vec<usize> {
        let mut o: Vec<usize> = (0..).map(|i| i * step).take_while(|&v| v + tile < extent).collect();
        o.push(extent - tile);
        o.dedup();
        o
    };
    let (oy, ox) = (origins(hp), origins(wp));
    let strip = (overlap / 4).max(1);
    let mut padded = Array3::zeros((depth, hp, wp));
    padded.slice_mut(s![.., ..h, ..w]).assign(stack.voxels());
    let mut kept: Vec<Detection> = Vec::new();
    for (iy, &y0) in oy.iter().enumerate() {
        for (ix, &x0) in ox.iter().enumerate() {
            let sub = padded.slice(s![.., y0..y0 + tile, x0..x0 + tile]).to_owned();
            let sub = ImageStack::from_signed(sub, stack.geometry())?;
            let det = detect(&sub)?;
            let top = iy > 0;
            let bottom = iy + 1 < oy.len();
            let left = ix > 0;
            let right = ix + 1 < ox.len();
            for d in det.detections {
                let m = &d.mask;
                let deferred = (top && touches(m, 0, strip, 0, tile))
                    || (bottom && touches(m, tile - strip, tile, 0, tile))
                    || (left && touches(m, 0, tile, 0, strip))
                    || (right && touches(m, 0, tile, tile - strip, tile));
                if deferred {
                    continue;
                }
                let mut full = Array2::from_elem((h, w), false);
                for ((y, x), &v) in m.indexed_iter() {
                    let (gy, gx) = (y0 + y, x0 + x);
                    if v && gy < h && gx < w {
                        full[[gy, gx]] = true;
                    }
                }
                if !full.iter().any(|&v| v) {
                    continue;
                }
                let dup = kept.iter().any(|k| iou(&k.mask, &full) > 0.5);
                if !dup {
                    kept.push(Detection { mask: full, channel: d.channel });
                }
            }
        }
    }
    Ok(DetectionSet { detections: kept, dims: (h, w) })
}

fn iou(a: &Array2<bool>, b: &Array2<bool>) -> f64 {
    let (mut i, mut u) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b.iter()) {
        i += (x && y) as usize;
        u += (x || y) as usize;
    }
    if u == 0 {
        0.0
    } else {
        i as f64 / u as f64
    }
}

/// Large-stack inference with the model as the per-tile detector.
pub fn infer_large(model: &Model, stack: &ImageStack, tile: usize, overlap: usize) -> Result<DetectionSet> {
    let stride = 1usize << model.config.head_config.unet_levels;
    if tile % stride != 0 {
        return Err(Error::Config(format!("tile {tile} must be divisible by {stride}")));
    }
    tiled_detect(stack, tile, overlap, |s| model.detect(s))
}
