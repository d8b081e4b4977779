use ndarray::Array2;

use super::loss::sigmoid;
use super::{Detection, DetectionSet, HeadConfig, SegPrediction};
use crate::raster::label_components;

const MIN_MASK_PIXELS: usize = 9;

fn bilinear(field: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (ty, tx) = (y - y0 as f64, x - x0 as f64);
    let v00 = field[y0 * w + x0];
    let v01 = field[y0 * w + x1];
    let v10 = field[y1 * w + x0];
    let v11 = field[y1 * w + x1];
    (1.0 - ty) * ((1.0 - tx) * v00 + tx * v01) + ty * ((1.0 - tx) * v10 + tx * v11)
}

/// Recovers instances channel by channel: foreground pixels follow the flow
/// field, and pixels whose end points fall into the same 8-connected group
/// of pixel bins form one mask.
pub fn flows_to_instances(pred: &SegPrediction, config: &HeadConfig) -> DetectionSet {
    let (h, w) = (pred.height, pred.width);
    let mut out = DetectionSet { detections: Vec::new(), dims: (h, w) };
    for c in 0..pred.n_out {
        let prob = pred.map(0, c);
        let fy = pred.map(2, c);
        let fx = pred.map(3, c);
        let fg: Vec<usize> = (0..h * w)
            .filter(|&p| sigmoid(prob[p]) > config.cellprob_threshold)
            .collect();
        if fg.is_empty() {
            continue;
        }
        let mut ends = Vec::with_capacity(fg.len());
        for &p in &fg {
            let (mut y, mut x) = ((p / w) as f64, (p % w) as f64);
            for _ in 0..config.flow_steps {
                let dy = bilinear(fy, h, w, y, x);
                let dx = bilinear(fx, h, w, y, x);
                y = (y + config.flow_step_size * dy).clamp(0.0, (h - 1) as f64);
                x = (x + config.flow_step_size * dx).clamp(0.0, (w - 1) as f64);
            }
            ends.push((y.round() as usize, x.round() as usize));
        }
        let mut bins = Array2::from_elem((h, w), false);
        for &(y, x) in &ends {
            bins[[y, x]] = true;
        }
        let (labels, count) = label_components(&bins, true);
        let mut masks = vec![Array2::from_elem((h, w), false); count as usize];
        let mut sizes = vec![0usize; count as usize];
        for (&p, &(y, x)) in fg.iter().zip(&ends) {
            let l = labels[[y, x]] as usize - 1;
            masks[l][[p / w, p % w]] = true;
            sizes[l] += 1;
        }
        for (mask, size) in masks.into_iter().zip(sizes) {
            if size >= MIN_MASK_PIXELS {
                out.detections.push(Detection { mask, channel: c });
            }
        }
    }
    if config.cross_channel_suppression {
        out = suppress_cross_channel(out, 0.5);
    }
    out
}

fn iou(a: &Array2<bool>, b: &Array2<bool>) -> f64 {
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.iter().zip(b.iter()) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Drops a detection when an earlier kept detection from another channel
/// overlaps it with IoU above `threshold`.
pub fn suppress_cross_channel(set: DetectionSet, threshold: f64) -> DetectionSet {
    let mut kept: Vec<Detection> = Vec::with_capacity(set.detections.len());
    for d in set.detections {
        let dup = kept
            .iter()
            .any(|k| k.channel != d.channel && iou(&k.mask, &d.mask) > threshold);
        if !dup {
            kept.push(d);
        }
    }
    DetectionSet { detections: kept, dims: set.dims }
}
