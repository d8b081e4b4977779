use ndarray::Array2;

use super::ChannelAssignment;
use crate::error::{Error, Result};
use crate::raster::{label_components, mask_edges};
use crate::types::AnnotationSet;

/// Per-channel supervision maps, each stored as n_out × H × W.
#[derive(Debug, Clone, PartialEq)]
pub struct SegTargets {
    pub n_out: usize,
    pub height: usize,
    pub width: usize,
    pub cellprob: Vec<f64>,
    pub edges: Vec<f64>,
    pub flow_y: Vec<f64>,
    pub flow_x: Vec<f64>,
}

impl SegTargets {
    pub fn zeros(n_out: usize, height: usize, width: usize) -> Self {
        let n = n_out * height * width;
        Self {
            n_out,
            height,
            width,
            cellprob: vec![0.0; n],
            edges: vec![0.0; n],
            flow_y: vec![0.0; n],
            flow_x: vec![0.0; n],
        }
    }

    fn plane(v: &[f64], c: usize, hw: usize) -> &[f64] {
        &v[c * hw..(c + 1) * hw]
    }

    pub fn cellprob(&self, c: usize) -> &[f64] {
        Self::plane(&self.cellprob, c, self.height * self.width)
    }

    pub fn edges(&self, c: usize) -> &[f64] {
        Self::plane(&self.edges, c, self.height * self.width)
    }

    pub fn flow_y(&self, c: usize) -> &[f64] {
        Self::plane(&self.flow_y, c, self.height * self.width)
    }

    pub fn flow_x(&self, c: usize) -> &[f64] {
        Self::plane(&self.flow_x, c, self.height * self.width)
    }
}

/// Unit flow field pointing up the gradient of a heat source diffused from
/// the medoid of each 4-connected component. Zero outside the mask.
pub fn heat_flow(mask: &Array2<bool>) -> (Array2<f64>, Array2<f64>) {
    let (h, w) = mask.dim();
    let mut fy = Array2::zeros((h, w));
    let mut fx = Array2::zeros((h, w));
    let (labels, count) = label_components(mask, false);
    if count == 0 {
        return (fy, fx);
    }
    let mut pixels: Vec<Vec<(usize, usize)>> = vec![Vec::new(); count as usize];
    for ((y, x), &l) in labels.indexed_iter() {
        if l > 0 {
            pixels[l as usize - 1].push((y, x));
        }
    }
    for px in &pixels {
        component_flow(px, &mut fy, &mut fx);
    }
    (fy, fx)
}

fn component_flow(px: &[(usize, usize)], fy: &mut Array2<f64>, fx: &mut Array2<f64>) {
    let y0 = px.iter().map(|p| p.0).min().unwrap();
    let y1 = px.iter().map(|p| p.0).max().unwrap();
    let x0 = px.iter().map(|p| p.1).min().unwrap();
    let x1 = px.iter().map(|p| p.1).max().unwrap();
    // one-pixel zero border around the bounding box
    let bh = y1 - y0 + 1;
    let bw = x1 - x0 + 1;
    let (lh, lw) = (bh + 2, bw + 2);
    let idx = |y: usize, x: usize| (y - y0 + 1) * lw + (x - x0 + 1);
    let mut inside = vec![false; lh * lw];
    for &(y, x) in px {
        inside[idx(y, x)] = true;
    }

    let n = px.len() as f64;
    let cy = px.iter().map(|p| p.0 as f64).sum::<f64>() / n;
    let cx = px.iter().map(|p| p.1 as f64).sum::<f64>() / n;
    let medoid = *px
        .iter()
        .min_by(|a, b| {
            let da = (a.0 as f64 - cy).powi(2) + (a.1 as f64 - cx).powi(2);
            let db = (b.0 as f64 - cy).powi(2) + (b.1 as f64 - cx).powi(2);
            da.total_cmp(&db)
        })
        .unwrap();

    let cells: Vec<usize> = px.iter().map(|&(y, x)| idx(y, x)).collect();
    let neigh: Vec<[usize; 4]> = cells.iter().map(|&i| [i - lw, i + lw, i - 1, i + 1]).collect();
    let iterations = (2.0 * ((bh * bh + bw * bw) as f64).sqrt()).ceil() as usize;
    let source = idx(medoid.0, medoid.1);
    let mut heat = vec![0.0f64; lh * lw];
    let mut next = heat.clone();
    for _ in 0..iterations {
        heat[source] += 1.0;
        for (&i, nb) in cells.iter().zip(&neigh) {
            let mut sum = heat[i];
            let mut k = 1.0;
            for &j in nb {
                if inside[j] {
                    sum += heat[j];
                    k += 1.0;
                }
            }
            next[i] = sum / k;
        }
        for &i in &cells {
            heat[i] = next[i];
        }
    }
    for (&(y, x), &i) in px.iter().zip(&cells) {
        let gy = (heat[i + lw] - heat[i - lw]) / 2.0;
        let gx = (heat[i + 1] - heat[i - 1]) / 2.0;
        let norm = (gy * gy + gx * gx).sqrt();
        if norm > 0.0 && norm.is_finite() {
            fy[[y, x]] = gy / norm;
            fx[[y, x]] = gx / norm;
        } else {
            fy[[y, x]] = 0.0;
            fx[[y, x]] = 0.0;
        }
    }
}

/// Builds per-channel targets. Within a channel, flows of later cells (by
/// id) overwrite earlier ones where masks overlap.
pub fn make_targets(set: &AnnotationSet, assignment: &ChannelAssignment, n_out: usize) -> Result<SegTargets> {
    let (_, h, w) = set.dims;
    let hw = h * w;
    let mut t = SegTargets::zeros(n_out, h, w);
    let mut order: Vec<usize> = (0..set.cells.len()).collect();
    order.sort_by_key(|&i| set.cells[i].id);
    for i in order {
        let cell = &set.cells[i];
        let c = assignment
            .get(cell.id)
            .ok_or_else(|| Error::Validation(format!("cell {} has no channel", cell.id)))?;
        if c >= n_out {
            return Err(Error::Validation(format!(
                "cell {} assigned to channel {c} but n_out is {n_out}",
                cell.id
            )));
        }
        let edges = mask_edges(&cell.mask);
        let (fy, fx) = heat_flow(&cell.mask);
        let base = c * hw;
        for ((p, &m), &e) in cell.mask.iter().enumerate().zip(edges.iter()) {
            if !m {
                continue;
            }
            t.cellprob[base + p] = 1.0;
            if e {
                t.edges[base + p] = 1.0;
            }
        }
        for (((p, &m), &vy), &vx) in cell.mask.iter().enumerate().zip(fy.iter()).zip(fx.iter()) {
            if m {
                t.flow_y[base + p] = vy;
                t.flow_x[base + p] = vx;
            }
        }
    }
    Ok(t)
}
