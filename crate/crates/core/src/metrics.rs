//! IoU matrices, optimal one-to-one matching and detection metrics.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Outcome of matching ground truth (rows) against predictions (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// (gt index, pred index, IoU)
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_gt: Vec<usize>,
    pub unmatched_pred: Vec<usize>,
    pub iou_threshold: f64,
}

/// When sub-threshold candidates are removed relative to the assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Eligibility {
    /// Solve the assignment on all IoUs, then demote pairs below threshold.
    #[default]
    AssignThenDemote,
    /// Zero out sub-threshold IoUs before solving.
    MaskBeforeAssign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub jaccard: f64,
    pub precision: f64,
    pub recall: f64,
    pub quality: f64,
    pub threshold: f64,
    /// Set when any ratio had a zero denominator and was reported as 0.
    pub degenerate: bool,
}

fn count_iou(a: &Array2<bool>, b: &Array2<bool>) -> f64 {
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

/// Entry (i, j) is IoU(gt_i, pred_j).
pub fn iou_matrix(gt: &[&Array2<bool>], pred: &[&Array2<bool>]) -> Result<Array2<f64>> {
    let dims = gt.first().or(pred.first()).map(|m| m.dim());
    if let Some(d) = dims {
        if gt.iter().chain(pred).any(|m| m.dim() != d) {
            return Err(Error::Shape("masks differ in dimensions".into()));
        }
    }
    Ok(Array2::from_shape_fn((gt.len(), pred.len()), |(i, j)| {
        count_iou(gt[i], pred[j])
    }))
}

/// Minimum-cost perfect assignment on a square cost matrix. Returns the
/// column assigned to each row.
fn hungarian(cost: &Array2<f64>) -> Vec<usize> {
    let n = cost.nrows();
    // 1-based potentials formulation; column 0 is a sentinel
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

pub fn match_detections(matrix: &Array2<f64>, threshold: f64) -> MatchResult {
    match_detections_with(matrix, threshold, Eligibility::AssignThenDemote)
}

/// Maximizes total IoU over one-to-one assignments (zero-IoU padding makes
/// the problem square), then keeps pairs at or above `threshold`.
pub fn match_detections_with(matrix: &Array2<f64>, threshold: f64, eligibility: Eligibility) -> MatchResult {
    let (g, p) = matrix.dim();
    let n = g.max(p);
    let mut cost = Array2::from_elem((n, n), 1.0);
    for ((i, j), &v) in matrix.indexed_iter() {
        let v = match eligibility {
            Eligibility::MaskBeforeAssign if v < threshold => 0.0,
            _ => v,
        };
        cost[[i, j]] = 1.0 - v;
    }
    let assignment = if n == 0 { Vec::new() } else { hungarian(&cost) };
    let mut pairs = Vec::new();
    let mut gt_used = vec![false; g];
    let mut pred_used = vec![false; p];
    for (i, &j) in assignment.iter().enumerate() {
        if i < g && j < p && matrix[[i, j]] >= threshold && matrix[[i, j]] > 0.0 {
            pairs.push((i, j, matrix[[i, j]]));
            gt_used[i] = true;
            pred_used[j] = true;
        }
    }
    MatchResult {
        pairs,
        unmatched_gt: (0..g).filter(|&i| !gt_used[i]).collect(),
        unmatched_pred: (0..p).filter(|&j| !pred_used[j]).collect(),
        iou_threshold: threshold,
    }
}

impl MetricsReport {
    /// Metrics from pooled counts and the summed IoU of true positives.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, iou_sum: f64, threshold: f64) -> Self {
        let mut degenerate = false;
        let mut ratio = |num: f64, den: usize| {
            if den == 0 {
                degenerate = true;
                0.0
            } else {
                num / den as f64
            }
        };
        let jaccard = ratio(tp as f64, tp + fp + fn_);
        let precision = ratio(tp as f64, tp + fp);
        let recall = ratio(tp as f64, tp + fn_);
        let quality = ratio(iou_sum, tp);
        Self { tp, fp, fn_, jaccard, precision, recall, quality, threshold, degenerate }
    }
}

pub fn compute_metrics(m: &MatchResult) -> MetricsReport {
    let iou_sum = m.pairs.iter().map(|p| p.2).sum();
    MetricsReport::from_counts(
        m.pairs.len(),
        m.unmatched_pred.len(),
        m.unmatched_gt.len(),
        iou_sum,
        m.iou_threshold,
    )
}

/// IoU matrix, matching and metrics in one call.
pub fn evaluate_masks(gt: &[&Array2<bool>], pred: &[&Array2<bool>], threshold: f64) -> Result<(MatchResult, MetricsReport)> {
    let m = match_detections(&iou_matrix(gt, pred)?, threshold);
    let r = compute_metrics(&m);
    Ok((m, r))
}
