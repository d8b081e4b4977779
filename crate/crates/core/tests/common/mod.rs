//! Independent reference implementations shared by the integration tests.

#![allow(dead_code)]

use ndarray::Array2;
use penseg::nn::{Gradients, ParamKind, Parameterized};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Exhaustive search over injective gt→pred maps: the best total IoU and
/// the (tp, summed matched IoU) of every map attaining it.
pub fn optimal_outcomes(iou: &Array2<f64>, threshold: f64) -> (f64, Vec<(usize, f64)>) {
    let (g, p) = iou.dim();
    let mut all: Vec<(f64, usize, f64)> = Vec::new();
    let mut used = vec![false; p];
    let mut choice: Vec<Option<usize>> = vec![None; g];
    fn rec(
        i: usize,
        iou: &Array2<f64>,
        threshold: f64,
        used: &mut Vec<bool>,
        choice: &mut Vec<Option<usize>>,
        all: &mut Vec<(f64, usize, f64)>,
    ) {
        let (g, p) = iou.dim();
        if i == g {
            let mut total = 0.0;
            let mut tp = 0;
            let mut sum = 0.0;
            for (r, c) in choice.iter().enumerate() {
                if let Some(c) = c {
                    let v = iou[[r, *c]];
                    total += v;
                    if v >= threshold && v > 0.0 {
                        tp += 1;
                        sum += v;
                    }
                }
            }
            all.push((total, tp, sum));
            return;
        }
        rec(i + 1, iou, threshold, used, choice, all);
        for j in 0..p {
            if !used[j] {
                used[j] = true;
                choice[i] = Some(j);
                rec(i + 1, iou, threshold, used, choice, all);
                used[j] = false;
                choice[i] = None;
            }
        }
    }
    rec(0, iou, threshold, &mut used, &mut choice, &mut all);
    let best = all.iter().map(|a| a.0).fold(0.0, f64::max);
    let outcomes = all
        .into_iter()
        .filter(|a| (a.0 - best).abs() < 1e-9)
        .map(|a| (a.1, a.2))
        .collect();
    (best, outcomes)
}

/// Plain 1-D Lloyd's iterations written from scratch: rank when there are no
/// more points than clusters, otherwise evenly spaced initial centers,
/// nearest-center labels (lower index on ties), mean updates until the
/// labels repeat, then channels renumbered by ascending center.
pub fn lloyd_oracle(zs: &[f64], k: usize, z_max: f64) -> Vec<usize> {
    let n = zs.len();
    if n <= k {
        let mut out = vec![0; n];
        for i in 0..n {
            out[i] = (0..n).filter(|&j| zs[j] < zs[i] || (zs[j] == zs[i] && j < i)).count();
        }
        return out;
    }
    let mut centers: Vec<f64> = (0..k)
        .map(|j| if k == 1 { 0.0 } else { z_max * j as f64 / (k - 1) as f64 })
        .collect();
    let label = |centers: &[f64]| -> Vec<usize> {
        zs.iter()
            .map(|z| {
                let d: Vec<f64> = centers.iter().map(|c| (z - c).abs()).collect();
                let m = d.iter().cloned().fold(f64::INFINITY, f64::min);
                d.iter().position(|&v| v == m).unwrap()
            })
            .collect()
    };
    let mut labels = label(&centers);
    for _ in 0..300 {
        for (j, c) in centers.iter_mut().enumerate() {
            let members: Vec<f64> = zs.iter().zip(&labels).filter(|(_, &l)| l == j).map(|(z, _)| *z).collect();
            if !members.is_empty() {
                *c = members.iter().sum::<f64>() / members.len() as f64;
            }
        }
        let next = label(&centers);
        if next == labels {
            break;
        }
        labels = next;
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| centers[a].partial_cmp(&centers[b]).unwrap().then(a.cmp(&b)));
    labels
        .iter()
        .map(|&l| order.iter().position(|&o| o == l).unwrap())
        .collect()
}

/// Reads every trainable tensor as (name, values).
pub fn trainables(model: &dyn Parameterized) -> Vec<(String, Vec<f64>)> {
    let mut out = Vec::new();
    model.visit(&mut |name, t, kind| {
        if kind == ParamKind::Trainable {
            out.push((name.to_string(), t.data.clone()));
        }
    });
    out
}

/// Adds `delta` to element `idx` of the named trainable tensor.
pub fn nudge(model: &mut dyn Parameterized, name: &str, idx: usize, delta: f64) {
    model.visit_mut(&mut |n, t, _| {
        if n == name {
            t.data[idx] += delta;
        }
    });
}

/// Largest relative error between analytic gradients and central
/// differences of `loss` over every trainable element.
pub fn max_gradient_error<M: Parameterized>(
    model: &mut M,
    analytic: &Gradients,
    step: f64,
    floor: f64,
    mut loss: impl FnMut(&mut M) -> f64,
) -> (f64, String) {
    let mut worst = (0.0, String::new());
    for (name, values) in trainables(model) {
        let g = analytic.get(&name).unwrap_or_else(|| panic!("no gradient for {name}"));
        assert_eq!(g.len(), values.len(), "{name}");
        for i in 0..values.len() {
            nudge(model, &name, i, step);
            let up = loss(model);
            nudge(model, &name, i, -2.0 * step);
            let down = loss(model);
            nudge(model, &name, i, step);
            let numeric = (up - down) / (2.0 * step);
            let err = (numeric - g[i]).abs() / numeric.abs().max(g[i].abs()).max(floor);
            if err > worst.0 {
                worst = (err, format!("{name}[{i}] analytic {} numeric {numeric}", g[i]));
            }
        }
    }
    worst
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].partial_cmp(&v[j]).unwrap());
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

/// Ellipse mask, a convex test shape.
pub fn ellipse(h: usize, w: usize, cy: f64, cx: f64, ry: f64, rx: f64, angle: f64) -> Array2<bool> {
    let (s, c) = angle.sin_cos();
    Array2::from_shape_fn((h, w), |(y, x)| {
        let dy = y as f64 - cy;
        let dx = x as f64 - cx;
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
    })
}

/// `count` random ellipses on a 96×96 canvas, pairwise separated by at
/// least one pixel.
pub fn non_overlapping_cells(count: usize, rng: &mut ChaCha8Rng) -> Vec<Array2<bool>> {
    let (h, w) = (96, 96);
    let mut occupied = Array2::from_elem((h, w), false);
    let mut cells = Vec::new();
    while cells.len() < count {
        let ry = rng.gen_range(4.0..11.0);
        let rx = rng.gen_range(4.0..11.0);
        let cy = rng.gen_range(12.0..84.0);
        let cx = rng.gen_range(12.0..84.0);
        let m = ellipse(h, w, cy, cx, ry, rx, rng.gen_range(0.0..std::f64::consts::PI));
        // keep a one-pixel gap so that no two cells touch
        let grown = Array2::from_shape_fn((h, w), |(y, x)| {
            (y.saturating_sub(1)..(y + 2).min(h)).any(|yy| (x.saturating_sub(1)..(x + 2).min(w)).any(|xx| m[[yy, xx]]))
        });
        if grown.iter().zip(occupied.iter()).any(|(&a, &b)| a && b) {
            continue;
        }
        occupied.zip_mut_with(&m, |o, &v| *o |= v);
        cells.push(m);
    }
    cells
}
