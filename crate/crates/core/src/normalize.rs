//! Global min-max rescaling to the unit interval.

use ndarray::{Array, Dimension};

/// Rescales all values jointly (across every channel) into [0, 1].
/// Constant inputs map to all zeros.
pub fn normalize_unit<D: Dimension>(image: &Array<f64, D>) -> Array<f64, D> {
    let mut out = image.to_owned();
    if let Some(slice) = out.as_slice_mut() {
        normalize_unit_in_place(slice);
    } else {
        let (lo, hi) = min_max(image.iter().copied());
        out.mapv_inplace(|v| rescale(v, lo, hi));
    }
    out
}

pub fn normalize_unit_in_place(values: &mut [f64]) {
    let (lo, hi) = min_max(values.iter().copied());
    for v in values.iter_mut() {
        *v = rescale(*v, lo, hi);
    }
}

/// Indices of the first minimum and first maximum, used by the backward pass.
pub(crate) fn argmin_argmax(values: &[f64]) -> (usize, usize) {
    let mut imin = 0;
    let mut imax = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[imin] {
            imin = i;
        }
        if v > values[imax] {
            imax = i;
        }
    }
    (imin, imax)
}

/// Gradient of `normalize_unit` w.r.t. its input, given the input, the
/// normalized output and the upstream gradient. Constant inputs have zero
/// gradient.
pub(crate) fn normalize_unit_backward(input: &[f64], output: &[f64], grad_out: &[f64]) -> Vec<f64> {
    let (imin, imax) = argmin_argmax(input);
    let range = input[imax] - input[imin];
    let mut grad = vec![0.0; input.len()];
    if range <= 0.0 {
        return grad;
    }
    let inv = 1.0 / range;
    let mut to_min = 0.0;
    let mut to_max = 0.0;
    for ((g, &go), &y) in grad.iter_mut().zip(grad_out).zip(output) {
        *g = go * inv;
        to_min += go * (y - 1.0) * inv;
        to_max -= go * y * inv;
    }
    grad[imin] += to_min;
    grad[imax] += to_max;
    grad
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}

#[inline]
fn rescale(v: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
    } else {
        0.0
    }
}
