//! Polygon fill, boundary tracing and small mask utilities.
//!
//! Pixel (row y, column x) has its center at the integer point (x, y). A pixel
//! belongs to a polygon when its center lies inside (even-odd rule) or on the
//! polygon boundary.

use ndarray::Array2;

const EPS: f64 = 1e-9;

/// Rasterizes a closed polygon given as (x, y) vertices.
pub fn rasterize_polygon(vertices: &[(f64, f64)], height: usize, width: usize) -> Array2<bool> {
    let mut mask = Array2::from_elem((height, width), false);
    let n = vertices.len();
    if n == 0 || height == 0 || width == 0 {
        return mask;
    }
    let ymin = vertices.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
    let ymax = vertices.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
    let row_lo = (ymin - EPS).ceil().max(0.0) as usize;
    let row_hi = ((ymax + EPS).floor() as i64).min(height as i64 - 1);
    if row_hi < 0 {
        return mask;
    }
    let mut crossings = Vec::with_capacity(n);
    for row in row_lo..=row_hi as usize {
        let y = row as f64;
        crossings.clear();
        for i in 0..n {
            let (x1, y1) = vertices[i];
            let (x2, y2) = vertices[(i + 1) % n];
            // Boundary pixels on this edge.
            if (y1 - y).abs() < EPS && (y2 - y).abs() < EPS {
                fill_span(&mut mask, row, x1.min(x2), x1.max(x2));
            } else if y1.min(y2) - EPS <= y && y <= y1.max(y2) + EPS {
                let xi = x1 + (y - y1) * (x2 - x1) / (y2 - y1);
                if (xi - xi.round()).abs() < EPS {
                    fill_span(&mut mask, row, xi, xi);
                }
            }
            // Half-open crossing rule for the even-odd interior.
            if (y1 > y) != (y2 > y) {
                crossings.push(x1 + (y - y1) * (x2 - x1) / (y2 - y1));
            }
        }
        crossings.sort_by(|a, b| a.total_cmp(b));
        for pair in crossings.chunks_exact(2) {
            fill_span(&mut mask, row, pair[0], pair[1]);
        }
    }
    mask
}

fn fill_span(mask: &mut Array2<bool>, row: usize, x0: f64, x1: f64) {
    let width = mask.dim().1 as i64;
    let lo = ((x0 - EPS).ceil() as i64).max(0);
    let hi = ((x1 + EPS).floor() as i64).min(width - 1);
    for x in lo..=hi {
        mask[[row, x as usize]] = true;
    }
}

// Moore neighbourhood in clockwise order (image coordinates, y down),
// starting west.
const MOORE: [(i64, i64); 8] = [
    (0, -1),
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
];

/// Traces the outer boundary of the largest 8-connected component as a closed,
/// ordered list of (x, y) pixel centers with collinear runs collapsed.
///
/// The trace starts at the top-most, left-most pixel and proceeds clockwise.
/// Contours with fewer than three distinct corners are padded by repeating the
/// last vertex so the result is always a valid polygon.
pub fn trace_boundary(mask: &Array2<bool>) -> Vec<(i64, i64)> {
    let component = largest_component(mask);
    let (h, w) = component.dim();
    let start = match component.indexed_iter().find(|(_, &m)| m) {
        Some(((y, x), _)) => (y as i64, x as i64),
        None => return Vec::new(),
    };
    let inside = |y: i64, x: i64| {
        y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w && component[[y as usize, x as usize]]
    };

    let mut contour = vec![start];
    let mut current = start;
    // Start pixel is top-most then left-most, so its west neighbour is background.
    let mut back = 0usize;
    let mut first_move = None;
    let limit = 4 * (h * w + 1);
    loop {
        let Some(d) = (1..=8)
            .map(|step| (back + step) % 8)
            .find(|&d| inside(current.0 + MOORE[d].0, current.1 + MOORE[d].1))
        else {
            break; // isolated pixel
        };
        // Jacob's criterion: stop on leaving the start the same way as the first time.
        if current == start {
            match first_move {
                Some(f) if f == d => {
                    contour.pop();
                    break;
                }
                None => first_move = Some(d),
                _ => {}
            }
        }
        let next = (current.0 + MOORE[d].0, current.1 + MOORE[d].1);
        // The neighbour swept just before `d` is background; resume from it.
        let prev = MOORE[(d + 7) % 8];
        let rel = (current.0 + prev.0 - next.0, current.1 + prev.1 - next.1);
        back = MOORE.iter().position(|&m| m == rel).expect("adjacent neighbours");
        contour.push(next);
        current = next;
        if contour.len() > limit {
            break;
        }
    }

    let mut points: Vec<(i64, i64)> = contour.iter().map(|&(y, x)| (x, y)).collect();
    simplify_collinear(&mut points);
    while !points.is_empty() && points.len() < 3 {
        let last = *points.last().unwrap();
        points.push(last);
    }
    points
}

/// Removes vertices whose incoming and outgoing steps point the same way.
fn simplify_collinear(points: &mut Vec<(i64, i64)>) {
    if points.len() < 3 {
        if points.len() == 2 && points[0] == points[1] {
            points.pop();
        }
        return;
    }
    let n = points.len();
    let dir = |a: (i64, i64), b: (i64, i64)| ((b.0 - a.0).signum(), (b.1 - a.1).signum());
    let keep: Vec<bool> = (0..n)
        .map(|i| {
            let prev = points[(i + n - 1) % n];
            let next = points[(i + 1) % n];
            dir(prev, points[i]) != dir(points[i], next)
        })
        .collect();
    let kept: Vec<(i64, i64)> = points
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(&p, _)| p)
        .collect();
    *points = if kept.is_empty() { vec![points[0]] } else { kept };
}

/// Labels 8-connected (or 4-connected) components; background is 0 and
/// components are numbered from 1 in raster order of their first pixel.
pub fn label_components(mask: &Array2<bool>, eight: bool) -> (Array2<u32>, u32) {
    let (h, w) = mask.dim();
    let mut labels = Array2::<u32>::zeros((h, w));
    let mut next = 0u32;
    let mut stack = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask[[y, x]] || labels[[y, x]] != 0 {
                continue;
            }
            next += 1;
            labels[[y, x]] = next;
            stack.push((y, x));
            while let Some((cy, cx)) = stack.pop() {
                for (dy, dx) in neighbours(eight) {
                    let ny = cy as i64 + dy;
                    let nx = cx as i64 + dx;
                    if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                        continue;
                    }
                    let (ny, nx) = (ny as usize, nx as usize);
                    if mask[[ny, nx]] && labels[[ny, nx]] == 0 {
                        labels[[ny, nx]] = next;
                        stack.push((ny, nx));
                    }
                }
            }
        }
    }
    (labels, next)
}

fn neighbours(eight: bool) -> &'static [(i64, i64)] {
    const FOUR: [(i64, i64); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
    if eight {
        &MOORE
    } else {
        &FOUR
    }
}

/// The largest 8-connected component (ties broken by raster order).
pub fn largest_component(mask: &Array2<bool>) -> Array2<bool> {
    let (labels, n) = label_components(mask, true);
    if n <= 1 {
        return mask.clone();
    }
    let mut sizes = vec![0usize; n as usize + 1];
    for &l in labels.iter() {
        sizes[l as usize] += 1;
    }
    let best = (1..=n as usize).max_by_key(|&l| (sizes[l], std::cmp::Reverse(l))).unwrap();
    labels.mapv(|l| l as usize == best)
}

/// In-mask pixels with at least one 4-neighbour outside the mask (the image
/// border counts as outside).
pub fn mask_edges(mask: &Array2<bool>) -> Array2<bool> {
    let (h, w) = mask.dim();
    let mut edges = Array2::from_elem((h, w), false);
    for y in 0..h {
        for x in 0..w {
            if !mask[[y, x]] {
                continue;
            }
            let outside = |yy: i64, xx: i64| {
                yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 || !mask[[yy as usize, xx as usize]]
            };
            let (yi, xi) = (y as i64, x as i64);
            if outside(yi - 1, xi) || outside(yi + 1, xi) || outside(yi, xi - 1) || outside(yi, xi + 1) {
                edges[[y, x]] = true;
            }
        }
    }
    edges
}

/// Filled disk of the given diameter (pixels) centered at (cy, cx).
pub fn disk_mask(height: usize, width: usize, cy: f64, cx: f64, diameter: f64) -> Array2<bool> {
    let r2 = (diameter / 2.0).powi(2);
    Array2::from_shape_fn((height, width), |(y, x)| {
        let dy = y as f64 - cy;
        let dx = x as f64 - cx;
        dy * dy + dx * dx <= r2
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive point-in-polygon: on an edge or odd ray-cast parity.
    fn oracle_inside(px: f64, py: f64, poly: &[(f64, f64)]) -> bool {
        let n = poly.len();
        for i in 0..n {
            let (ax, ay) = poly[i];
            let (bx, by) = poly[(i + 1) % n];
            let cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax);
            let within = px >= ax.min(bx) - 1e-9
                && px <= ax.max(bx) + 1e-9
                && py >= ay.min(by) - 1e-9
                && py <= ay.max(by) + 1e-9;
            if cross.abs() < 1e-9 && within {
                return true;
            }
        }
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let (xi, yi) = poly[i];
            let (xj, yj) = poly[j];
            if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
                inside = !inside;
            }
            j = i;
        }
        inside
    }

    fn oracle_mask(poly: &[(f64, f64)], h: usize, w: usize) -> Array2<bool> {
        Array2::from_shape_fn((h, w), |(y, x)| oracle_inside(x as f64, y as f64, poly))
    }

    #[test]
    fn square_matches_oracle() {
        let poly = [(1.0, 1.0), (5.0, 1.0), (5.0, 5.0), (1.0, 5.0)];
        let mask = rasterize_polygon(&poly, 8, 8);
        assert_eq!(mask, oracle_mask(&poly, 8, 8));
        // Centers on the boundary are included: a 5x5 block.
        assert_eq!(mask.iter().filter(|&&m| m).count(), 25);
    }

    #[test]
    fn trace_square_gives_corners() {
        let poly = [(1.0, 1.0), (5.0, 1.0), (5.0, 5.0), (1.0, 5.0)];
        let mask = rasterize_polygon(&poly, 8, 8);
        let contour = trace_boundary(&mask);
        assert_eq!(contour, vec![(1, 1), (5, 1), (5, 5), (1, 5)]);
    }

    #[test]
    fn single_pixel_round_trips() {
        let mut mask = Array2::from_elem((5, 5), false);
        mask[[2, 3]] = true;
        let contour = trace_boundary(&mask);
        assert_eq!(contour.len(), 3);
        let poly: Vec<(f64, f64)> = contour.iter().map(|&(x, y)| (x as f64, y as f64)).collect();
        assert_eq!(rasterize_polygon(&poly, 5, 5), mask);
    }

    #[test]
    fn thin_line_round_trips() {
        let mut mask = Array2::from_elem((6, 6), false);
        for x in 1..5 {
            mask[[3, x]] = true;
        }
        let poly: Vec<(f64, f64)> = trace_boundary(&mask)
            .iter()
            .map(|&(x, y)| (x as f64, y as f64))
            .collect();
        assert_eq!(rasterize_polygon(&poly, 6, 6), mask);
    }

    #[test]
    fn edges_of_square() {
        let mut mask = Array2::from_elem((14, 14), false);
        for y in 2..12 {
            for x in 2..12 {
                mask[[y, x]] = true;
            }
        }
        assert_eq!(mask_edges(&mask).iter().filter(|&&e| e).count(), 36);
    }

    #[test]
    fn components_counted() {
        let mut mask = Array2::from_elem((5, 5), false);
        mask[[0, 0]] = true;
        mask[[1, 1]] = true;
        mask[[4, 4]] = true;
        assert_eq!(label_components(&mask, true).1, 2);
        assert_eq!(label_components(&mask, false).1, 3);
    }

    fn convex_polygon() -> impl Strategy<Value = (Vec<(f64, f64)>, usize, usize)> {
        (8usize..=64, 8usize..=64, 3usize..=12, any::<u64>()).prop_map(|(h, w, n, seed)| {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let cx = rng.gen_range(0.0..(w - 1) as f64);
            let cy = rng.gen_range(0.0..(h - 1) as f64);
            let r = rng.gen_range(0.5..(h.min(w) as f64 / 2.0));
            let mut angles: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
            angles.sort_by(|a, b| a.total_cmp(b));
            let poly = angles
                .iter()
                .map(|a| {
                    // Snap to a quarter-pixel lattice and clamp into the image.
                    let x = ((cx + r * a.cos()) * 4.0).round() / 4.0;
                    let y = ((cy + r * a.sin()) * 4.0).round() / 4.0;
                    (x.clamp(0.0, (w - 1) as f64), y.clamp(0.0, (h - 1) as f64))
                })
                .collect();
            (poly, h, w)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]
        #[test]
        fn fill_agrees_with_point_in_polygon((poly, h, w) in convex_polygon()) {
            prop_assert_eq!(rasterize_polygon(&poly, h, w), oracle_mask(&poly, h, w));
        }

        #[test]
        fn trace_is_idempotent((poly, h, w) in convex_polygon()) {
            let mask = rasterize_polygon(&poly, h, w);
            prop_assume!(mask.iter().any(|&m| m));
            let first = trace_boundary(&mask);
            let verts: Vec<(f64, f64)> = first.iter().map(|&(x, y)| (x as f64, y as f64)).collect();
            let reloaded = rasterize_polygon(&verts, h, w);
            prop_assert_eq!(trace_boundary(&reloaded), first);
        }
    }
}
