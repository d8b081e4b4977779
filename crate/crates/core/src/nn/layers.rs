use rand_chacha::ChaCha8Rng;

use super::gemm::matmul;
use super::{bias_bound, he_uniform_bound, Gradients, ParamKind, Tensor};

/// 2D convolution with square kernel, stride 1 and same padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    /// cout × cin × k × k
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Conv2d {
    pub fn new(cin: usize, cout: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(k % 2 == 1, "odd kernels only");
        let fan_in = cin * k * k;
        Self {
            cin,
            cout,
            k,
            weight: Tensor::uniform(&[cout, cin, k, k], he_uniform_bound(fan_in), rng),
            bias: Tensor::uniform(&[cout], bias_bound(fan_in), rng),
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, ParamKind)) {
        f(&format!("{prefix}.weight"), &self.weight, ParamKind::Trainable);
        f(&format!("{prefix}.bias"), &self.bias, ParamKind::Trainable);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamKind)) {
        f(&format!("{prefix}.weight"), &mut self.weight, ParamKind::Trainable);
        f(&format!("{prefix}.bias"), &mut self.bias, ParamKind::Trainable);
    }

    fn im2col(&self, x: &[f64], h: usize, w: usize, cols: &mut [f64]) {
        let (hw, kk) = (h * w, self.k * self.k);
        for ci in 0..self.cin {
            im2col_plane(&x[ci * hw..(ci + 1) * hw], h, w, self.k, &mut cols[ci * kk * hw..(ci + 1) * kk * hw]);
        }
    }

    fn col2im_add(&self, cols: &[f64], h: usize, w: usize, gx: &mut [f64]) {
        let (hw, kk) = (h * w, self.k * self.k);
        for ci in 0..self.cin {
            col2im_plane_add(&cols[ci * kk * hw..(ci + 1) * kk * hw], h, w, self.k, &mut gx[ci * hw..(ci + 1) * hw]);
        }
    }

    /// x: n × cin × h × w → n × cout × h × w
    pub fn forward(&self, x: &[f64], n: usize, h: usize, w: usize) -> Vec<f64> {
        let hw = h * w;
        let kk = self.cin * self.k * self.k;
        let mut out = vec![0.0; n * self.cout * hw];
        let mut cols = if self.k == 1 { Vec::new() } else { vec![0.0; kk * hw] };
        for s in 0..n {
            let xs = &x[s * self.cin * hw..(s + 1) * self.cin * hw];
            let ys = &mut out[s * self.cout * hw..(s + 1) * self.cout * hw];
            for (co, row) in ys.chunks_exact_mut(hw).enumerate() {
                row.fill(self.bias.data[co]);
            }
            let patches: &[f64] = if self.k == 1 {
                xs
            } else {
                self.im2col(xs, h, w, &mut cols);
                &cols
            };
            matmul(self.cout, kk, hw, &self.weight.data, false, patches, false, 1.0, ys);
        }
        out
    }

    /// Returns the input gradient (when requested) and accumulates parameter
    /// gradients under `prefix`.
    pub fn backward(
        &self,
        x: &[f64],
        gy: &[f64],
        n: usize,
        h: usize,
        w: usize,
        need_input_grad: bool,
        prefix: &str,
        grads: &mut Gradients,
    ) -> Option<Vec<f64>> {
        let hw = h * w;
        let kk = self.cin * self.k * self.k;
        let mut gw = vec![0.0; self.cout * kk];
        let mut gb = vec![0.0; self.cout];
        let mut gx = need_input_grad.then(|| vec![0.0; n * self.cin * hw]);
        let mut cols = if self.k == 1 { Vec::new() } else { vec![0.0; kk * hw] };
        let mut gcols = if need_input_grad && self.k > 1 { vec![0.0; kk * hw] } else { Vec::new() };
        for s in 0..n {
            let xs = &x[s * self.cin * hw..(s + 1) * self.cin * hw];
            let gys = &gy[s * self.cout * hw..(s + 1) * self.cout * hw];
            for (co, row) in gys.chunks_exact(hw).enumerate() {
                gb[co] += row.iter().sum::<f64>();
            }
            let patches: &[f64] = if self.k == 1 {
                xs
            } else {
                self.im2col(xs, h, w, &mut cols);
                &cols
            };
            matmul(self.cout, hw, kk, gys, false, patches, true, 1.0, &mut gw);
            if let Some(gx) = gx.as_mut() {
                let gxs = &mut gx[s * self.cin * hw..(s + 1) * self.cin * hw];
                if self.k == 1 {
                    matmul(kk, self.cout, hw, &self.weight.data, true, gys, false, 0.0, gxs);
                } else {
                    matmul(kk, self.cout, hw, &self.weight.data, true, gys, false, 0.0, &mut gcols);
                    self.col2im_add(&gcols, h, w, gxs);
                }
            }
        }
        accumulate(grads, format!("{prefix}.weight"), gw);
        accumulate(grads, format!("{prefix}.bias"), gb);
        gx
    }
}

/// Unfolds one h×w plane into k²×(h·w) patch rows with zero same-padding.
pub(crate) fn im2col_plane(plane: &[f64], h: usize, w: usize, k: usize, cols: &mut [f64]) {
    let p = (k / 2) as isize;
    let hw = h * w;
    for ky in 0..k {
        for kx in 0..k {
            let row = &mut cols[(ky * k + kx) * hw..][..hw];
            let dx = kx as isize - p;
            let x_lo = (-dx).max(0) as usize;
            let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
            for y in 0..h {
                let sy = y as isize + ky as isize - p;
                let out = &mut row[y * w..(y + 1) * w];
                if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                    out.fill(0.0);
                    continue;
                }
                let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                out[..x_lo].fill(0.0);
                out[x_hi..].fill(0.0);
                let s0 = (x_lo as isize + dx) as usize;
                out[x_lo..x_hi].copy_from_slice(&src[s0..s0 + (x_hi - x_lo)]);
            }
        }
    }
}

/// Adjoint of [`im2col_plane`], accumulating into `plane`.
pub(crate) fn col2im_plane_add(cols: &[f64], h: usize, w: usize, k: usize, plane: &mut [f64]) {
    let p = (k / 2) as isize;
    let hw = h * w;
    for ky in 0..k {
        for kx in 0..k {
            let row = &cols[(ky * k + kx) * hw..][..hw];
            let dx = kx as isize - p;
            let x_lo = (-dx).max(0) as usize;
            let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
            if x_lo >= x_hi {
                continue;
            }
            for y in 0..h {
                let sy = y as isize + ky as isize - p;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                let s0 = (x_lo as isize + dx) as usize;
                let src = &row[y * w + x_lo..y * w + x_hi];
                for (d, s) in dst[s0..s0 + src.len()].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
    }
}

pub(crate) fn accumulate(grads: &mut Gradients, name: String, g: Vec<f64>) {
    match grads.get_mut(&name) {
        Some(existing) => {
            for (a, b) in existing.iter_mut().zip(&g) {
                *a += b;
            }
        }
        None => {
            grads.insert(name, g);
        }
    }
}

/// Per-channel batch normalization over N×S for N×C×S activations.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub channels: usize,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct BnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: Tensor::filled(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], 1.0),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, ParamKind)) {
        f(&format!("{prefix}.gamma"), &self.gamma, ParamKind::Trainable);
        f(&format!("{prefix}.beta"), &self.beta, ParamKind::Trainable);
        f(&format!("{prefix}.running_mean"), &self.running_mean, ParamKind::Buffer);
        f(&format!("{prefix}.running_var"), &self.running_var, ParamKind::Buffer);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamKind)) {
        f(&format!("{prefix}.gamma"), &mut self.gamma, ParamKind::Trainable);
        f(&format!("{prefix}.beta"), &mut self.beta, ParamKind::Trainable);
        f(&format!("{prefix}.running_mean"), &mut self.running_mean, ParamKind::Buffer);
        f(&format!("{prefix}.running_var"), &mut self.running_var, ParamKind::Buffer);
    }

    /// Normalizes with batch statistics in place and updates running
    /// statistics.
    pub fn forward_train(&mut self, x: &mut [f64], n: usize, s: usize) -> BnCache {
        let c = self.channels;
        let count = (n * s) as f64;
        let mut inv_std = vec![0.0; c];
        for ci in 0..c {
            let mut sum = 0.0;
            for ni in 0..n {
                sum += x[(ni * c + ci) * s..][..s].iter().sum::<f64>();
            }
            let mean = sum / count;
            let mut sq = 0.0;
            for ni in 0..n {
                sq += x[(ni * c + ci) * s..][..s]
                    .iter()
                    .map(|v| (v - mean) * (v - mean))
                    .sum::<f64>();
            }
            let var = sq / count;
            let istd = 1.0 / (var + self.eps).sqrt();
            inv_std[ci] = istd;
            for ni in 0..n {
                for v in x[(ni * c + ci) * s..][..s].iter_mut() {
                    *v = (*v - mean) * istd;
                }
            }
            let unbiased = if count > 1.0 { var * count / (count - 1.0) } else { var };
            let m = self.momentum;
            self.running_mean.data[ci] = (1.0 - m) * self.running_mean.data[ci] + m * mean;
            self.running_var.data[ci] = (1.0 - m) * self.running_var.data[ci] + m * unbiased;
        }
        let xhat = x.to_vec();
        self.affine(x, n, s);
        BnCache { xhat, inv_std }
    }

    pub fn forward_eval(&self, x: &mut [f64], n: usize, s: usize) {
        let c = self.channels;
        for ci in 0..c {
            let mean = self.running_mean.data[ci];
            let istd = 1.0 / (self.running_var.data[ci] + self.eps).sqrt();
            for ni in 0..n {
                for v in x[(ni * c + ci) * s..][..s].iter_mut() {
                    *v = (*v - mean) * istd;
                }
            }
        }
        self.affine(x, n, s);
    }

    fn affine(&self, x: &mut [f64], n: usize, s: usize) {
        let c = self.channels;
        for ni in 0..n {
            for ci in 0..c {
                let (g, b) = (self.gamma.data[ci], self.beta.data[ci]);
                for v in x[(ni * c + ci) * s..][..s].iter_mut() {
                    *v = g * *v + b;
                }
            }
        }
    }

    pub fn backward(
        &self,
        cache: &BnCache,
        gy: &[f64],
        n: usize,
        s: usize,
        prefix: &str,
        grads: &mut Gradients,
    ) -> Vec<f64> {
        let c = self.channels;
        let count = (n * s) as f64;
        let mut gx = vec![0.0; gy.len()];
        let mut ggamma = vec![0.0; c];
        let mut gbeta = vec![0.0; c];
        for ci in 0..c {
            let (mut sg, mut sgx) = (0.0, 0.0);
            for ni in 0..n {
                let off = (ni * c + ci) * s;
                for (g, xh) in gy[off..off + s].iter().zip(&cache.xhat[off..off + s]) {
                    sg += g;
                    sgx += g * xh;
                }
            }
            ggamma[ci] = sgx;
            gbeta[ci] = sg;
            let scale = self.gamma.data[ci] * cache.inv_std[ci] / count;
            for ni in 0..n {
                let off = (ni * c + ci) * s;
                for ((o, g), xh) in gx[off..off + s]
                    .iter_mut()
                    .zip(&gy[off..off + s])
                    .zip(&cache.xhat[off..off + s])
                {
                    *o = scale * (count * g - sg - xh * sgx);
                }
            }
        }
        accumulate(grads, format!("{prefix}.gamma"), ggamma);
        accumulate(grads, format!("{prefix}.beta"), gbeta);
        gx
    }
}

pub fn relu_in_place(x: &mut [f64]) {
    for v in x.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes gradient entries where the ReLU output was not positive.
pub fn relu_backward_in_place(g: &mut [f64], y: &[f64]) {
    for (gv, &yv) in g.iter_mut().zip(y) {
        if yv <= 0.0 {
            *gv = 0.0;
        }
    }
}

/// 2×2 max pooling, stride 2. Returns the pooled map and the winning offset
/// (0..4) of each output.
pub fn maxpool2_forward(x: &[f64], n: usize, c: usize, h: usize, w: usize) -> (Vec<f64>, Vec<u8>) {
    let (ho, wo) = (h / 2, w / 2);
    let mut y = vec![0.0; n * c * ho * wo];
    let mut arg = vec![0u8; y.len()];
    for p in 0..n * c {
        let src = &x[p * h * w..(p + 1) * h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = f64::NEG_INFINITY;
                let mut which = 0u8;
                for (i, (dy, dx)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                    let v = src[(2 * oy + dy) * w + 2 * ox + dx];
                    if v > best {
                        best = v;
                        which = i as u8;
                    }
                }
                let o = p * ho * wo + oy * wo + ox;
                y[o] = best;
                arg[o] = which;
            }
        }
    }
    (y, arg)
}

pub fn maxpool2_backward(gy: &[f64], arg: &[u8], n: usize, c: usize, h: usize, w: usize) -> Vec<f64> {
    let (ho, wo) = (h / 2, w / 2);
    let mut gx = vec![0.0; n * c * h * w];
    for p in 0..n * c {
        for oy in 0..ho {
            for ox in 0..wo {
                let o = p * ho * wo + oy * wo + ox;
                let (dy, dx) = [(0, 0), (0, 1), (1, 0), (1, 1)][arg[o] as usize];
                gx[p * h * w + (2 * oy + dy) * w + 2 * ox + dx] += gy[o];
            }
        }
    }
    gx
}

/// Nearest-neighbour 2× upsampling of n × c × h × w.
pub fn upsample2_forward(x: &[f64], n: usize, c: usize, h: usize, w: usize) -> Vec<f64> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut y = vec![0.0; n * c * h2 * w2];
    for p in 0..n * c {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut y[p * h2 * w2..(p + 1) * h2 * w2];
        for yy in 0..h2 {
            let srow = &src[(yy / 2) * w..(yy / 2 + 1) * w];
            for (xx, d) in dst[yy * w2..(yy + 1) * w2].iter_mut().enumerate() {
                *d = srow[xx / 2];
            }
        }
    }
    y
}

/// Gradient of [`upsample2_forward`]; `h`, `w` are the low-resolution size.
pub fn upsample2_backward(gy: &[f64], n: usize, c: usize, h: usize, w: usize) -> Vec<f64> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut gx = vec![0.0; n * c * h * w];
    for p in 0..n * c {
        let src = &gy[p * h2 * w2..(p + 1) * h2 * w2];
        let dst = &mut gx[p * h * w..(p + 1) * h * w];
        for yy in 0..h2 {
            for xx in 0..w2 {
                dst[(yy / 2) * w + xx / 2] += src[yy * w2 + xx];
            }
        }
    }
    gx
}

/// Stacks `a` (n × ca × s) and `b` (n × cb × s) along channels.
pub fn concat_channels(a: &[f64], ca: usize, b: &[f64], cb: usize, n: usize, s: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * (ca + cb) * s);
    for ni in 0..n {
        out.extend_from_slice(&a[ni * ca * s..(ni + 1) * ca * s]);
        out.extend_from_slice(&b[ni * cb * s..(ni + 1) * cb * s]);
    }
    out
}

pub fn split_channels(g: &[f64], ca: usize, cb: usize, n: usize, s: usize) -> (Vec<f64>, Vec<f64>) {
    let mut ga = Vec::with_capacity(n * ca * s);
    let mut gb = Vec::with_capacity(n * cb * s);
    for ni in 0..n {
        let base = ni * (ca + cb) * s;
        ga.extend_from_slice(&g[base..base + ca * s]);
        gb.extend_from_slice(&g[base + ca * s..base + (ca + cb) * s]);
    }
    (ga, gb)
}
