//! Projection network: parallel cubic-kernel 3D convolution branches, each
//! collapsed along z, then merged into a normalized RGB image.
//!
//! Activations use N×C×L×(H·W) layout. Each branch convolution is computed
//! slice by slice: every input slice is unfolded once into lateral patches
//! and multiplied against the kernel rows of the axial offsets it feeds.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    accumulate, he_uniform_bound, bias_bound, im2col_plane, matmul, relu_backward_in_place,
    relu_in_place, BatchNorm, BnCache, Gradients, ParamKind, Parameterized, Tensor,
};
pub use crate::nn::Mode;
use crate::normalize::{normalize_unit_backward, normalize_unit_in_place};
use crate::types::{ImageStack, RgbProjection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PenVariant {
    #[default]
    Base,
    /// Max over z replaces each branch's axial-pool convolution.
    BranchMax,
    /// Max over branches replaces the collect convolution.
    CollectMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenConfig {
    pub kernel_sizes: Vec<usize>,
    pub branch_channels: usize,
    pub z_in: usize,
    pub out_channels: usize,
    pub variant: PenVariant,
    pub dropped_kernels: Vec<usize>,
}

impl Default for PenConfig {
    fn default() -> Self {
        Self {
            kernel_sizes: vec![1, 3, 5, 7, 11],
            branch_channels: 3,
            z_in: 27,
            out_channels: 3,
            variant: PenVariant::Base,
            dropped_kernels: Vec::new(),
        }
    }
}

impl PenConfig {
    /// Kernel sizes that remain after ablation drops.
    pub fn active_kernels(&self) -> Vec<usize> {
        self.kernel_sizes
            .iter()
            .copied()
            .filter(|k| !self.dropped_kernels.contains(k))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.out_channels != 3 {
            return Err(Error::Config(format!(
                "out_channels must be 3, got {}",
                self.out_channels
            )));
        }
        if self.branch_channels == 0 {
            return Err(Error::Config("branch_channels must be positive".into()));
        }
        if self.variant == PenVariant::CollectMax && self.branch_channels != self.out_channels {
            return Err(Error::Config(
                "collect_max requires branch_channels == out_channels".into(),
            ));
        }
        if self.z_in == 0 {
            return Err(Error::Config("z_in must be positive".into()));
        }
        for &k in &self.kernel_sizes {
            if k == 0 || k % 2 == 0 {
                return Err(Error::Config(format!("kernel size {k} must be odd")));
            }
            if k > self.z_in {
                return Err(Error::Config(format!(
                    "kernel size {k} exceeds input depth {}",
                    self.z_in
                )));
            }
        }
        let mut seen = self.kernel_sizes.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.kernel_sizes.len() {
            return Err(Error::Config("duplicate kernel sizes".into()));
        }
        if let Some(k) = self.dropped_kernels.iter().find(|k| !self.kernel_sizes.contains(k)) {
            return Err(Error::Config(format!("dropped kernel {k} is not configured")));
        }
        if self.active_kernels().is_empty() {
            return Err(Error::Config("no kernels left after drops".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Branch {
    k: usize,
    /// Axial length after the valid convolution.
    l: usize,
    /// C × K(z) × K(y) × K(x)
    conv_w: Tensor,
    conv_b: Tensor,
    bn: BatchNorm,
    /// C × C × L, absent for `BranchMax`.
    pool: Option<(Tensor, Tensor)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenModel {
    config: PenConfig,
    branches: Vec<Branch>,
    /// out × C × N, absent for `CollectMax`.
    collect: Option<(Tensor, Tensor)>,
    collect_bn: BatchNorm,
    mode: Mode,
}

pub fn pen_init(config: &PenConfig, seed: u64) -> Result<PenModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = config.branch_channels;
    let kernels = config.active_kernels();
    let mut branches = Vec::with_capacity(kernels.len());
    for &k in &kernels {
        let l = config.z_in - k + 1;
        let fan = k * k * k;
        let conv_w = Tensor::uniform(&[c, k, k, k], he_uniform_bound(fan), &mut rng);
        let conv_b = Tensor::uniform(&[c], bias_bound(fan), &mut rng);
        let pool = (config.variant != PenVariant::BranchMax).then(|| {
            let fan = c * l;
            (
                Tensor::uniform(&[c, c, l], he_uniform_bound(fan), &mut rng),
                Tensor::uniform(&[c], bias_bound(fan), &mut rng),
            )
        });
        branches.push(Branch { k, l, conv_w, conv_b, bn: BatchNorm::new(c), pool });
    }
    let n_b = kernels.len();
    let out = config.out_channels;
    let collect = (config.variant != PenVariant::CollectMax).then(|| {
        let fan = c * n_b;
        (
            Tensor::uniform(&[out, c, n_b], he_uniform_bound(fan), &mut rng),
            Tensor::uniform(&[out], bias_bound(fan), &mut rng),
        )
    });
    Ok(PenModel {
        config: config.clone(),
        branches,
        collect,
        collect_bn: BatchNorm::new(out),
        mode: Mode::Train,
    })
}

/// Everything the backward pass needs from one training forward.
#[derive(Debug, Clone)]
pub struct PenCache {
    n: usize,
    h: usize,
    w: usize,
    mode: Mode,
    input: Vec<f64>,
    branches: Vec<BranchCache>,
    /// N × C × N_b × HW stacked branch outputs (base collect only needs it).
    stacked: Vec<f64>,
    collect_arg: Vec<u8>,
    collect_relu: Vec<f64>,
    collect_bn: Option<BnCache>,
    pre_norm: Vec<f64>,
    output: Vec<f64>,
}

#[derive(Debug, Clone)]
struct BranchCache {
    relu: Vec<f64>,
    bn: Option<BnCache>,
    /// Post-BN activations, kept for the pool weight gradient.
    act: Vec<f64>,
    pool_arg: Vec<u16>,
}

impl PenModel {
    pub fn config(&self) -> &PenConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Projects one stack with running batch-norm statistics.
    pub fn predict(&self, stack: &ImageStack) -> Result<RgbProjection> {
        let mut m = self.clone();
        m.mode = Mode::Eval;
        let (out, _) = m.forward(std::slice::from_ref(stack))?;
        Ok(out.into_iter().next().expect("one projection"))
    }

    /// Batched forward in the model's current mode. All stacks must share
    /// H×W; shallower stacks are center-padded to `z_in`.
    pub fn forward(&mut self, stacks: &[ImageStack]) -> Result<(Vec<RgbProjection>, PenCache)> {
        let cache = self.forward_raw(stacks)?;
        let (h, w) = (cache.h, cache.w);
        let per = 3 * h * w;
        let outs = cache
            .output
            .chunks_exact(per)
            .map(|c| {
                RgbProjection::new(
                    ndarray::Array3::from_shape_vec((3, h, w), c.to_vec()).expect("shape"),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((outs, cache))
    }

    fn pack_input(&self, stacks: &[ImageStack]) -> Result<(Vec<f64>, usize, usize)> {
        let first = stacks
            .first()
            .ok_or_else(|| Error::Shape("empty batch".into()))?;
        let (h, w) = (first.height(), first.width());
        let z_in = self.config.z_in;
        let mut input = Vec::with_capacity(stacks.len() * z_in * h * w);
        for s in stacks {
            if (s.height(), s.width()) != (h, w) {
                return Err(Error::Shape("stacks in a batch must share H×W".into()));
            }
            if s.depth() > z_in {
                return Err(Error::Shape(format!(
                    "stack depth {} exceeds network input depth {z_in}",
                    s.depth()
                )));
            }
            let padded = if s.depth() < z_in { s.center_pad_z(z_in)? } else { s.clone() };
            input.extend(padded.voxels().iter().copied());
        }
        Ok((input, h, w))
    }

    fn forward_raw(&mut self, stacks: &[ImageStack]) -> Result<PenCache> {
        let (input, h, w) = self.pack_input(stacks)?;
        let n = stacks.len();
        let hw = h * w;
        let c = self.config.branch_channels;
        let n_b = self.branches.len();
        let train = self.mode == Mode::Train;
        let z_in = self.config.z_in;

        let mut stacked = vec![0.0; n * c * n_b * hw];
        let mut branch_caches = Vec::with_capacity(n_b);
        for (bi, br) in self.branches.iter_mut().enumerate() {
            let mut a = conv3d_forward(br, &input, n, z_in, h, w, c);
            relu_in_place(&mut a);
            let relu = if train { a.clone() } else { Vec::new() };
            let s = br.l * hw;
            let bn = if train {
                Some(br.bn.forward_train(&mut a, n, s))
            } else {
                br.bn.forward_eval(&mut a, n, s);
                None
            };
            let mut pool_arg = Vec::new();
            for ni in 0..n {
                let act = &a[ni * c * s..(ni + 1) * c * s];
                let mut out = vec![0.0; c * hw];
                match &br.pool {
                    Some((pw, pb)) => {
                        for (ci, row) in out.chunks_exact_mut(hw).enumerate() {
                            row.fill(pb.data[ci]);
                        }
                        matmul(c, c * br.l, hw, &pw.data, false, act, false, 1.0, &mut out);
                    }
                    None => {
                        for ci in 0..c {
                            for p in 0..hw {
                                let mut best = act[ci * s + p];
                                let mut arg = 0u16;
                                for li in 1..br.l {
                                    let v = act[(ci * br.l + li) * hw + p];
                                    if v > best {
                                        best = v;
                                        arg = li as u16;
                                    }
                                }
                                out[ci * hw + p] = best;
                                if train {
                                    pool_arg.push(arg);
                                }
                            }
                        }
                    }
                }
                for ci in 0..c {
                    stacked[((ni * c + ci) * n_b + bi) * hw..][..hw]
                        .copy_from_slice(&out[ci * hw..(ci + 1) * hw]);
                }
            }
            let act = if train && br.pool.is_some() { a } else { Vec::new() };
            branch_caches.push(BranchCache { relu, bn, act, pool_arg });
        }

        let out_c = self.config.out_channels;
        let mut y = vec![0.0; n * out_c * hw];
        let mut collect_arg = Vec::new();
        for ni in 0..n {
            let src = &stacked[ni * c * n_b * hw..(ni + 1) * c * n_b * hw];
            let dst = &mut y[ni * out_c * hw..(ni + 1) * out_c * hw];
            match &self.collect {
                Some((cw, cb)) => {
                    for (co, row) in dst.chunks_exact_mut(hw).enumerate() {
                        row.fill(cb.data[co]);
                    }
                    matmul(out_c, c * n_b, hw, &cw.data, false, src, false, 1.0, dst);
                }
                None => {
                    for ci in 0..c {
                        for p in 0..hw {
                            let mut best = src[ci * n_b * hw + p];
                            let mut arg = 0u8;
                            for b in 1..n_b {
                                let v = src[(ci * n_b + b) * hw + p];
                                if v > best {
                                    best = v;
                                    arg = b as u8;
                                }
                            }
                            dst[ci * hw + p] = best;
                            if train {
                                collect_arg.push(arg);
                            }
                        }
                    }
                }
            }
        }
        relu_in_place(&mut y);
        let collect_relu = if train { y.clone() } else { Vec::new() };
        let collect_bn = if train {
            Some(self.collect_bn.forward_train(&mut y, n, hw))
        } else {
            self.collect_bn.forward_eval(&mut y, n, hw);
            None
        };
        let pre_norm = y.clone();
        for sample in y.chunks_exact_mut(out_c * hw) {
            normalize_unit_in_place(sample);
        }
        Ok(PenCache {
            n,
            h,
            w,
            mode: self.mode,
            input: if train { input } else { Vec::new() },
            branches: branch_caches,
            stacked: if train && self.collect.is_some() { stacked } else { Vec::new() },
            collect_arg,
            collect_relu,
            collect_bn,
            pre_norm,
            output: y,
        })
    }

    /// Parameter gradients for upstream gradient `grad_out` (N × 3 × H × W)
    /// on the cached training forward.
    pub fn backward(&self, cache: &PenCache, grad_out: &[f64]) -> Result<Gradients> {
        if cache.mode != Mode::Train {
            return Err(Error::State("gradients require a training-mode forward".into()));
        }
        let (n, h, w) = (cache.n, cache.h, cache.w);
        let hw = h * w;
        let c = self.config.branch_channels;
        let out_c = self.config.out_channels;
        let n_b = self.branches.len();
        if grad_out.len() != n * out_c * hw {
            return Err(Error::Shape(format!(
                "upstream gradient has {} values, expected {}",
                grad_out.len(),
                n * out_c * hw
            )));
        }
        let mut grads = Gradients::new();

        let mut g = Vec::with_capacity(grad_out.len());
        for ((x, y), go) in cache
            .pre_norm
            .chunks_exact(out_c * hw)
            .zip(cache.output.chunks_exact(out_c * hw))
            .zip(grad_out.chunks_exact(out_c * hw))
        {
            g.extend(normalize_unit_backward(x, y, go));
        }
        let bn_cache = cache.collect_bn.as_ref().expect("train cache");
        let mut g = self.collect_bn.backward(bn_cache, &g, n, hw, "collect.bn", &mut grads);
        relu_backward_in_place(&mut g, &cache.collect_relu);

        let mut g_stacked = vec![0.0; n * c * n_b * hw];
        match &self.collect {
            Some((cw, _)) => {
                let mut gw = vec![0.0; cw.len()];
                let mut gb = vec![0.0; out_c];
                for ni in 0..n {
                    let gy = &g[ni * out_c * hw..(ni + 1) * out_c * hw];
                    let src = &cache.stacked[ni * c * n_b * hw..(ni + 1) * c * n_b * hw];
                    for (co, row) in gy.chunks_exact(hw).enumerate() {
                        gb[co] += row.iter().sum::<f64>();
                    }
                    matmul(out_c, hw, c * n_b, gy, false, src, true, 1.0, &mut gw);
                    let gs = &mut g_stacked[ni * c * n_b * hw..(ni + 1) * c * n_b * hw];
                    matmul(c * n_b, out_c, hw, &cw.data, true, gy, false, 0.0, gs);
                }
                accumulate(&mut grads, "collect.conv.weight".into(), gw);
                accumulate(&mut grads, "collect.conv.bias".into(), gb);
            }
            None => {
                for ni in 0..n {
                    for ci in 0..c {
                        for p in 0..hw {
                            let i = (ni * c + ci) * hw + p;
                            let b = cache.collect_arg[i] as usize;
                            g_stacked[((ni * c + ci) * n_b + b) * hw + p] += g[i];
                        }
                    }
                }
            }
        }

        for (bi, (br, bc)) in self.branches.iter().zip(&cache.branches).enumerate() {
            let prefix = format!("branch{}", br.k);
            let s = br.l * hw;
            let mut g_act = vec![0.0; n * c * s];
            let mut gpw = br.pool.as_ref().map(|(pw, _)| vec![0.0; pw.len()]);
            let mut gpb = vec![0.0; c];
            for ni in 0..n {
                let mut gy = vec![0.0; c * hw];
                for ci in 0..c {
                    gy[ci * hw..(ci + 1) * hw]
                        .copy_from_slice(&g_stacked[((ni * c + ci) * n_b + bi) * hw..][..hw]);
                }
                let ga = &mut g_act[ni * c * s..(ni + 1) * c * s];
                match (&br.pool, gpw.as_mut()) {
                    (Some((pw, _)), Some(gpw)) => {
                        let act = &bc.act[ni * c * s..(ni + 1) * c * s];
                        for (ci, row) in gy.chunks_exact(hw).enumerate() {
                            gpb[ci] += row.iter().sum::<f64>();
                        }
                        matmul(c, hw, c * br.l, &gy, false, act, true, 1.0, gpw);
                        matmul(c * br.l, c, hw, &pw.data, true, &gy, false, 0.0, ga);
                    }
                    _ => {
                        for ci in 0..c {
                            for p in 0..hw {
                                let li = bc.pool_arg[(ni * c + ci) * hw + p] as usize;
                                ga[(ci * br.l + li) * hw + p] += gy[ci * hw + p];
                            }
                        }
                    }
                }
            }
            if let Some(gpw) = gpw {
                accumulate(&mut grads, format!("{prefix}.pool.weight"), gpw);
                accumulate(&mut grads, format!("{prefix}.pool.bias"), gpb);
            }
            let bn_cache = bc.bn.as_ref().expect("train cache");
            let mut g_conv = br.bn.backward(bn_cache, &g_act, n, s, &format!("{prefix}.bn"), &mut grads);
            relu_backward_in_place(&mut g_conv, &bc.relu);
            let (gw, gb) = conv3d_weight_grad(br, &cache.input, &g_conv, n, self.config.z_in, h, w, c);
            accumulate(&mut grads, format!("{prefix}.conv.weight"), gw);
            accumulate(&mut grads, format!("{prefix}.conv.bias"), gb);
        }
        Ok(grads)
    }
}

impl PenCache {
    /// Normalized outputs, N × 3 × H × W.
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

/// Single-stack forward in the model's current mode.
pub fn pen_forward(model: &mut PenModel, stack: &ImageStack) -> Result<RgbProjection> {
    let (out, _) = model.forward(std::slice::from_ref(stack))?;
    Ok(out.into_iter().next().expect("one projection"))
}

/// Reverse-mode gradients for one cached training forward.
pub fn pen_gradients(model: &PenModel, cache: &PenCache, upstream: &[f64]) -> Result<Gradients> {
    model.backward(cache, upstream)
}

/// Valid-in-z, same-in-xy convolution of every sample; returns N × C × L × HW.
fn conv3d_forward(br: &Branch, x: &[f64], n: usize, z_in: usize, h: usize, w: usize, c: usize) -> Vec<f64> {
    let (k, l, hw) = (br.k, br.l, h * w);
    let kk = k * k;
    let mut out = vec![0.0; n * c * l * hw];
    let mut cols = if k == 1 { Vec::new() } else { vec![0.0; kk * hw] };
    let mut rows = vec![0.0; c * k * kk];
    let mut tmp = vec![0.0; c * k * hw];
    for s in 0..n {
        let dst = &mut out[s * c * l * hw..(s + 1) * c * l * hw];
        for ci in 0..c {
            dst[ci * l * hw..(ci + 1) * l * hw].fill(br.conv_b.data[ci]);
        }
        for z in 0..z_in {
            let plane = &x[(s * z_in + z) * hw..(s * z_in + z + 1) * hw];
            let patches: &[f64] = if k == 1 {
                plane
            } else {
                im2col_plane(plane, h, w, k, &mut cols);
                &cols
            };
            let dz_lo = (z + 1).saturating_sub(l);
            let dz_hi = z.min(k - 1);
            let nd = dz_hi + 1 - dz_lo;
            // all channels in one product: row (ci, j) holds tap dz_lo + j
            for ci in 0..c {
                rows[ci * nd * kk..(ci + 1) * nd * kk]
                    .copy_from_slice(&br.conv_w.data[(ci * k + dz_lo) * kk..(ci * k + dz_hi + 1) * kk]);
            }
            matmul(c * nd, kk, hw, &rows[..c * nd * kk], false, patches, false, 0.0, &mut tmp[..c * nd * hw]);
            for ci in 0..c {
                for j in 0..nd {
                    let li = z - (dz_lo + j);
                    let o = &mut dst[(ci * l + li) * hw..(ci * l + li + 1) * hw];
                    let t = &tmp[(ci * nd + j) * hw..(ci * nd + j + 1) * hw];
                    for (a, b) in o.iter_mut().zip(t) {
                        *a += b;
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv3d_weight_grad(
    br: &Branch,
    x: &[f64],
    gy: &[f64],
    n: usize,
    z_in: usize,
    h: usize,
    w: usize,
    c: usize,
) -> (Vec<f64>, Vec<f64>) {
    let (k, l, hw) = (br.k, br.l, h * w);
    let kk = k * k;
    let mut gw = vec![0.0; c * k * kk];
    let mut gb = vec![0.0; c];
    let mut cols = if k == 1 { Vec::new() } else { vec![0.0; kk * hw] };
    let mut tmp = vec![0.0; c * k * hw];
    let mut rows = vec![0.0; c * k * kk];
    for s in 0..n {
        let g = &gy[s * c * l * hw..(s + 1) * c * l * hw];
        for ci in 0..c {
            gb[ci] += g[ci * l * hw..(ci + 1) * l * hw].iter().sum::<f64>();
        }
        for z in 0..z_in {
            let plane = &x[(s * z_in + z) * hw..(s * z_in + z + 1) * hw];
            let patches: &[f64] = if k == 1 {
                plane
            } else {
                im2col_plane(plane, h, w, k, &mut cols);
                &cols
            };
            let dz_lo = (z + 1).saturating_sub(l);
            let dz_hi = z.min(k - 1);
            let nd = dz_hi + 1 - dz_lo;
            for ci in 0..c {
                for j in 0..nd {
                    let li = z - (dz_lo + j);
                    tmp[(ci * nd + j) * hw..(ci * nd + j + 1) * hw]
                        .copy_from_slice(&g[(ci * l + li) * hw..(ci * l + li + 1) * hw]);
                }
            }
            matmul(c * nd, hw, kk, &tmp[..c * nd * hw], false, patches, true, 0.0, &mut rows[..c * nd * kk]);
            for ci in 0..c {
                let dst = &mut gw[(ci * k + dz_lo) * kk..(ci * k + dz_hi + 1) * kk];
                for (a, b) in dst.iter_mut().zip(&rows[ci * nd * kk..(ci + 1) * nd * kk]) {
                    *a += b;
                }
            }
        }
    }
    (gw, gb)
}

impl Parameterized for PenModel {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor, ParamKind)) {
        for br in &self.branches {
            let p = format!("branch{}", br.k);
            f(&format!("{p}.conv.weight"), &br.conv_w, ParamKind::Trainable);
            f(&format!("{p}.conv.bias"), &br.conv_b, ParamKind::Trainable);
            br.bn.visit(&format!("{p}.bn"), f);
            if let Some((pw, pb)) = &br.pool {
                f(&format!("{p}.pool.weight"), pw, ParamKind::Trainable);
                f(&format!("{p}.pool.bias"), pb, ParamKind::Trainable);
            }
        }
        if let Some((cw, cb)) = &self.collect {
            f("collect.conv.weight", cw, ParamKind::Trainable);
            f("collect.conv.bias", cb, ParamKind::Trainable);
        }
        self.collect_bn.visit("collect.bn", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor, ParamKind)) {
        for br in &mut self.branches {
            let p = format!("branch{}", br.k);
            f(&format!("{p}.conv.weight"), &mut br.conv_w, ParamKind::Trainable);
            f(&format!("{p}.conv.bias"), &mut br.conv_b, ParamKind::Trainable);
            br.bn.visit_mut(&format!("{p}.bn"), f);
            if let Some((pw, pb)) = &mut br.pool {
                f(&format!("{p}.pool.weight"), pw, ParamKind::Trainable);
                f(&format!("{p}.pool.bias"), pb, ParamKind::Trainable);
            }
        }
        if let Some((cw, cb)) = &mut self.collect {
            f("collect.conv.weight", cw, ParamKind::Trainable);
            f("collect.conv.bias", cb, ParamKind::Trainable);
        }
        self.collect_bn.visit_mut("collect.bn", f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::VoxelGeometry;
    use ndarray::Array3;
    use rand::Rng;

    fn random_stack(z: usize, h: usize, w: usize, seed: u64) -> ImageStack {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = Array3::from_shape_fn((z, h, w), |_| rng.gen_range(0.0..1.0));
        ImageStack::new(v, VoxelGeometry::default()).unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = PenConfig::default();
        assert_eq!(pen_init(&cfg, 3).unwrap(), pen_init(&cfg, 3).unwrap());
        assert_ne!(pen_init(&cfg, 3).unwrap(), pen_init(&cfg, 4).unwrap());
    }

    #[test]
    fn kernel_deeper_than_input_is_rejected() {
        let cfg = PenConfig { kernel_sizes: vec![13], z_in: 9, ..PenConfig::default() };
        assert!(matches!(pen_init(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_too_deep_stack() {
        let cfg = PenConfig { kernel_sizes: vec![1, 3], z_in: 5, ..PenConfig::default() };
        let mut m = pen_init(&cfg, 0).unwrap();
        assert!(matches!(pen_forward(&mut m, &random_stack(6, 4, 4, 0)), Err(Error::Shape(_))));
    }

    #[test]
    fn shallow_stack_is_padded() {
        let cfg = PenConfig { kernel_sizes: vec![1, 3], z_in: 7, ..PenConfig::default() };
        let mut m = pen_init(&cfg, 0).unwrap();
        let out = pen_forward(&mut m, &random_stack(4, 8, 8, 1)).unwrap();
        assert_eq!(out.pixels().dim(), (3, 8, 8));
    }

    #[test]
    fn eval_forward_is_bit_identical() {
        let cfg = PenConfig { kernel_sizes: vec![1, 3], z_in: 5, ..PenConfig::default() };
        let m = pen_init(&cfg, 0).unwrap();
        let s = random_stack(5, 8, 8, 2);
        assert_eq!(m.predict(&s).unwrap(), m.predict(&s).unwrap());
    }

    #[test]
    fn backward_requires_training_cache() {
        let cfg = PenConfig { kernel_sizes: vec![1], z_in: 3, ..PenConfig::default() };
        let mut m = pen_init(&cfg, 0).unwrap();
        m.set_mode(Mode::Eval);
        let (_, cache) = m.forward(&[random_stack(3, 4, 4, 0)]).unwrap();
        assert!(matches!(pen_gradients(&m, &cache, &[0.0; 48]), Err(Error::State(_))));
    }
}
