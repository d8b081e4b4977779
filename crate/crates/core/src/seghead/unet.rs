use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{HeadConfig, SegPrediction};
use crate::error::{Error, Result};
use crate::nn::{
    concat_channels, maxpool2_backward, maxpool2_forward, relu_backward_in_place, relu_in_place,
    split_channels, upsample2_backward, upsample2_forward, BatchNorm, BnCache, Conv2d, Gradients,
    Mode, ParamKind, Parameterized, Tensor,
};
use crate::types::RgbProjection;

const IN_CHANNELS: usize = 3;

/// conv3 → BN → ReLU, twice.
#[derive(Debug, Clone, PartialEq)]
struct Block {
    c1: Conv2d,
    b1: BatchNorm,
    c2: Conv2d,
    b2: BatchNorm,
}

#[derive(Debug, Clone)]
struct BlockCache {
    input: Vec<f64>,
    bn1: Option<BnCache>,
    r1: Vec<f64>,
    bn2: Option<BnCache>,
    r2: Vec<f64>,
}

impl Block {
    fn new(cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            c1: Conv2d::new(cin, cout, 3, rng),
            b1: BatchNorm::new(cout),
            c2: Conv2d::new(cout, cout, 3, rng),
            b2: BatchNorm::new(cout),
        }
    }

    fn forward(&mut self, x: Vec<f64>, n: usize, h: usize, w: usize, mode: Mode) -> (Vec<f64>, BlockCache) {
        let s = h * w;
        let mut a = self.c1.forward(&x, n, h, w);
        let bn1 = bn_forward(&mut self.b1, &mut a, n, s, mode);
        relu_in_place(&mut a);
        let mut b = self.c2.forward(&a, n, h, w);
        let bn2 = bn_forward(&mut self.b2, &mut b, n, s, mode);
        relu_in_place(&mut b);
        let cache = BlockCache { input: x, bn1, r1: a, bn2, r2: b.clone() };
        (b, cache)
    }

    #[allow(clippy::too_many_arguments)]
    fn backward(
        &self,
        cache: &BlockCache,
        mut g: Vec<f64>,
        n: usize,
        h: usize,
        w: usize,
        need_input: bool,
        prefix: &str,
        grads: &mut Gradients,
    ) -> Option<Vec<f64>> {
        let s = h * w;
        relu_backward_in_place(&mut g, &cache.r2);
        let g = self.b2.backward(cache.bn2.as_ref().expect("train cache"), &g, n, s, &format!("{prefix}.bn2"), grads);
        let mut g = self
            .c2
            .backward(&cache.r1, &g, n, h, w, true, &format!("{prefix}.conv2"), grads)
            .expect("input grad");
        relu_backward_in_place(&mut g, &cache.r1);
        let g = self.b1.backward(cache.bn1.as_ref().expect("train cache"), &g, n, s, &format!("{prefix}.bn1"), grads);
        self.c1
            .backward(&cache.input, &g, n, h, w, need_input, &format!("{prefix}.conv1"), grads)
    }

    fn visit(&self, p: &str, f: &mut dyn FnMut(&str, &Tensor, ParamKind)) {
        self.c1.visit(&format!("{p}.conv1"), f);
        self.b1.visit(&format!("{p}.bn1"), f);
        self.c2.visit(&format!("{p}.conv2"), f);
        self.b2.visit(&format!("{p}.bn2"), f);
    }

    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(&str, &mut Tensor, ParamKind)) {
        self.c1.visit_mut(&format!("{p}.conv1"), f);
        self.b1.visit_mut(&format!("{p}.bn1"), f);
        self.c2.visit_mut(&format!("{p}.conv2"), f);
        self.b2.visit_mut(&format!("{p}.bn2"), f);
    }
}

fn bn_forward(bn: &mut BatchNorm, x: &mut [f64], n: usize, s: usize, mode: Mode) -> Option<BnCache> {
    match mode {
        Mode::Train => Some(bn.forward_train(x, n, s)),
        Mode::Eval => {
            bn.forward_eval(x, n, s);
            None
        }
    }
}

/// Encoder-decoder with skip connections and a 1×1 output layer emitting
/// `4·n_out` maps.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadModel {
    n_out: usize,
    levels: usize,
    base: usize,
    enc: Vec<Block>,
    mid: Block,
    dec: Vec<Block>,
    out: Conv2d,
    mode: Mode,
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    n: usize,
    h: usize,
    w: usize,
    mode: Mode,
    enc: Vec<BlockCache>,
    pool_arg: Vec<Vec<u8>>,
    mid: BlockCache,
    dec: Vec<BlockCache>,
    last: Vec<f64>,
}

impl HeadModel {
    pub fn new(config: &HeadConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (levels, base) = (config.unet_levels, config.unet_base_width);
        let width = |i: usize| base << i;
        let mut enc = Vec::with_capacity(levels);
        for i in 0..levels {
            let cin = if i == 0 { IN_CHANNELS } else { width(i - 1) };
            enc.push(Block::new(cin, width(i), &mut rng));
        }
        let mid = Block::new(width(levels - 1), width(levels), &mut rng);
        let dec = (0..levels)
            .map(|i| Block::new(width(i + 1) + width(i), width(i), &mut rng))
            .collect();
        let out = Conv2d::new(base, 4 * config.n_out, 1, &mut rng);
        Ok(Self { n_out: config.n_out, levels, base, enc, mid, dec, out, mode: Mode::Train })
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Zeroes the output layer so every map is identically zero.
    pub fn zero_output_layer(&mut self) {
        self.out.weight.data.fill(0.0);
        self.out.bias.data.fill(0.0);
    }

    fn check_dims(&self, h: usize, w: usize) -> Result<()> {
        let stride = 1usize << self.levels;
        if h == 0 || w == 0 || h % stride != 0 || w % stride != 0 {
            return Err(Error::Shape(format!(
                "image {h}x{w} is not divisible by {stride}"
            )));
        }
        Ok(())
    }

    /// Batched forward on N × 3 × H × W input.
    pub fn forward(&mut self, x: &[f64], n: usize, h: usize, w: usize) -> Result<(Vec<f64>, HeadCache)> {
        self.check_dims(h, w)?;
        if x.len() != n * IN_CHANNELS * h * w {
            return Err(Error::Shape("head input must be N×3×H×W".into()));
        }
        let mode = self.mode;
        let mut cur = x.to_vec();
        let (mut ch, mut cw) = (h, w);
        let mut enc_caches = Vec::with_capacity(self.levels);
        let mut skips = Vec::with_capacity(self.levels);
        let mut pool_arg = Vec::with_capacity(self.levels);
        for (i, blk) in self.enc.iter_mut().enumerate() {
            let (y, c) = blk.forward(cur, n, ch, cw, mode);
            let (p, arg) = maxpool2_forward(&y, n, self.base << i, ch, cw);
            enc_caches.push(c);
            skips.push(y);
            pool_arg.push(arg);
            cur = p;
            ch /= 2;
            cw /= 2;
        }
        let (mut cur, mid_cache) = self.mid.forward(cur, n, ch, cw, mode);
        let mut dec_caches: Vec<Option<BlockCache>> = vec![None; self.levels];
        for i in (0..self.levels).rev() {
            let up = upsample2_forward(&cur, n, self.base << (i + 1), ch, cw);
            ch *= 2;
            cw *= 2;
            let cat = concat_channels(&up, self.base << (i + 1), &skips[i], self.base << i, n, ch * cw);
            let (y, c) = self.dec[i].forward(cat, n, ch, cw, mode);
            dec_caches[i] = Some(c);
            cur = y;
        }
        let out = self.out.forward(&cur, n, h, w);
        let cache = HeadCache {
            n,
            h,
            w,
            mode,
            enc: enc_caches,
            pool_arg,
            mid: mid_cache,
            dec: dec_caches.into_iter().map(|c| c.expect("filled")).collect(),
            last: cur,
        };
        Ok((out, cache))
    }

    /// Parameter gradients and, if requested, the gradient w.r.t. the input.
    pub fn backward(&self, cache: &HeadCache, g_out: &[f64], need_input: bool) -> Result<(Gradients, Option<Vec<f64>>)> {
        if cache.mode != Mode::Train {
            return Err(Error::State("gradients require a training-mode forward".into()));
        }
        let (n, h, w) = (cache.n, cache.h, cache.w);
        if g_out.len() != n * 4 * self.n_out * h * w {
            return Err(Error::Shape("output gradient has the wrong size".into()));
        }
        let mut grads = Gradients::new();
        let mut g = self
            .out
            .backward(&cache.last, g_out, n, h, w, true, "out", &mut grads)
            .expect("input grad");
        let mut skip_grads = Vec::with_capacity(self.levels);
        let (mut ch, mut cw) = (h, w);
        for i in 0..self.levels {
            let gcat = self.dec[i]
                .backward(&cache.dec[i], g, n, ch, cw, true, &format!("dec{i}"), &mut grads)
                .expect("input grad");
            let (gu, gs) = split_channels(&gcat, self.base << (i + 1), self.base << i, n, ch * cw);
            skip_grads.push(gs);
            ch /= 2;
            cw /= 2;
            g = upsample2_backward(&gu, n, self.base << (i + 1), ch, cw);
        }
        let mut g = self
            .mid
            .backward(&cache.mid, g, n, ch, cw, true, "mid", &mut grads)
            .expect("input grad");
        let mut input_grad = None;
        for i in (0..self.levels).rev() {
            let mut gy = maxpool2_backward(&g, &cache.pool_arg[i], n, self.base << i, ch * 2, cw * 2);
            ch *= 2;
            cw *= 2;
            for (a, b) in gy.iter_mut().zip(&skip_grads[i]) {
                *a += b;
            }
            let need = i > 0 || need_input;
            let gx = self.enc[i].backward(&cache.enc[i], gy, n, ch, cw, need, &format!("enc{i}"), &mut grads);
            if i > 0 {
                g = gx.expect("input grad");
            } else {
                input_grad = gx;
            }
        }
        Ok((grads, input_grad))
    }

    /// Eval-mode prediction for one projection.
    pub fn predict(&self, image: &RgbProjection) -> Result<SegPrediction> {
        let mut m = self.clone();
        m.mode = Mode::Eval;
        let (h, w) = (image.height(), image.width());
        let x: Vec<f64> = image.pixels().iter().copied().collect();
        let (maps, _) = m.forward(&x, 1, h, w)?;
        SegPrediction::new(self.n_out, h, w, maps)
    }
}

impl Parameterized for HeadModel {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor, ParamKind)) {
        for (i, b) in self.enc.iter().enumerate() {
            b.visit(&format!("enc{i}"), f);
        }
        self.mid.visit("mid", f);
        for (i, b) in self.dec.iter().enumerate() {
            b.visit(&format!("dec{i}"), f);
        }
        self.out.visit("out", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor, ParamKind)) {
        for (i, b) in self.enc.iter_mut().enumerate() {
            b.visit_mut(&format!("enc{i}"), f);
        }
        self.mid.visit_mut("mid", f);
        for (i, b) in self.dec.iter_mut().enumerate() {
            b.visit_mut(&format!("dec{i}"), f);
        }
        self.out.visit_mut("out", f);
    }
}
