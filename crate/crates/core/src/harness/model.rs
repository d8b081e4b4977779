use std::fs;
use std::path::Path;

use ndarray::{s, Array3};

use super::config::{InputMode, TrainConfig};
use crate::error::{Error, Result};
use crate::nn::{read_container, write_container, ContainerEntry, Mode, ParamKind, Parameterized, Tensor};
use crate::pen::{pen_init, PenModel};
use crate::projections::{linear_depth_embed, mip, DepthEmbedConfig};
use crate::seghead::{flows_to_instances, DetectionSet, HeadModel, SegPrediction};
use crate::types::{ImageStack, RgbProjection};

const PEN_FILE: &str = "pen.params";
const HEAD_FILE: &str = "head.params";
const CONFIG_FILE: &str = "config.toml";

/// Projection (learned or fixed) plus segmentation head.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: TrainConfig,
    pub pen: Option<PenModel>,
    pub head: HeadModel,
}

impl Model {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let pen = match config.input_mode {
            InputMode::Pen => Some(pen_init(&config.pen_config, config.seed.wrapping_mul(2).wrapping_add(1))?),
            _ => None,
        };
        let head = HeadModel::new(&config.head_config, config.seed.wrapping_mul(2).wrapping_add(2))?;
        Ok(Self { config: config.clone(), pen, head })
    }

    pub fn set_mode(&mut self, mode: Mode) {
        if let Some(p) = self.pen.as_mut() {
            p.set_mode(mode);
        }
        self.head.set_mode(mode);
    }

    /// Mean-subtracts and center-pads along z to the network input depth.
    pub fn prepare_stack(&self, stack: &ImageStack) -> Result<ImageStack> {
        let z_in = self.config.pen_config.z_in;
        let centered = stack.mean_subtracted();
        if centered.depth() < z_in {
            centered.center_pad_z(z_in)
        } else if centered.depth() == z_in || self.pen.is_none() {
            Ok(centered)
        } else {
            Err(Error::Shape(format!(
                "stack depth {} exceeds network input depth {z_in}",
                stack.depth()
            )))
        }
    }

    /// Fixed projection of an already prepared stack.
    pub(crate) fn fixed_projection(mode: InputMode, stack: &ImageStack) -> Result<RgbProjection> {
        match mode {
            InputMode::Mip => Ok(mip(stack)),
            InputMode::Linear => linear_depth_embed(stack, &DepthEmbedConfig::default()),
            InputMode::Pen => Err(Error::State("PEN projection needs a model".into())),
        }
    }

    /// Eval-mode projection of a raw stack.
    pub fn project(&self, stack: &ImageStack) -> Result<RgbProjection> {
        let prepared = self.prepare_stack(stack)?;
        match &self.pen {
            Some(p) => p.predict(&prepared),
            None => Self::fixed_projection(self.config.input_mode, &prepared),
        }
    }

    /// Eval-mode head output; the stack is zero-padded laterally to the
    /// U-Net stride and the maps cropped back.
    pub fn predict(&self, stack: &ImageStack) -> Result<SegPrediction> {
        let (_, h, w) = stack.dims();
        let stride = 1usize << self.config.head_config.unet_levels;
        let (hp, wp) = (h.div_ceil(stride) * stride, w.div_ceil(stride) * stride);
        let padded = if (hp, wp) == (h, w) {
            stack.clone()
        } else {
            let mut v = Array3::zeros((stack.depth(), hp, wp));
            v.slice_mut(s![.., ..h, ..w]).assign(stack.voxels());
            ImageStack::new(v, stack.geometry())?
        };
        let proj = self.project(&padded)?;
        let pred = self.head.predict(&proj)?;
        if (hp, wp) == (h, w) {
            return Ok(pred);
        }
        let mut maps = Vec::with_capacity(4 * pred.n_out * h * w);
        for plane in pred.maps.chunks_exact(hp * wp) {
            for y in 0..h {
                maps.extend_from_slice(&plane[y * wp..y * wp + w]);
            }
        }
        SegPrediction::new(pred.n_out, h, w, maps)
    }

    pub fn detect(&self, stack: &ImageStack) -> Result<DetectionSet> {
        Ok(flows_to_instances(&self.predict(stack)?, &self.config.head_config))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let cfg = dir.join(CONFIG_FILE);
        fs::write(&cfg, self.config.to_toml_string()).map_err(|e| Error::io(&cfg, e))?;
        if let Some(p) = &self.pen {
            write_container(&dir.join(PEN_FILE), &entries(p))?;
        }
        write_container(&dir.join(HEAD_FILE), &entries(&self.head))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let config = TrainConfig::load(&dir.join(CONFIG_FILE))?;
        let mut model = Model::new(&config)?;
        if let Some(p) = model.pen.as_mut() {
            let path = dir.join(PEN_FILE);
            restore(p, read_container(&path)?, &path)?;
        }
        let path = dir.join(HEAD_FILE);
        restore(&mut model.head, read_container(&path)?, &path)?;
        model.set_mode(Mode::Eval);
        Ok(model)
    }
}

fn entries(m: &dyn Parameterized) -> Vec<ContainerEntry> {
    let mut out = Vec::new();
    m.visit(&mut |name, t, _| {
        out.push(ContainerEntry { name: name.to_string(), shape: t.shape.clone(), data: t.data.clone() });
    });
    out
}

fn restore(m: &mut dyn Parameterized, entries: Vec<ContainerEntry>, path: &Path) -> Result<()> {
    let mut by_name: std::collections::BTreeMap<String, ContainerEntry> =
        entries.into_iter().map(|e| (e.name.clone(), e)).collect();
    let mut problem = None;
    m.visit_mut(&mut |name, t, _| match by_name.remove(name) {
        Some(e) if e.shape == t.shape => t.data = e.data,
        Some(_) => problem = Some(format!("shape mismatch for {name}")),
        None => problem = Some(format!("missing parameter {name}")),
    });
    if let Some(extra) = by_name.keys().next() {
        problem.get_or_insert(format!("unexpected parameter {extra}"));
    }
    match problem {
        Some(msg) => Err(Error::format(path, msg)),
        None => Ok(()),
    }
}

impl Parameterized for Model {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor, ParamKind)) {
        if let Some(p) = &self.pen {
            p.visit(&mut |n, t, k| f(&format!("pen.{n}"), t, k));
        }
        self.head.visit(&mut |n, t, k| f(&format!("head.{n}"), t, k));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor, ParamKind)) {
        if let Some(p) = &mut self.pen {
            p.visit_mut(&mut |n, t, k| f(&format!("pen.{n}"), t, k));
        }
        self.head.visit_mut(&mut |n, t, k| f(&format!("head.{n}"), t, k));
    }
}
