//! Minimal reverse-mode building blocks for the two trainable modules.
//!
//! Activations are flat `f64` buffers in N×C×S layout (S = flattened spatial
//! extent). Every layer exposes an explicit forward that returns what its
//! backward needs; there is no tape.

mod container;
mod gemm;
mod layers;
mod optim;

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use container::{decode as decode_container, encode as encode_container, read_container, write_container, ContainerEntry};
pub use gemm::matmul;
pub use layers::{
    concat_channels, maxpool2_backward, maxpool2_forward, relu_backward_in_place, relu_in_place,
    split_channels, upsample2_backward, upsample2_forward, BatchNorm, BnCache, Conv2d,
};
pub(crate) use layers::{accumulate, im2col_plane};
pub use optim::{clip_global_norm, global_norm, Sgd, SgdConfig};

/// Named parameter gradients.
pub type Gradients = BTreeMap<String, Vec<f64>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    /// Uniform in ±bound.
    pub fn uniform(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(|_| rng.gen_range(-bound..=bound)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Batch-norm behaviour: batch statistics in `Train`, running statistics in
/// `Eval`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    /// Non-trainable state such as batch-norm running statistics.
    Buffer,
}

/// Something that owns named tensors.
pub trait Parameterized {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor, ParamKind));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor, ParamKind));

    fn trainable_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t, kind| {
            if kind == ParamKind::Trainable {
                n += t.len();
            }
        });
        n
    }

    fn trainable_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit(&mut |name, _, kind| {
            if kind == ParamKind::Trainable {
                names.push(name.to_string());
            }
        });
        names
    }
}

/// Fan-in scaled uniform bound for ReLU networks.
pub fn he_uniform_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in.max(1) as f64).sqrt()
}

pub fn bias_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in.max(1) as f64).sqrt()
}
