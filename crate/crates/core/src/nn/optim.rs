use std::collections::BTreeMap;

use super::{Gradients, ParamKind, Parameterized};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self { lr: 0.02, momentum: 0.9, weight_decay: 1e-5 }
    }
}

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient.
#[derive(Debug, Clone, Default)]
pub struct Sgd {
    pub config: SgdConfig,
    velocity: BTreeMap<String, Vec<f64>>,
}

impl Sgd {
    pub fn new(config: SgdConfig) -> Self {
        Self { config, velocity: BTreeMap::new() }
    }

    /// Applies one update to every trainable tensor that has a gradient.
    pub fn step(&mut self, model: &mut dyn Parameterized, grads: &Gradients) {
        let SgdConfig { lr, momentum, weight_decay } = self.config;
        let velocity = &mut self.velocity;
        model.visit_mut(&mut |name, tensor, kind| {
            if kind != ParamKind::Trainable {
                return;
            }
            let Some(g) = grads.get(name) else { return };
            let v = velocity
                .entry(name.to_string())
                .or_insert_with(|| vec![0.0; tensor.len()]);
            for ((theta, vi), gi) in tensor.data.iter_mut().zip(v.iter_mut()).zip(g) {
                let d = gi + weight_decay * *theta;
                *vi = momentum * *vi + d;
                *theta -= lr * *vi;
            }
        });
    }
}

pub fn global_norm(grads: &Gradients) -> f64 {
    grads
        .values()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norms before and after clipping.
pub fn clip_global_norm(grads: &mut Gradients, max_norm: f64) -> (f64, f64) {
    let before = global_norm(grads);
    if before > max_norm && before > 0.0 {
        let scale = max_norm / before;
        for g in grads.values_mut() {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
    }
    (before, global_norm(grads))
}
