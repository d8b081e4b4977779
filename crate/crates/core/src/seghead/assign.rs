use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GtAssignment, HeadConfig};
use crate::error::{Error, Result};
use crate::types::AnnotationSet;

const MAX_ITERATIONS: usize = 300;

/// Cell id → output channel.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ChannelAssignment {
    pub n_out: usize,
    pub channels: BTreeMap<u64, usize>,
}

impl ChannelAssignment {
    pub fn get(&self, id: u64) -> Option<usize> {
        self.channels.get(&id).copied()
    }
}

/// Channels for axial positions `zs` in a stack spanning slices 0..=z_max.
///
/// Up to `n_out` cells are ranked by z. Larger sets use 1-D Lloyd's
/// iterations from evenly spaced centers, and channels are then ordered by
/// final center position.
pub fn assign_channels(zs: &[f64], n_out: usize, z_max: f64) -> Result<Vec<usize>> {
    if n_out == 0 {
        return Err(Error::Config("n_out must be at least 1".into()));
    }
    if zs.iter().any(|z| !z.is_finite()) {
        return Err(Error::Validation("axial positions must be finite".into()));
    }
    if zs.len() <= n_out {
        let mut order: Vec<usize> = (0..zs.len()).collect();
        order.sort_by(|&a, &b| zs[a].total_cmp(&zs[b]).then(a.cmp(&b)));
        let mut out = vec![0; zs.len()];
        for (rank, &i) in order.iter().enumerate() {
            out[i] = rank;
        }
        return Ok(out);
    }
    let mut centers: Vec<f64> = if n_out == 1 {
        vec![0.0]
    } else {
        (0..n_out)
            .map(|j| j as f64 * z_max / (n_out - 1) as f64)
            .collect()
    };
    let mut labels = nearest(zs, &centers);
    for _ in 0..MAX_ITERATIONS {
        let mut sums = vec![0.0; n_out];
        let mut counts = vec![0usize; n_out];
        for (&z, &l) in zs.iter().zip(&labels) {
            sums[l] += z;
            counts[l] += 1;
        }
        for j in 0..n_out {
            if counts[j] > 0 {
                centers[j] = sums[j] / counts[j] as f64;
            }
        }
        let next = nearest(zs, &centers);
        if next == labels {
            break;
        }
        labels = next;
    }
    let mut order: Vec<usize> = (0..n_out).collect();
    order.sort_by(|&a, &b| centers[a].total_cmp(&centers[b]).then(a.cmp(&b)));
    let mut rank = vec![0; n_out];
    for (r, &j) in order.iter().enumerate() {
        rank[j] = r;
    }
    Ok(labels.into_iter().map(|l| rank[l]).collect())
}

fn nearest(zs: &[f64], centers: &[f64]) -> Vec<usize> {
    zs.iter()
        .map(|&z| {
            let mut best = 0;
            for (j, &c) in centers.iter().enumerate().skip(1) {
                if (z - c).abs() < (z - centers[best]).abs() {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Independent uniform channel per id.
pub fn random_assignment(ids: &[u64], n_out: usize, seed: u64) -> ChannelAssignment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_out.max(1);
    ChannelAssignment {
        n_out: n,
        channels: ids.iter().map(|&id| (id, rng.gen_range(0..n))).collect(),
    }
}

/// Assignment for a whole annotation set according to `config.gt_assignment`.
pub fn assign_cells(set: &AnnotationSet, config: &HeadConfig, seed: u64) -> Result<ChannelAssignment> {
    let ids: Vec<u64> = set.cells.iter().map(|c| c.id).collect();
    match config.gt_assignment {
        GtAssignment::Kmeans => {
            let zs: Vec<f64> = set.cells.iter().map(|c| c.z_centroid).collect();
            let z_max = set.dims.0.saturating_sub(1) as f64;
            let ch = assign_channels(&zs, config.n_out, z_max)?;
            Ok(ChannelAssignment {
                n_out: config.n_out,
                channels: ids.into_iter().zip(ch).collect(),
            })
        }
        GtAssignment::Random => Ok(random_assignment(&ids, config.n_out, seed)),
        GtAssignment::Single => Ok(ChannelAssignment {
            n_out: 1,
            channels: ids.into_iter().map(|id| (id, 0)).collect(),
        }),
    }
}
