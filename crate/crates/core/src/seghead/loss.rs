use serde::{Deserialize, Serialize};

use super::{SegPrediction, SegTargets};
use crate::error::{Error, Result};

const DICE_EPS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub bce: f64,
    pub mse: f64,
    pub dice: f64,
    pub total: f64,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}


fn bce_with_logits(x: f64, t: f64) -> f64 {
    x.max(0.0) - x * t + (-x.abs()).exp().ln_1p()
}

pub fn seg_loss(pred: &SegPrediction, targets: &SegTargets) -> Result<LossBreakdown> {
    if (pred.n_out, pred.height, pred.width) != (targets.n_out, targets.height, targets.width) {
        return Err(Error::Shape("prediction and targets differ in shape".into()));
    }
    Ok(seg_loss_backward(&pred.maps, std::slice::from_ref(targets))?.0)
}

/// Loss averaged over a batch of stacked prediction maps
/// (N × 4·n_out × H × W) and its gradient w.r.t. those maps.
pub fn seg_loss_backward(maps: &[f64], targets: &[SegTargets]) -> Result<(LossBreakdown, Vec<f64>)> {
    let first = targets
        .first()
        .ok_or_else(|| Error::Shape("empty target batch".into()))?;
    let (n_out, h, w) = (first.n_out, first.height, first.width);
    let hw = h * w;
    let n = targets.len();
    if targets.iter().any(|t| (t.n_out, t.height, t.width) != (n_out, h, w)) {
        return Err(Error::Shape("targets in a batch must share shape".into()));
    }
    if maps.len() != n * 4 * n_out * hw {
        return Err(Error::Shape(format!(
            "prediction has {} values, expected {}",
            maps.len(),
            n * 4 * n_out * hw
        )));
    }
    let n_px = (n * n_out * hw) as f64;
    let n_flow = 2.0 * n_px;
    let n_ch = (n * n_out) as f64;
    let mut grad = vec![0.0; maps.len()];
    let (mut bce, mut mse, mut dice) = (0.0, 0.0, 0.0);
    for (s, t) in targets.iter().enumerate() {
        let base = s * 4 * n_out * hw;
        for c in 0..n_out {
            let cp = base + c * hw;
            for (i, &tv) in t.cellprob(c).iter().enumerate() {
                let x = maps[cp + i];
                bce += bce_with_logits(x, tv);
                grad[cp + i] = (sigmoid(x) - tv) / n_px;
            }

            let ep = base + (n_out + c) * hw;
            let te = t.edges(c);
            let p: Vec<f64> = maps[ep..ep + hw].iter().map(|&x| sigmoid(x)).collect();
            let spt: f64 = p.iter().zip(te).map(|(a, b)| a * b).sum();
            let sp: f64 = p.iter().sum();
            let st: f64 = te.iter().sum();
            let a = 2.0 * spt + DICE_EPS;
            let b = sp + st + DICE_EPS;
            dice += 1.0 - a / b;
            for i in 0..hw {
                let dd_dp = -(2.0 * te[i] * b - a) / (b * b);
                grad[ep + i] = dd_dp * p[i] * (1.0 - p[i]) / n_ch;
            }

            for (kind, tf) in [(2, t.flow_y(c)), (3, t.flow_x(c))] {
                let fp = base + (kind * n_out + c) * hw;
                for (i, &tv) in tf.iter().enumerate() {
                    let d = maps[fp + i] - tv;
                    mse += d * d;
                    grad[fp + i] = 2.0 * d / n_flow;
                }
            }
        }
    }
    let (bce, mse, dice) = (bce / n_px, mse / n_flow, dice / n_ch);
    Ok((LossBreakdown { bce, mse, dice, total: bce + mse + dice }, grad))
}
