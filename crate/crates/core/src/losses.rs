//! Circle loss over descriptor distances and the staged training objective.

use serde::{Deserialize, Serialize};

use crate::agents::Stage;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    pub gamma: f64,
    pub delta_p: f64,
    pub delta_n: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Fine pairs closer than this (metres) are positives.
    pub pos_radius: f64,
    /// Fine pairs farther than this are negatives; pairs in between are ignored.
    pub safe_radius: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        LossParams {
            gamma: 10.0,
            delta_p: 0.1,
            delta_n: 1.4,
            lambda1: 1.0,
            lambda2: 1.0,
            pos_radius: 0.05,
            safe_radius: 0.15,
        }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::Config("gamma must be positive".into()));
        }
        if !(0.0 < self.delta_p && self.delta_p < self.delta_n) {
            return Err(Error::Config("need 0 < delta_p < delta_n".into()));
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if !(0.0 < self.pos_radius && self.pos_radius <= self.safe_radius) {
            return Err(Error::Config("need 0 < pos_radius <= safe_radius".into()));
        }
        Ok(())
    }
}

/// Loss value and its derivative with respect to every input distance.
#[derive(Debug, Clone, PartialEq)]
pub struct CircleLoss {
    pub value: f64,
    pub d_pos: Vec<f64>,
    pub d_neg: Vec<f64>,
}

const DIST_SLACK: f64 = 1e-9;

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Circle loss of one anchor.
///
/// Positive exponents are `γ·max(0, d−Δp)·(d−Δp)`, negative exponents
/// `γ·max(0, Δn−d)·(Δn−d)`; the loss is `softplus(lse(pos) + lse(neg))/γ`.
/// An empty side gives zero. Gradients differentiate through the adaptive
/// weights as well.
pub fn circle_loss(pos: &[f64], neg: &[f64], p: &LossParams) -> Result<CircleLoss> {
    for &d in pos.iter().chain(neg) {
        if !(-DIST_SLACK..=2.0 + DIST_SLACK).contains(&d) {
            return Err(Error::Contract(format!(
                "descriptor distance {d} outside [0, 2]"
            )));
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Ok(CircleLoss {
            value: 0.0,
            d_pos: vec![0.0; pos.len()],
            d_neg: vec![0.0; neg.len()],
        });
    }
    let g = p.gamma;
    let ep: Vec<f64> = pos
        .iter()
        .map(|&d| g * (d - p.delta_p).max(0.0) * (d - p.delta_p))
        .collect();
    let en: Vec<f64> = neg
        .iter()
        .map(|&d| g * (p.delta_n - d).max(0.0) * (p.delta_n - d))
        .collect();
    let lp = log_sum_exp(&ep);
    let ln = log_sum_exp(&en);
    let z = lp + ln;
    let value = softplus(z) / g;
    // dL/dz = sigmoid(z)/γ; dz/de_j = softmax weight of e_j on its side
    let outer = crate::numerics::sigmoid(z) / g;
    let d_pos = pos
        .iter()
        .zip(&ep)
        .map(|(&d, &e)| outer * (e - lp).exp() * 2.0 * g * (d - p.delta_p).max(0.0))
        .collect();
    let d_neg = neg
        .iter()
        .zip(&en)
        .map(|(&d, &e)| -outer * (e - ln).exp() * 2.0 * g * (p.delta_n - d).max(0.0))
        .collect();
    Ok(CircleLoss {
        value,
        d_pos,
        d_neg,
    })
}

/// `λ1·L_t + λ2·L_full` in reward-guided epochs, `λ1·L_t` otherwise.
pub fn total_loss(l_t: f64, l_full: f64, p: &LossParams, stage: Stage) -> f64 {
    match stage {
        Stage::RewardsGuided => p.lambda1 * l_t + p.lambda2 * l_full,
        _ => p.lambda1 * l_t,
    }
}

/// Circle loss over two descriptor sets and its gradient w.r.t. both.
#[derive(Debug, Clone)]
pub struct DescriptorLoss {
    pub value: f64,
    pub d_a: Tensor,
    pub d_b: Tensor,
    pub anchors: usize,
}

/// Labels of a descriptor pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairLabel {
    Positive,
    Negative,
    Ignored,
}

fn normalize_rows(x: &Tensor) -> (Tensor, Vec<f64>) {
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let n = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        norms.push(n);
        if n > 0.0 {
            out.row_mut(r).iter_mut().for_each(|v| *v /= n);
        }
    }
    (out, norms)
}

/// Symmetric circle loss between row descriptors `a` (`P_a×C`) and `b`.
///
/// Rows are L2-normalized and compared by Euclidean distance. Every row of
/// `a` with at least one positive and one negative is an anchor, and likewise
/// for `b`; the loss is the mean of the two sides' anchor averages (a side
/// with no anchors contributes zero).
pub fn descriptor_circle_loss(
    a: &Tensor,
    b: &Tensor,
    label: impl Fn(usize, usize) -> PairLabel,
    p: &LossParams,
) -> Result<DescriptorLoss> {
    let (na, c) = a.shape2()?;
    let (nb, cb) = b.shape2()?;
    if c != cb {
        return Err(Error::Dimension(format!(
            "descriptor widths {c} and {cb}"
        )));
    }
    let (ah, an) = normalize_rows(a);
    let (bh, bn) = normalize_rows(b);
    let mut dist = vec![0.0; na * nb];
    let mut labels = vec![PairLabel::Ignored; na * nb];
    for i in 0..na {
        for j in 0..nb {
            let d: f64 = ah
                .row(i)
                .iter()
                .zip(bh.row(j))
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            dist[i * nb + j] = d.min(2.0);
            labels[i * nb + j] = label(i, j);
        }
    }
    let mut g_dist = vec![0.0; na * nb];
    let mut value = 0.0;
    let mut anchors = 0;
    for side in 0..2 {
        let (outer, inner) = if side == 0 { (na, nb) } else { (nb, na) };
        let idx = |o: usize, n: usize| if side == 0 { o * nb + n } else { n * nb + o };
        let mut terms = Vec::new();
        for o in 0..outer {
            let pos: Vec<usize> = (0..inner)
                .filter(|&n| labels[idx(o, n)] == PairLabel::Positive)
                .map(|n| idx(o, n))
                .collect();
            let neg: Vec<usize> = (0..inner)
                .filter(|&n| labels[idx(o, n)] == PairLabel::Negative)
                .map(|n| idx(o, n))
                .collect();
            if pos.is_empty() || neg.is_empty() {
                continue;
            }
            let pd: Vec<f64> = pos.iter().map(|&f| dist[f]).collect();
            let nd: Vec<f64> = neg.iter().map(|&f| dist[f]).collect();
            terms.push((pos, neg, circle_loss(&pd, &nd, p)?));
        }
        if terms.is_empty() {
            continue;
        }
        anchors += terms.len();
        let w = 0.5 / terms.len() as f64;
        for (pos, neg, cl) in terms {
            value += w * cl.value;
            for (f, g) in pos.iter().zip(&cl.d_pos).chain(neg.iter().zip(&cl.d_neg)) {
                g_dist[*f] += w * g;
            }
        }
    }

    // back through the distances, then through the row normalization
    let mut g_ah = Tensor::zeros(&[na, c]);
    let mut g_bh = Tensor::zeros(&[nb, c]);
    for i in 0..na {
        for j in 0..nb {
            let g = g_dist[i * nb + j];
            let d = dist[i * nb + j];
            if g == 0.0 || d == 0.0 {
                continue;
            }
            for k in 0..c {
                let diff = (ah.at2(i, k) - bh.at2(j, k)) / d * g;
                *g_ah.at2_mut(i, k) += diff;
                *g_bh.at2_mut(j, k) -= diff;
            }
        }
    }
    Ok(DescriptorLoss {
        value,
        d_a: normalize_backward(&ah, &an, &g_ah),
        d_b: normalize_backward(&bh, &bn, &g_bh),
        anchors,
    })
}

fn normalize_backward(xh: &Tensor, norms: &[f64], g: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(g.dims());
    for r in 0..g.rows() {
        if norms[r] == 0.0 {
            continue;
        }
        let proj: f64 = xh.row(r).iter().zip(g.row(r)).map(|(a, b)| a * b).sum();
        let xr = xh.row(r);
        for (k, o) in out.row_mut(r).iter_mut().enumerate() {
            *o = (g.at2(r, k) - xr[k] * proj) / norms[r];
        }
    }
    out
}

crate::kv::kv_fields!(LossParams {
    "gamma" => gamma,
    "delta_p" => delta_p,
    "delta_n" => delta_n,
    "lambda1" => lambda1,
    "lambda2" => lambda2,
    "pos_radius" => pos_radius,
    "safe_radius" => safe_radius,
});
