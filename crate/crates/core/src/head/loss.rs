use super::boxes::{Box3D, BOX_GEOMETRY, BOX_PARAMS};
use super::decoder::{HeadOutput, LayerOutput};
use super::denoise::DnQueries;
use super::matching::{box_l1, hungarian, Assignment, CostWeights};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Matching cost weights, reused as the classification / box loss weights.
    pub cost: CostWeights,
    pub vel: f64,
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            cost: CostWeights::default(),
            vel: 0.25,
            alpha: 0.25,
            gamma: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    /// Weighted terms of the matched queries, summed over layers.
    pub cls: f64,
    pub reg: f64,
    pub vel: f64,
    /// Weighted denoising terms, summed over layers.
    pub dn: f64,
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Sigmoid focal loss of one logit and its derivative.
pub fn focal_loss(z: f64, target: bool, alpha: f64, gamma: f64) -> (f64, f64) {
    let p = 1.0 / (1.0 + (-z).exp());
    if target {
        let log_p = -softplus(-z);
        let q = (1.0 - p).powf(gamma);
        (
            -alpha * q * log_p,
            alpha * q * (gamma * p * log_p - (1.0 - p)),
        )
    } else {
        let log_q = -softplus(z);
        let pg = p.powf(gamma);
        (
            -(1.0 - alpha) * pg * log_q,
            (1.0 - alpha) * pg * (p - gamma * (1.0 - p) * log_q),
        )
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Hungarian assignment of the learned queries of one layer.
pub fn match_layer(
    out: &LayerOutput,
    num_queries: usize,
    num_classes: usize,
    gt: &[Box3D],
    w: &CostWeights,
) -> Result<Assignment> {
    let targets: Vec<[f64; BOX_PARAMS]> = gt.iter().map(Box3D::to_params).collect();
    let mut cost = Vec::with_capacity(num_queries * gt.len());
    for q in 0..num_queries {
        let logits = &out.logits[q * num_classes..(q + 1) * num_classes];
        let pred = &out.boxes[q * BOX_PARAMS..(q + 1) * BOX_PARAMS];
        for (g, t) in gt.iter().zip(&targets) {
            if g.class >= num_classes {
                return Err(Error::Input(format!(
                    "ground-truth class {} out of range",
                    g.class
                )));
            }
            cost.push(w.cls * softplus(-logits[g.class]) + w.reg * box_l1(pred, t));
        }
    }
    Ok(Assignment {
        pred_to_gt: hungarian(&cost, num_queries, gt.len())?,
    })
}

pub fn match_all(out: &HeadOutput, gt: &[Box3D], w: &CostWeights) -> Result<Vec<Assignment>> {
    out.layers
        .iter()
        .map(|l| match_layer(l, out.num_queries, out.num_classes, gt, w))
        .collect()
}

struct Terms {
    cls: f64,
    reg: f64,
    vel: f64,
}

/// Adds the loss of query `q` (target `gt` or background) scaled by `s`.
fn query_loss(
    out: &LayerOutput,
    grad: &mut LayerOutput,
    q: usize,
    k: usize,
    gt: Option<&Box3D>,
    cfg: &LossConfig,
    s: f64,
) -> Terms {
    let mut t = Terms {
        cls: 0.0,
        reg: 0.0,
        vel: 0.0,
    };
    for c in 0..k {
        let (l, d) = focal_loss(
            out.logits[q * k + c],
            gt.is_some_and(|g| g.class == c),
            cfg.alpha,
            cfg.gamma,
        );
        t.cls += cfg.cost.cls * s * l;
        grad.logits[q * k + c] += cfg.cost.cls * s * d;
    }
    let Some(g) = gt else { return t };
    let target = g.to_params();
    let pred = &out.boxes[q * BOX_PARAMS..(q + 1) * BOX_PARAMS];
    let gb = &mut grad.boxes[q * BOX_PARAMS..(q + 1) * BOX_PARAMS];
    for i in 0..BOX_GEOMETRY {
        let d = pred[i] - target[i];
        t.reg += cfg.cost.reg * s * d.abs();
        gb[i] += cfg.cost.reg * s * sign(d);
    }
    if g.velocity.is_some() {
        for i in BOX_GEOMETRY..BOX_PARAMS {
            let d = pred[i] - target[i];
            t.vel += cfg.vel * s * d.abs();
            gb[i] += cfg.vel * s * sign(d);
        }
    }
    t
}

/// Composite loss summed over decoder layers, with gradients for every
/// layer output. Learned queries use `assignments`; denoising queries are
/// supervised by their source boxes. Terms are normalised by the number of
/// ground-truth boxes (denoising also by the group count).
pub fn detection_loss(
    out: &HeadOutput,
    gt: &[Box3D],
    assignments: &[Assignment],
    dn: Option<&DnQueries>,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, Vec<LayerOutput>)> {
    if assignments.len() != out.layers.len() {
        return Err(Error::Input(format!(
            "{} assignments for {} layers",
            assignments.len(),
            out.layers.len()
        )));
    }
    let (nq, k) = (out.num_queries, out.num_classes);
    for a in assignments {
        let mut seen = vec![false; gt.len()];
        if a.pred_to_gt.len() != nq {
            return Err(Error::Input(format!(
                "assignment covers {} of {nq} queries",
                a.pred_to_gt.len()
            )));
        }
        for g in a.pred_to_gt.iter().flatten() {
            if *g >= gt.len() || std::mem::replace(&mut seen[*g], true) {
                return Err(Error::Input(format!(
                    "invalid or repeated ground-truth index {g}"
                )));
            }
        }
    }
    let ndn = dn.map_or(0, DnQueries::len);
    if ndn != out.num_dn {
        return Err(Error::Input(format!(
            "{} denoising queries in the output, {ndn} supplied",
            out.num_dn
        )));
    }
    let norm = 1.0 / gt.len().max(1) as f64;
    let mut b = LossBreakdown::default();
    let mut grads = Vec::with_capacity(out.layers.len());
    for (layer, a) in out.layers.iter().zip(assignments) {
        let mut g = LayerOutput::zeros_like(layer);
        for (q, m) in a.pred_to_gt.iter().enumerate() {
            let t = query_loss(layer, &mut g, q, k, m.map(|i| &gt[i]), cfg, norm);
            b.cls += t.cls;
            b.reg += t.reg;
            b.vel += t.vel;
        }
        if let Some(dn) = dn {
            let s = norm / dn.groups.max(1) as f64;
            for (i, &src) in dn.source.iter().enumerate() {
                let t = query_loss(layer, &mut g, nq + i, k, Some(&gt[src]), cfg, s);
                b.dn += t.cls + t.reg + t.vel;
            }
        }
        grads.push(g);
    }
    b.total = b.cls + b.reg + b.vel + b.dn;
    Ok((b, grads))
}
