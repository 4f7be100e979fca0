//! Centre-distance detection metrics: per-class AP at several distance
//! thresholds plus translation, orientation and velocity errors of true
//! positives.

use std::f64::consts::PI;
use std::fmt::Write as _;

use bevfuse_core::head::{normalize_yaw, Box3D};

/// Threshold at which true-positive errors are measured.
pub const TP_THRESHOLD: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub thresholds: Vec<f64>,
    /// `ap[class][threshold]`; `None` for classes without ground truth.
    pub ap: Vec<Vec<Option<f64>>>,
    /// Mean over classes with ground truth, per threshold.
    pub map: Vec<f64>,
    pub gt_counts: Vec<usize>,
    /// Means over classes with at least one true positive.
    pub mate: Option<f64>,
    pub maoe: Option<f64>,
    pub mave: Option<f64>,
}

/// Area under the precision envelope, with `tp` flags in score order.
pub fn average_precision(tp: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(tp.len());
    let mut recall = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (i, &t) in tp.iter().enumerate() {
        hits += t as usize;
        precision.push(hits as f64 / (i + 1) as f64);
        recall.push(hits as f64 / n_gt as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev) * p;
        prev = *r;
    }
    ap
}

struct Matched {
    tp: Vec<bool>,
    /// `(pred, gt)` frame-local pairs of true positives.
    pairs: Vec<(usize, usize, usize)>,
}

/// Greedy score-ordered matching of one class across frames: each
/// prediction takes the nearest still-free ground truth within `thr`.
fn match_class(preds: &[Vec<Box3D>], gts: &[Vec<Box3D>], class: usize, thr: f64) -> Matched {
    let mut order: Vec<(usize, usize)> = preds
        .iter()
        .enumerate()
        .flat_map(|(f, ps)| {
            ps.iter()
                .enumerate()
                .filter(|(_, p)| p.class == class)
                .map(move |(i, _)| (f, i))
        })
        .collect();
    // stable: ties keep frame / list order
    order.sort_by(|a, b| preds[b.0][b.1].score.total_cmp(&preds[a.0][a.1].score));
    let mut taken: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let mut tp = Vec::with_capacity(order.len());
    let mut pairs = Vec::new();
    for (f, i) in order {
        let p = &preds[f][i];
        let best = gts[f]
            .iter()
            .enumerate()
            .filter(|(j, g)| g.class == class && !taken[f][*j])
            .map(|(j, g)| (j, p.bev_distance(g)))
            .filter(|(_, d)| *d <= thr)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match best {
            Some((j, _)) => {
                taken[f][j] = true;
                tp.push(true);
                pairs.push((f, i, j));
            }
            None => tp.push(false),
        }
    }
    Matched { tp, pairs }
}

fn yaw_error(a: f64, b: f64) -> f64 {
    normalize_yaw(a - b).abs().min(PI)
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// `preds[f]` and `gts[f]` are the detections and ground truth of frame `f`.
pub fn evaluate(
    preds: &[Vec<Box3D>],
    gts: &[Vec<Box3D>],
    thresholds: &[f64],
    num_classes: usize,
) -> EvalReport {
    assert_eq!(preds.len(), gts.len(), "one prediction list per frame");
    let gt_counts: Vec<usize> = (0..num_classes)
        .map(|c| gts.iter().flatten().filter(|g| g.class == c).count())
        .collect();
    let mut ap = vec![vec![None; thresholds.len()]; num_classes];
    let (mut ate, mut aoe, mut ave) = (Vec::new(), Vec::new(), Vec::new());
    for c in 0..num_classes {
        if gt_counts[c] == 0 {
            continue;
        }
        for (t, &thr) in thresholds.iter().enumerate() {
            ap[c][t] = Some(average_precision(
                &match_class(preds, gts, c, thr).tp,
                gt_counts[c],
            ));
        }
        let m = match_class(preds, gts, c, TP_THRESHOLD);
        let (mut te, mut oe, mut ve) = (Vec::new(), Vec::new(), Vec::new());
        for &(f, i, j) in &m.pairs {
            let (p, g) = (&preds[f][i], &gts[f][j]);
            te.push(p.bev_distance(g));
            oe.push(yaw_error(p.yaw, g.yaw));
            if let (Some(pv), Some(gv)) = (p.velocity, g.velocity) {
                ve.push((pv[0] - gv[0]).hypot(pv[1] - gv[1]));
            }
        }
        ate.extend(mean(&te));
        aoe.extend(mean(&oe));
        ave.extend(mean(&ve));
    }
    let map = (0..thresholds.len())
        .map(|t| {
            let v: Vec<f64> = ap.iter().filter_map(|a| a[t]).collect();
            mean(&v).unwrap_or(0.0)
        })
        .collect();
    EvalReport {
        thresholds: thresholds.to_vec(),
        ap,
        map,
        gt_counts,
        mate: mean(&ate),
        maoe: mean(&aoe),
        mave: mean(&ave),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".into(), |x| format!("{x:.6}"))
}

impl EvalReport {
    /// mAP at the threshold closest to `thr`.
    pub fn map_at(&self, thr: f64) -> f64 {
        let i = self
            .thresholds
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - thr).abs().total_cmp(&(b.1 - thr).abs()))
            .map(|(i, _)| i)
            .expect("at least one threshold");
        self.map[i]
    }

    /// Mean of mAP over all thresholds.
    pub fn mean_ap(&self) -> f64 {
        self.map.iter().sum::<f64>() / self.map.len().max(1) as f64
    }

    pub fn to_table(&self, class_names: &[&str]) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:<12}{:>6}", "class", "gt");
        for t in &self.thresholds {
            let _ = write!(s, "{:>10}", format!("AP@{t}m"));
        }
        s.push('\n');
        for (c, row) in self.ap.iter().enumerate() {
            let name = class_names.get(c).copied().unwrap_or("?");
            let _ = write!(s, "{name:<12}{:>6}", self.gt_counts[c]);
            for a in row {
                let _ = write!(s, "{:>10}", a.map_or("-".into(), |v| format!("{v:.4}")));
            }
            s.push('\n');
        }
        let _ = write!(
            s,
            "{:<12}{:>6}",
            "mean",
            self.gt_counts.iter().sum::<usize>()
        );
        for m in &self.map {
            let _ = write!(s, "{m:>10.4}");
        }
        s.push('\n');
        let _ = writeln!(
            s,
            "mATE {}  mAOE {}  mAVE {}",
            opt(self.mate),
            opt(self.maoe),
            opt(self.mave)
        );
        s
    }

    /// `key=value` lines.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        for (t, m) in self.thresholds.iter().zip(&self.map) {
            let _ = writeln!(s, "map@{t}={m:.6}");
        }
        for (c, row) in self.ap.iter().enumerate() {
            for (t, a) in self.thresholds.iter().zip(row) {
                let _ = writeln!(s, "ap.{c}@{t}={}", opt(*a));
            }
        }
        let _ = writeln!(s, "mate={}", opt(self.mate));
        let _ = writeln!(s, "maoe={}", opt(self.maoe));
        let _ = writeln!(s, "mave={}", opt(self.mave));
        s
    }
}
