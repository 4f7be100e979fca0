//! Named ablations: each trains and evaluates a few config variants and
//! reports them side by side. Tables are reports; nothing here asserts a
//! direction.

use std::fmt::Write as _;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::metrics::{EvalReport, TP_THRESHOLD};
use crate::scene::CLASS_NAMES;
use crate::train::{run_experiment, StepLog};

pub const ABLATIONS: &[&str] = &[
    "temporal",
    "fusion_method",
    "lidar_form",
    "order",
    "voxel_size",
    "image_size",
    "cbgs",
];

/// One variant: a row label and the overrides that produce it.
#[derive(Debug, Clone, PartialEq)]
pub struct Arm {
    pub label: String,
    pub overrides: Vec<String>,
}

fn arm(label: impl Into<String>, overrides: &[String]) -> Arm {
    Arm {
        label: label.into(),
        overrides: overrides.to_vec(),
    }
}

/// The variants of ablation `name` relative to `base`.
pub fn arms(name: &str, base: &ExperimentConfig) -> Result<Vec<Arm>> {
    let v = |s: &[&str]| s.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    Ok(match name {
        "temporal" => {
            let frames = base.scene.frames.max(8);
            [1, 2, 4, 8]
                .iter()
                .map(|t| {
                    arm(
                        format!("T={t}"),
                        &v(&[
                            &format!("temporal.frames={t}"),
                            &format!("scene.frames={frames}"),
                        ]),
                    )
                })
                .collect()
        }
        "fusion_method" => ["add", "concat", "mmfe"]
            .iter()
            .map(|m| arm(*m, &v(&[&format!("model.fusion=\"{m}\"")])))
            .collect(),
        "lidar_form" => ["bev", "voxel"]
            .iter()
            .map(|m| arm(*m, &v(&[&format!("lidar.form=\"{m}\"")])))
            .collect(),
        "order" => {
            let a = "points,image";
            let b = "image,points";
            vec![
                arm(a, &v(&[&format!("model.order=\"{a}\"")])),
                arm(b, &v(&[&format!("model.order=\"{b}\"")])),
            ]
        }
        "voxel_size" => {
            let s = base.lidar.voxel_size;
            [2.0 * s, s, 0.5 * s]
                .iter()
                .map(|x| {
                    arm(
                        format!("voxel {x}m"),
                        &v(&[&format!("lidar.voxel_size={x:?}")]),
                    )
                })
                .collect()
        }
        "image_size" => {
            let (w, h) = (base.camera.width, base.camera.height);
            [(w / 2, h / 2), (w, h), (w * 2, h * 2)]
                .iter()
                .map(|(w, h)| {
                    arm(
                        format!("{w}x{h}"),
                        &v(&[&format!("camera.width={w}"), &format!("camera.height={h}")]),
                    )
                })
                .collect()
        }
        "cbgs" => {
            // a rare last class makes the sampler matter
            let mut w = vec!["1.0".to_string(); base.head.num_classes];
            if let Some(last) = w.last_mut() {
                *last = "0.1".into();
            }
            let weights = format!("scene.class_weights=[{}]", w.join(", "));
            vec![
                arm("cbgs off", &[weights.clone(), "train.cbgs=false".into()]),
                arm("cbgs on", &[weights, "train.cbgs=true".into()]),
            ]
        }
        other => {
            return Err(HarnessError::Config(format!(
                "unknown ablation '{other}' (known: {})",
                ABLATIONS.join(", ")
            )))
        }
    })
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub label: String,
    pub eval: EvalReport,
    pub final_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct AblationTable {
    pub name: String,
    pub rows: Vec<AblationRow>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.3}"))
}

impl AblationTable {
    pub fn to_table(&self) -> String {
        let mut s = format!("ablation: {}\n", self.name);
        let _ = write!(s, "{:<16}", "arm");
        let thresholds = self
            .rows
            .first()
            .map(|r| r.eval.thresholds.clone())
            .unwrap_or_default();
        for t in &thresholds {
            let _ = write!(s, "{:>9}", format!("mAP@{t}"));
        }
        let classes = self.rows.first().map_or(0, |r| r.eval.ap.len());
        for c in 0..classes {
            let name = CLASS_NAMES.get(c).copied().unwrap_or("?");
            let _ = write!(s, "{:>12}", format!("{name}@{TP_THRESHOLD}"));
        }
        let _ = writeln!(
            s,
            "{:>8}{:>8}{:>8}{:>9}{:>8}",
            "mATE", "mAOE", "mAVE", "loss", "sec"
        );
        let tp = thresholds.iter().position(|t| *t == TP_THRESHOLD);
        for r in &self.rows {
            let _ = write!(s, "{:<16}", r.label);
            for m in &r.eval.map {
                let _ = write!(s, "{m:>9.3}");
            }
            for c in 0..classes {
                let _ = write!(s, "{:>12}", opt(tp.and_then(|t| r.eval.ap[c][t])));
            }
            let _ = writeln!(
                s,
                "{:>8}{:>8}{:>8}{:>9.3}{:>8.0}",
                opt(r.eval.mate),
                opt(r.eval.maoe),
                opt(r.eval.mave),
                r.final_loss,
                r.seconds
            );
        }
        s
    }
}

/// Trains and evaluates every arm of ablation `name`.
pub fn run_ablation(
    name: &str,
    base: &ExperimentConfig,
    mut progress: impl FnMut(&str, &StepLog),
) -> Result<AblationTable> {
    let mut rows = Vec::new();
    for a in arms(name, base)? {
        let cfg = base.with_overrides(&a.overrides)?;
        let run = run_experiment(&cfg, |l| progress(&a.label, l))?;
        let window = (cfg.train.steps / 10).max(1);
        rows.push(AblationRow {
            label: a.label,
            final_loss: run.train.last(window),
            seconds: run.train.seconds,
            eval: run.eval,
        });
    }
    Ok(AblationTable {
        name: name.to_string(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_named_ablation_resolves() {
        let base = ExperimentConfig::toy();
        for name in ABLATIONS {
            let a = arms(name, &base).unwrap();
            assert!(a.len() >= 2, "{name}");
            for x in &a {
                base.with_overrides(&x.overrides)
                    .unwrap()
                    .validate()
                    .unwrap();
            }
        }
    }

    #[test]
    fn unknown_ablation_is_an_error() {
        assert!(matches!(
            arms("dropout", &ExperimentConfig::toy()),
            Err(HarnessError::Config(_))
        ));
    }

    #[test]
    fn temporal_has_four_arms_with_enough_frames() {
        let a = arms("temporal", &ExperimentConfig::toy()).unwrap();
        assert_eq!(
            a.iter().map(|x| x.label.as_str()).collect::<Vec<_>>(),
            ["T=1", "T=2", "T=4", "T=8"]
        );
        let c = ExperimentConfig::toy()
            .with_overrides(&a[3].overrides)
            .unwrap();
        assert_eq!((c.temporal.frames, c.scene.frames), (8, 8));
    }
}
