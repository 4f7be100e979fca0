//! Training loop, dataset construction and model evaluation.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use bevfuse_core::head::{LossBreakdown, LossConfig};
use bevfuse_core::numerics::Module;
use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cbgs::{cbgs_resample, class_counts};
use crate::config::{ExperimentConfig, TrainConfig};
use crate::error::{HarnessError, Result};
use crate::metrics::{evaluate, EvalReport};
use crate::model::{lidar_frame, prepare, FusionDetector, Sample};
use crate::optim::{clip_grad_norm, lr_at, Adam};
use crate::scene::{generate_dataset, Scene, SceneSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub scene: usize,
    pub loss: LossBreakdown,
    pub lr: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub log: Vec<StepLog>,
    pub seconds: f64,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.log.iter().map(|l| l.loss.total).collect()
    }

    fn window_mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }

    /// Mean loss over the first `window` steps.
    pub fn initial(&self, window: usize) -> f64 {
        let l = self.losses();
        Self::window_mean(&l[..window.min(l.len())])
    }

    /// Mean loss over the last `window` steps.
    pub fn last(&self, window: usize) -> f64 {
        let l = self.losses();
        Self::window_mean(&l[l.len().saturating_sub(window)..])
    }

    /// `step total cls reg vel dn lr grad_norm` per line.
    pub fn curve_text(&self) -> String {
        let mut s = String::from("# step total cls reg vel dn lr grad_norm\n");
        for l in &self.log {
            let b = &l.loss;
            let _ = writeln!(
                s,
                "{} {} {} {} {} {} {} {}",
                l.step, b.total, b.cls, b.reg, b.vel, b.dn, l.lr, l.grad_norm
            );
        }
        s
    }

    pub fn write_curve(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.curve_text())?;
        Ok(())
    }
}

/// Trains on `data` for `cfg.steps` steps, one scene per step. Scenes are
/// drawn uniformly or, with `cfg.cbgs`, by class-balanced weights.
pub fn train_toy(
    model: &mut FusionDetector,
    data: &[Sample],
    cfg: &TrainConfig,
    seed: u64,
    mut progress: impl FnMut(&StepLog),
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(HarnessError::Data("training set is empty".into()));
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = if cfg.cbgs {
        let classes: Vec<Vec<usize>> = data
            .iter()
            .map(|s| s.gt.iter().map(|b| b.class).collect())
            .collect();
        cbgs_resample(
            &classes,
            &class_counts(&classes, model.head.cfg.num_classes),
        )?
    } else {
        vec![1.0; data.len()]
    };
    let picker = WeightedIndex::new(&weights).map_err(|e| HarnessError::Data(e.to_string()))?;
    let loss_cfg = LossConfig::default();
    let mut opt = Adam::new(cfg.weight_decay);
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let idx = picker.sample(&mut rng);
        model.zero_grad();
        let loss = model.train_step(&data[idx], &loss_cfg, &mut rng)?;
        if !loss.total.is_finite() {
            return Err(HarnessError::Divergence {
                step,
                detail: format!(
                    "non-finite loss (cls {}, reg {}, vel {}, dn {}) on scene {idx}",
                    loss.cls, loss.reg, loss.vel, loss.dn
                ),
            });
        }
        let grad_norm = clip_grad_norm(model, cfg.clip_norm);
        if !grad_norm.is_finite() {
            return Err(HarnessError::Divergence {
                step,
                detail: format!("non-finite gradient norm on scene {idx}"),
            });
        }
        let lr = lr_at(cfg, step);
        opt.step(model, lr);
        let entry = StepLog {
            step,
            scene: idx,
            loss,
            lr,
            grad_norm,
        };
        progress(&entry);
        log.push(entry);
    }
    Ok(TrainReport {
        log,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Seeds of the training scenes and held-out scenes of an experiment.
pub fn train_seeds(cfg: &ExperimentConfig) -> (u64, usize) {
    (cfg.seed << 32, cfg.train.scenes)
}

pub fn eval_seeds(cfg: &ExperimentConfig) -> (u64, usize) {
    ((cfg.seed << 32) + cfg.eval.seed_offset, cfg.eval.scenes)
}

pub fn make_scenes(cfg: &ExperimentConfig, first: u64, count: usize) -> Result<Vec<Scene>> {
    generate_dataset(&SceneSpec::from_config(cfg)?, first, count)
}

pub fn make_samples(cfg: &ExperimentConfig, scenes: &[Scene]) -> Result<Vec<Sample>> {
    scenes
        .iter()
        .map(|s| {
            let lf = lidar_frame(cfg, &s.ego_from_lidar)?;
            Ok(prepare(s, &lf))
        })
        .collect()
}

/// A freshly initialised detector for the scenes of `cfg`.
pub fn build_model(cfg: &ExperimentConfig) -> Result<FusionDetector> {
    let spec = SceneSpec::from_config(cfg)?;
    FusionDetector::new(cfg, &spec.rig, lidar_frame(cfg, &spec.ego_from_lidar)?)
}

pub fn evaluate_model(
    model: &FusionDetector,
    data: &[Sample],
    cfg: &ExperimentConfig,
) -> Result<EvalReport> {
    let mut preds = Vec::with_capacity(data.len());
    for s in data {
        preds.push(model.predict(s, cfg.head.max_detections)?);
    }
    let gts: Vec<_> = data.iter().map(|s| s.gt.clone()).collect();
    Ok(evaluate(
        &preds,
        &gts,
        &cfg.eval.thresholds,
        cfg.head.num_classes,
    ))
}

/// Everything one experiment arm produces.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub model: FusionDetector,
    pub train: TrainReport,
    pub eval: EvalReport,
}

/// Generates data, trains and evaluates one configuration.
pub fn run_experiment(cfg: &ExperimentConfig, progress: impl FnMut(&StepLog)) -> Result<RunResult> {
    let (first, n) = train_seeds(cfg);
    let train = make_samples(cfg, &make_scenes(cfg, first, n)?)?;
    let (first, n) = eval_seeds(cfg);
    let held_out = make_samples(cfg, &make_scenes(cfg, first, n)?)?;
    run_on(cfg, &train, &held_out, progress)
}

/// Trains and evaluates on prepared data.
pub fn run_on(
    cfg: &ExperimentConfig,
    train: &[Sample],
    held_out: &[Sample],
    progress: impl FnMut(&StepLog),
) -> Result<RunResult> {
    let mut model = build_model(cfg)?;
    let report = train_toy(
        &mut model,
        train,
        &cfg.train,
        cfg.seed ^ 0x0074_7261_696e,
        progress,
    )?;
    let eval = evaluate_model(&model, held_out, cfg)?;
    Ok(RunResult {
        model,
        train: report,
        eval,
    })
}
