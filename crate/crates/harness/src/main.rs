use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use bevfuse_core::head::{write_detections, LossConfig};
use bevfuse_core::numerics::checkpoint::{load_checkpoint, save_checkpoint};
use bevfuse_core::numerics::gradcheck::GradCheckOptions;
use bevfuse_core::numerics::Module;
use bevfuse_harness::ablation::run_ablation;
use bevfuse_harness::heatmap::{dump_bev_heatmap, Reduce};
use bevfuse_harness::manifest::Manifest;
use bevfuse_harness::model::{lidar_frame, prepare};
use bevfuse_harness::scene::{generate_from_config, Scene, SceneSpec, CLASS_NAMES};
use bevfuse_harness::train::{
    build_model, eval_seeds, evaluate_model, make_samples, make_scenes, run_experiment,
};
use bevfuse_harness::ExperimentConfig;
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(
    name = "bevfuse",
    version,
    about = "Desk-scale LiDAR + camera BEV fusion detector"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// TOML config file; overrides the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in config: `toy` or `full`.
    #[arg(long, global = true, default_value = "toy")]
    preset: String,
    /// `section.key=value` override, repeatable.
    #[arg(long = "set", global = true)]
    overrides: Vec<String>,
    /// Output directory for artifacts and the run manifest.
    #[arg(long, global = true, default_value = "runs/latest")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate scenes and save them.
    Gen {
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        first_seed: u64,
    },
    /// Train, write checkpoint, loss curve and held-out evaluation.
    Train,
    /// Evaluate a checkpoint on the held-out scenes.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run a checkpoint on one scene and write its detections.
    Forward {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Saved scene file; otherwise `--seed` generates one.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Finite-difference check of the whole detector on one scene.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Coordinates checked per parameter tensor.
        #[arg(long, default_value_t = 4)]
        coords: usize,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        /// Uniform parameter perturbation applied first. Fresh weights put
        /// sampling points on grid nodes and ReLU inputs at exactly zero,
        /// where the loss has kinks.
        #[arg(long, default_value_t = 0.02)]
        jitter: f64,
    },
    /// Train and evaluate the arms of a named ablation.
    Ablate { name: String },
    /// Dump the fused BEV map of one scene as a PGM image.
    Heatmap {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "l2")]
        reduce: String,
    },
}

fn command_name(c: &Cmd) -> &'static str {
    match c {
        Cmd::Gen { .. } => "gen",
        Cmd::Train => "train",
        Cmd::Eval { .. } => "eval",
        Cmd::Forward { .. } => "forward",
        Cmd::Gradcheck { .. } => "gradcheck",
        Cmd::Ablate { .. } => "ablate",
        Cmd::Heatmap { .. } => "heatmap",
    }
}

fn load_config(c: &Common) -> anyhow::Result<ExperimentConfig> {
    let base = match &c.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::preset(&c.preset)?,
    };
    let cfg = base.with_overrides(&c.overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn model_with(
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
) -> anyhow::Result<bevfuse_harness::model::FusionDetector> {
    let mut model = build_model(cfg)?;
    if let Some(p) = checkpoint {
        load_checkpoint(&mut model, p)
            .with_context(|| format!("loading checkpoint {}", p.display()))?;
    }
    Ok(model)
}

fn scene_for(cfg: &ExperimentConfig, file: Option<&Path>, seed: u64) -> anyhow::Result<Scene> {
    Ok(match file {
        Some(p) => Scene::load(p).with_context(|| format!("loading scene {}", p.display()))?,
        None => generate_from_config(&SceneSpec::from_config(cfg)?, seed)?,
    })
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let cfg = load_config(&cli.common)?;
    let out = &cli.common.out;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    Manifest::new(command_name(&cli.cmd), &cfg, &cli.common.overrides).write(out, &cfg)?;

    match cli.cmd {
        Cmd::Gen { count, first_seed } => {
            let dir = out.join("scenes");
            std::fs::create_dir_all(&dir)?;
            for (i, s) in make_scenes(&cfg, first_seed, count)?.iter().enumerate() {
                s.save(&dir.join(format!("scene_{:06}.fbwt", first_seed + i as u64)))?;
            }
            println!("wrote {count} scenes to {}", dir.display());
        }
        Cmd::Train => {
            let every = cfg.train.log_every.max(1);
            let run = run_experiment(&cfg, |l| {
                if l.step % every == 0 {
                    println!("step {:>5}  loss {:.4}  cls {:.4}  reg {:.4}  vel {:.4}  dn {:.4}  lr {:.2e}", l.step, l.loss.total, l.loss.cls, l.loss.reg, l.loss.vel, l.loss.dn, l.lr);
                }
            })?;
            save_checkpoint(&run.model, &out.join("checkpoint.fbwt"))?;
            run.train.write_curve(&out.join("loss_curve.txt"))?;
            std::fs::write(out.join("eval.txt"), run.eval.to_table(&CLASS_NAMES))?;
            std::fs::write(out.join("eval.kv"), run.eval.to_key_values())?;
            println!(
                "trained {} steps in {:.0}s",
                cfg.train.steps, run.train.seconds
            );
            print!("{}", run.eval.to_table(&CLASS_NAMES));
        }
        Cmd::Eval { checkpoint } => {
            let model = model_with(&cfg, Some(&checkpoint))?;
            let (first, n) = eval_seeds(&cfg);
            let data = make_samples(&cfg, &make_scenes(&cfg, first, n)?)?;
            let report = evaluate_model(&model, &data, &cfg)?;
            std::fs::write(out.join("eval.txt"), report.to_table(&CLASS_NAMES))?;
            std::fs::write(out.join("eval.kv"), report.to_key_values())?;
            print!("{}", report.to_table(&CLASS_NAMES));
        }
        Cmd::Forward {
            checkpoint,
            scene,
            seed,
        } => {
            let model = model_with(&cfg, checkpoint.as_deref())?;
            let s = scene_for(&cfg, scene.as_deref(), seed)?;
            let sample = prepare(&s, &lidar_frame(&cfg, &s.ego_from_lidar)?);
            let dets = model.predict(&sample, cfg.head.max_detections)?;
            write_detections(&out.join("detections.txt"), &dets)?;
            write_detections(&out.join("ground_truth.txt"), s.gt())?;
            println!(
                "{} detections, {} ground-truth boxes",
                dets.len(),
                s.gt().len()
            );
        }
        Cmd::Gradcheck {
            seed,
            coords,
            tol,
            jitter,
        } => {
            let mut model = build_model(&cfg)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            model.visit_params_mut("", &mut |_, t| {
                t.data
                    .iter_mut()
                    .for_each(|v| *v += rng.gen_range(-jitter..=jitter))
            });
            let s = scene_for(&cfg, None, seed)?;
            let sample = prepare(&s, &lidar_frame(&cfg, &s.ego_from_lidar)?);
            let opts = GradCheckOptions {
                max_coords_per_tensor: Some(coords),
                seed,
                ..Default::default()
            };
            let r = model.gradient_check(&sample, &LossConfig::default(), &opts)?;
            let text = format!(
                "checked {} of {} parameters at h={}\nmax abs err {:.3e}\nmax rel err {:.3e} at {}\n",
                r.checked, r.total, r.step, r.max_abs_err, r.max_rel_err, r.worst_param
            );
            std::fs::write(out.join("gradcheck.txt"), &text)?;
            print!("{text}");
            if r.max_rel_err > tol {
                bail!("relative error {:.3e} exceeds {tol:e}", r.max_rel_err);
            }
        }
        Cmd::Ablate { name } => {
            let every = cfg.train.log_every.max(1);
            let table = run_ablation(&name, &cfg, |arm, l| {
                if l.step % every == 0 {
                    println!("[{arm}] step {:>5}  loss {:.4}", l.step, l.loss.total);
                }
            })?;
            let text = table.to_table();
            std::fs::write(out.join(format!("ablation_{name}.txt")), &text)?;
            print!("{text}");
        }
        Cmd::Heatmap {
            checkpoint,
            seed,
            reduce,
        } => {
            let reduce: Reduce = reduce.parse()?;
            let model = model_with(&cfg, checkpoint.as_deref())?;
            let s = scene_for(&cfg, None, seed)?;
            let bev = model.bev(&prepare(&s, &lidar_frame(&cfg, &s.ego_from_lidar)?))?;
            let path = out.join("bev.pgm");
            dump_bev_heatmap(&bev, reduce, &path)?;
            println!(
                "wrote {}x{} heatmap to {}",
                bev.width,
                bev.height,
                path.display()
            );
        }
    }
    Ok(())
}
