//! Experiment configuration: one TOML document plus `key=value` overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub scene: SceneConfig,
    pub grid: GridConfig,
    pub lidar: LidarConfig,
    pub camera: CameraConfig,
    pub model: ModelConfig,
    pub temporal: TemporalConfig,
    pub head: HeadSettings,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    /// Inclusive range of objects per scene.
    pub min_objects: usize,
    pub max_objects: usize,
    /// Frames per scene; the last one is the key frame.
    pub frames: usize,
    /// Seconds between frames.
    pub dt: f64,
    pub motion: bool,
    /// Object speed range, m/s, along or against the heading.
    pub max_speed: f64,
    /// Ego forward speed, m/s.
    pub ego_speed: f64,
    pub ego_yaw_rate: f64,
    /// Relative class frequencies.
    pub class_weights: Vec<f64>,
    /// Fraction of camera-visible objects that get only 1-2 LiDAR points.
    pub sparse_fraction: f64,
    /// Surface points per m² at 1 m range; falls off as 1/d².
    pub lidar_density: f64,
    /// Ground returns per frame.
    pub ground_points: usize,
    /// Objects keep this far inside the ROI, metres.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Cells per side.
    pub size: usize,
    /// Half-width of the square ROI, metres.
    pub half_extent: f64,
    /// Height anchors per pillar, spread over `[z_min, z_max]` (ego frame).
    pub n_ref: usize,
    pub z_min: f64,
    pub z_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LidarConfig {
    pub voxel_size: f64,
    pub mount_height: f64,
    /// Vertical voxel range in the LiDAR frame.
    pub z_range: [f64; 2],
    pub channels: usize,
    /// `voxel` or `bev`.
    pub form: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub count: usize,
    pub width: usize,
    pub height: usize,
    pub hfov_deg: f64,
    pub mount_height: f64,
    pub channels: usize,
    pub levels: usize,
    pub depth_bins: usize,
    pub depth_range: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub points: usize,
    /// Comma-separated modality order, e.g. `points,image`.
    pub order: String,
    /// Comma-separated masked modalities.
    pub mask: String,
    /// `mmfe`, `add` or `concat`.
    pub fusion: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemporalConfig {
    /// Frames fused including the current one; 1 disables temporal fusion.
    pub frames: usize,
    pub layers: usize,
    /// `attention` or `concat`.
    pub fuser: String,
    pub mean: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSettings {
    pub layers: usize,
    pub queries: usize,
    pub dn_groups: usize,
    pub num_classes: usize,
    /// Detections kept per frame at inference.
    pub max_detections: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub warmup: usize,
    /// Final learning rate as a fraction of `lr` (cosine decay).
    pub min_lr_ratio: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub cbgs: bool,
    pub log_every: usize,
    /// Scenes generated for training.
    pub scenes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub scenes: usize,
    /// Seed offset separating held-out scenes from training scenes.
    pub seed_offset: u64,
    pub thresholds: Vec<f64>,
}

impl ExperimentConfig {
    /// Desk-scale defaults used by tests and the acceptance suite.
    pub fn toy() -> Self {
        Self {
            seed: 0,
            scene: SceneConfig {
                min_objects: 3,
                max_objects: 6,
                frames: 4,
                dt: 0.5,
                motion: true,
                max_speed: 3.0,
                ego_speed: 1.0,
                ego_yaw_rate: 0.05,
                class_weights: vec![1.0, 1.0, 1.0],
                sparse_fraction: 0.0,
                lidar_density: 1500.0,
                ground_points: 400,
                margin: 2.0,
            },
            grid: GridConfig {
                size: 32,
                half_extent: 16.0,
                n_ref: 4,
                z_min: 0.2,
                z_max: 1.8,
            },
            lidar: LidarConfig {
                voxel_size: 1.0,
                mount_height: 1.8,
                z_range: [-2.0, 2.0],
                channels: 8,
                form: "voxel".into(),
            },
            camera: CameraConfig {
                count: 2,
                width: 64,
                height: 32,
                hfov_deg: 100.0,
                mount_height: 1.5,
                channels: 16,
                levels: 1,
                depth_bins: 0,
                depth_range: [1.0, 24.0],
            },
            model: ModelConfig {
                embed_dim: 16,
                layers: 2,
                heads: 4,
                points: 4,
                order: "points,image".into(),
                mask: String::new(),
                fusion: "mmfe".into(),
            },
            temporal: TemporalConfig {
                frames: 1,
                layers: 1,
                fuser: "attention".into(),
                mean: false,
            },
            head: HeadSettings {
                layers: 3,
                queries: 64,
                dn_groups: 2,
                num_classes: 3,
                max_detections: 50,
            },
            train: TrainConfig {
                steps: 2000,
                lr: 2e-3,
                warmup: 100,
                min_lr_ratio: 0.05,
                weight_decay: 0.0,
                clip_norm: 5.0,
                cbgs: false,
                log_every: 50,
                scenes: 200,
            },
            eval: EvalConfig {
                scenes: 50,
                seed_offset: 1_000_000,
                thresholds: vec![0.5, 1.0, 2.0, 4.0],
            },
        }
    }

    /// Full-scale values from the reference setup; far beyond a desk CPU but
    /// useful as a documented starting point.
    pub fn full() -> Self {
        let mut c = Self::toy();
        c.grid = GridConfig {
            size: 150,
            half_extent: 51.2,
            n_ref: 4,
            z_min: -3.0,
            z_max: 3.0,
        };
        c.lidar.voxel_size = 0.075;
        c.lidar.z_range = [-5.0, 3.0];
        c.camera = CameraConfig {
            count: 6,
            width: 1600,
            height: 640,
            hfov_deg: 70.0,
            mount_height: 1.5,
            channels: 256,
            levels: 4,
            depth_bins: 0,
            depth_range: [1.0, 60.0],
        };
        c.model.embed_dim = 256;
        c.model.layers = 6;
        c.model.heads = 8;
        c.temporal = TemporalConfig {
            frames: 8,
            layers: 3,
            fuser: "attention".into(),
            mean: false,
        };
        c.head = HeadSettings {
            layers: 6,
            queries: 900,
            dn_groups: 2,
            num_classes: 10,
            max_detections: 300,
        };
        c.scene.frames = 8;
        c.scene.class_weights = vec![1.0; 10];
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "toy" => Ok(Self::toy()),
            "full" => Ok(Self::full()),
            other => Err(HarnessError::Config(format!(
                "unknown preset '{other}' (expected toy or full)"
            ))),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml())?;
        Ok(())
    }

    /// Applies `section.key=value` overrides. Values are parsed as TOML
    /// literals and fall back to plain strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut doc =
            toml::Value::try_from(self).map_err(|e| HarnessError::Config(e.to_string()))?;
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("override '{o}' is not key=value")))?;
            let value = parse_value(raw.trim());
            let mut node = &mut doc;
            let parts: Vec<&str> = key.trim().split('.').collect();
            for (i, part) in parts.iter().enumerate() {
                let table = node.as_table_mut().ok_or_else(|| {
                    HarnessError::Config(format!("'{key}' does not name a config key"))
                })?;
                if !table.contains_key(*part) {
                    return Err(HarnessError::Config(format!("unknown config key '{key}'")));
                }
                if i + 1 == parts.len() {
                    table.insert((*part).to_string(), value.clone());
                    break;
                }
                node = table.get_mut(*part).expect("checked");
            }
        }
        let c: Self = doc
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(HarnessError::Config(m));
        let s = &self.scene;
        if s.min_objects > s.max_objects {
            return err(format!(
                "min_objects {} exceeds max_objects {}",
                s.min_objects, s.max_objects
            ));
        }
        if s.frames == 0 || s.dt <= 0.0 {
            return err("scene needs at least one frame and a positive dt".into());
        }
        if s.class_weights.len() != self.head.num_classes
            || s.class_weights.iter().any(|w| *w < 0.0)
            || s.class_weights.iter().sum::<f64>() <= 0.0
        {
            return err(format!(
                "class_weights must hold {} non-negative weights",
                self.head.num_classes
            ));
        }
        if !(0.0..=1.0).contains(&s.sparse_fraction) {
            return err(format!(
                "sparse_fraction {} outside [0, 1]",
                s.sparse_fraction
            ));
        }
        if self.temporal.frames == 0 || self.temporal.frames > s.frames {
            return err(format!(
                "temporal frames {} must be in 1..={}",
                self.temporal.frames, s.frames
            ));
        }
        if self.grid.size == 0 || self.grid.half_extent <= 0.0 || self.grid.n_ref == 0 {
            return err("grid size, extent and n_ref must be positive".into());
        }
        if 2.0 * s.margin >= 2.0 * self.grid.half_extent {
            return err("scene margin leaves no room inside the ROI".into());
        }
        if self.lidar.voxel_size <= 0.0 || self.lidar.z_range[1] <= self.lidar.z_range[0] {
            return err("invalid voxel size or z range".into());
        }
        if !matches!(self.model.fusion.as_str(), "mmfe" | "add" | "concat") {
            return err(format!("unknown fusion method '{}'", self.model.fusion));
        }
        if !matches!(self.lidar.form.as_str(), "voxel" | "bev") {
            return err(format!("unknown lidar form '{}'", self.lidar.form));
        }
        if !matches!(self.temporal.fuser.as_str(), "attention" | "concat") {
            return err(format!("unknown temporal fuser '{}'", self.temporal.fuser));
        }
        if self.eval.thresholds.iter().any(|t| *t <= 0.0) {
            return err("distance thresholds must be positive".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    /// Voxel grid side length in cells.
    pub fn voxel_hw(&self) -> usize {
        (2.0 * self.grid.half_extent / self.lidar.voxel_size)
            .round()
            .max(1.0) as usize
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
