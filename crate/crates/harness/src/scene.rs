//! Synthetic driving scenes: constant-velocity box tracks around a moving
//! ego vehicle, a simulated LiDAR sweep and class-coloured camera images.

use std::f64::consts::PI;
use std::path::Path;

use bevfuse_core::branches::PointCloud;
use bevfuse_core::geometry::transform::apply;
use bevfuse_core::geometry::{planar, Camera, CameraRig, EgoPose, Rigid};
use bevfuse_core::head::Box3D;
use bevfuse_core::numerics::checkpoint::{read_tensors, write_tensors};
use bevfuse_core::numerics::{FeatureMap2D, Tensor};
use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

pub const CLASS_NAMES: [&str; 3] = ["car", "pedestrian", "cyclist"];
/// Image channels: one per class plus ground.
pub const IMAGE_CHANNELS: usize = 4;
pub const GROUND_INTENSITY: f64 = 0.1;
const MAX_OBJECT_POINTS: usize = 400;
/// Keep objects clear of the sensors.
const EGO_CLEARANCE: f64 = 3.0;

/// Mean `(w, l, h)` and speed scale of each synthetic class.
fn class_profile(class: usize) -> ([f64; 3], f64) {
    match class % 3 {
        0 => ([1.9, 4.4, 1.6], 1.0),
        1 => ([0.7, 0.7, 1.75], 0.4),
        _ => ([0.7, 1.8, 1.5], 0.7),
    }
}

/// LiDAR return intensity of a class.
pub fn class_intensity(class: usize) -> f64 {
    0.4 + 0.2 * (class % 3) as f64
}

/// Everything the generator needs, extracted from an experiment config.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub cfg: crate::config::SceneConfig,
    pub roi: [f64; 4],
    pub rig: CameraRig,
    pub ego_from_lidar: Rigid,
}

impl SceneSpec {
    pub fn from_config(c: &ExperimentConfig) -> Result<Self> {
        let e = c.grid.half_extent;
        Ok(Self {
            cfg: c.scene.clone(),
            roi: [-e, e, -e, e],
            rig: make_rig(c)?,
            ego_from_lidar: planar(0.0, 0.0, c.lidar.mount_height, 0.0),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.cfg.class_weights.len()
    }
}

/// Cameras spread evenly in yaw starting straight ahead.
pub fn make_rig(c: &ExperimentConfig) -> Result<CameraRig> {
    let cam = &c.camera;
    let f = cam.width as f64 / 2.0 / (cam.hfov_deg.to_radians() / 2.0).tan();
    Ok(CameraRig::surround(
        cam.count,
        f,
        cam.width,
        cam.height,
        cam.mount_height,
    )?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub pose: EgoPose,
    /// Ground truth in this frame's ego coordinates; velocity is absolute,
    /// expressed along the ego axes.
    pub boxes: Vec<Box3D>,
    /// Objects that received at most two LiDAR points by construction.
    pub sparse: Vec<bool>,
    /// Returns in the LiDAR frame: `(x, y, z, intensity)`.
    pub points: PointCloud,
    /// One `[IMAGE_CHANNELS, H, W]` image per camera.
    pub images: Vec<FeatureMap2D>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub seed: u64,
    pub dt: f64,
    pub rig: CameraRig,
    pub ego_from_lidar: Rigid,
    /// Oldest first; the last frame is the key frame.
    pub frames: Vec<Frame>,
}

impl Scene {
    pub fn key(&self) -> &Frame {
        self.frames.last().expect("scene has frames")
    }

    pub fn gt(&self) -> &[Box3D] {
        &self.key().boxes
    }

    pub fn classes(&self) -> Vec<usize> {
        self.gt().iter().map(|b| b.class).collect()
    }
}

#[derive(Debug, Clone)]
struct Track {
    /// Key-frame world position (world = key-frame ego frame).
    pos: [f64; 2],
    yaw: f64,
    speed: f64,
    size: [f64; 3],
    class: usize,
}

impl Track {
    fn velocity(&self) -> [f64; 2] {
        [self.speed * self.yaw.cos(), self.speed * self.yaw.sin()]
    }

    fn at(&self, t: f64) -> [f64; 2] {
        let v = self.velocity();
        [self.pos[0] + v[0] * t, self.pos[1] + v[1] * t]
    }

    fn radius(&self) -> f64 {
        0.5 * self.size[0].hypot(self.size[1])
    }
}

/// Ego pose at time `t` (seconds relative to the key frame, which sits at the
/// world origin). Unicycle with constant speed and yaw rate.
fn ego_at(speed: f64, yaw_rate: f64, t: f64) -> Rigid {
    let yaw = yaw_rate * t;
    let (x, y) = if yaw_rate.abs() < 1e-12 {
        (speed * t, 0.0)
    } else {
        (
            speed / yaw_rate * yaw.sin(),
            speed / yaw_rate * (1.0 - yaw.cos()),
        )
    };
    planar(x, y, 0.0, yaw)
}

fn ego_yaw(pose: &Rigid) -> f64 {
    let r = pose.rotation.to_rotation_matrix();
    r[(1, 0)].atan2(r[(0, 0)])
}

/// Generates one scene. `spec.cfg.frames` frames spaced `dt` apart end at the
/// key frame. Fully determined by `seed`.
pub fn generate_scene(
    spec: &SceneSpec,
    seed: u64,
    n_objects: usize,
    motion: bool,
) -> Result<Scene> {
    let cfg = &spec.cfg;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nf = cfg.frames;
    let times: Vec<f64> = (0..nf)
        .map(|k| (k as f64 - (nf - 1) as f64) * cfg.dt)
        .collect();
    let (ego_v, ego_w) = if motion {
        (cfg.ego_speed, cfg.ego_yaw_rate)
    } else {
        (0.0, 0.0)
    };
    let poses: Vec<Rigid> = times.iter().map(|&t| ego_at(ego_v, ego_w, t)).collect();
    let class_dist =
        WeightedIndex::new(&cfg.class_weights).map_err(|e| HarnessError::Config(e.to_string()))?;

    let [x0, x1, y0, y1] = spec.roi;
    let m = cfg.margin;
    let mut tracks: Vec<Track> = Vec::with_capacity(n_objects);
    for _ in 0..n_objects {
        for _attempt in 0..200 {
            let class = class_dist.sample(&mut rng);
            let (mean, speed_scale) = class_profile(class);
            let size = mean.map(|s| s * rng.gen_range(0.9..1.1));
            let speed = if motion {
                speed_scale * cfg.max_speed * rng.gen_range(-1.0..1.0)
            } else {
                0.0
            };
            let t = Track {
                pos: [rng.gen_range(x0 + m..x1 - m), rng.gen_range(y0 + m..y1 - m)],
                yaw: rng.gen_range(-PI..PI),
                speed,
                size,
                class,
            };
            let fits = times.iter().zip(&poses).all(|(&tt, pose)| {
                let w = t.at(tt);
                let p = pose.inverse_transform_point(&nalgebra::Point3::new(w[0], w[1], 0.0));
                p.x > x0 + m
                    && p.x < x1 - m
                    && p.y > y0 + m
                    && p.y < y1 - m
                    && p.x.hypot(p.y) > EGO_CLEARANCE + t.radius()
            });
            let clear = tracks.iter().all(|o| {
                times.iter().all(|&tt| {
                    let (a, b) = (t.at(tt), o.at(tt));
                    (a[0] - b[0]).hypot(a[1] - b[1]) > t.radius() + o.radius() + 0.3
                })
            });
            if fits && clear {
                tracks.push(t);
                break;
            }
        }
    }

    // sparse objects are chosen among those a camera sees at the key frame
    let key_boxes = boxes_at(&tracks, &poses[nf - 1], 0.0)?;
    let visible: Vec<bool> = key_boxes
        .iter()
        .map(|b| camera_visible(&spec.rig, b))
        .collect();
    let n_vis = visible.iter().filter(|v| **v).count();
    let p_sparse = if n_vis == 0 {
        0.0
    } else {
        (cfg.sparse_fraction * tracks.len() as f64 / n_vis as f64).min(1.0)
    };
    let sparse: Vec<bool> = visible
        .iter()
        .map(|&v| v && rng.gen_bool(p_sparse))
        .collect();

    let mut frames = Vec::with_capacity(nf);
    for (k, (&t, pose)) in times.iter().zip(&poses).enumerate() {
        let boxes = boxes_at(&tracks, pose, t)?;
        let mut frame_rng =
            ChaCha8Rng::seed_from_u64(seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(k as u64 + 1)));
        let points = simulate_lidar(
            &boxes,
            &sparse,
            &spec.ego_from_lidar,
            cfg.lidar_density,
            cfg.ground_points,
            spec.roi,
            &mut frame_rng,
        );
        let images = (0..spec.rig.len())
            .map(|j| render_camera(&spec.rig.cameras[j], &boxes))
            .collect();
        let ts = ((t - times[0]) * 1e6).round() as i64;
        frames.push(Frame {
            pose: EgoPose::new(ts, *pose),
            boxes,
            sparse: sparse.clone(),
            points,
            images,
        });
    }
    Ok(Scene {
        seed,
        dt: cfg.dt,
        rig: spec.rig.clone(),
        ego_from_lidar: spec.ego_from_lidar,
        frames,
    })
}

/// Object count drawn from the configured range, then [`generate_scene`].
pub fn generate_from_config(spec: &SceneSpec, seed: u64) -> Result<Scene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5EED));
    let n = rng.gen_range(spec.cfg.min_objects..=spec.cfg.max_objects);
    generate_scene(spec, seed, n, spec.cfg.motion)
}

/// `count` scenes with seeds `first..first + count`.
pub fn generate_dataset(spec: &SceneSpec, first: u64, count: usize) -> Result<Vec<Scene>> {
    (0..count as u64)
        .map(|i| generate_from_config(spec, first + i))
        .collect()
}

fn boxes_at(tracks: &[Track], world_from_ego: &Rigid, t: f64) -> Result<Vec<Box3D>> {
    let ego_yaw = ego_yaw(world_from_ego);
    let (s, c) = ego_yaw.sin_cos();
    tracks
        .iter()
        .map(|tr| {
            let w = tr.at(t);
            let p = world_from_ego.inverse_transform_point(&nalgebra::Point3::new(w[0], w[1], 0.0));
            let v = tr.velocity();
            let vel = [c * v[0] + s * v[1], -s * v[0] + c * v[1]];
            Ok(Box3D::new(
                [p.x, p.y, tr.size[2] / 2.0],
                tr.size,
                tr.yaw - ego_yaw,
                Some(vel),
                tr.class,
            )?)
        })
        .collect()
}

fn camera_visible(rig: &CameraRig, b: &Box3D) -> bool {
    rig.cameras.iter().any(|cam| {
        let (px, depth) = cam.project(b.center);
        depth > 0.5 && cam.in_image(px[0], px[1])
    })
}

/// Box faces as `(centre, outward normal, half-extent axes a, b)`.
fn faces(b: &Box3D) -> Vec<([f64; 3], [f64; 3], [f64; 3], [f64; 3])> {
    let (s, c) = b.yaw.sin_cos();
    let fwd = [c, s, 0.0];
    let left = [-s, c, 0.0];
    let up = [0.0, 0.0, 1.0];
    let [w, l, h] = b.size;
    let scale = |v: [f64; 3], k: f64| v.map(|x| x * k);
    let add = |a: [f64; 3], d: [f64; 3]| [a[0] + d[0], a[1] + d[1], a[2] + d[2]];
    let ctr = b.center;
    vec![
        (
            add(ctr, scale(fwd, l / 2.0)),
            fwd,
            scale(left, w / 2.0),
            scale(up, h / 2.0),
        ),
        (
            add(ctr, scale(fwd, -l / 2.0)),
            scale(fwd, -1.0),
            scale(left, w / 2.0),
            scale(up, h / 2.0),
        ),
        (
            add(ctr, scale(left, w / 2.0)),
            left,
            scale(fwd, l / 2.0),
            scale(up, h / 2.0),
        ),
        (
            add(ctr, scale(left, -w / 2.0)),
            scale(left, -1.0),
            scale(fwd, l / 2.0),
            scale(up, h / 2.0),
        ),
        (
            add(ctr, scale(up, h / 2.0)),
            up,
            scale(fwd, l / 2.0),
            scale(left, w / 2.0),
        ),
    ]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Number of returns a box receives: surface density `density / d²` over
/// its sensor-facing projected area, at least one.
pub fn expected_returns(b: &Box3D, sensor: [f64; 3], density: f64) -> usize {
    let d2 = (0..3)
        .map(|i| (b.center[i] - sensor[i]).powi(2))
        .sum::<f64>()
        .max(1.0);
    let area: f64 = faces(b)
        .iter()
        .map(|(ctr, n, a, bb)| {
            let to = [ctr[0] - sensor[0], ctr[1] - sensor[1], ctr[2] - sensor[2]];
            let dist = dot(to, to).sqrt();
            let facing = -dot(*n, to) / dist;
            if facing > 0.0 {
                4.0 * dot(*a, *a).sqrt() * dot(*bb, *bb).sqrt() * facing
            } else {
                0.0
            }
        })
        .sum();
    ((density * area / d2).ceil() as usize).clamp(1, MAX_OBJECT_POINTS)
}

/// Surface returns on sensor-facing box faces plus ground returns whose
/// density falls off as `1/d²`. Sparse boxes get one or two returns.
pub fn simulate_lidar(
    boxes: &[Box3D],
    sparse: &[bool],
    ego_from_lidar: &Rigid,
    density: f64,
    ground_points: usize,
    roi: [f64; 4],
    rng: &mut impl Rng,
) -> PointCloud {
    let sensor = apply(ego_from_lidar, [0.0; 3]);
    let to_lidar = |p: [f64; 3], i: f64| {
        let q = ego_from_lidar.inverse_transform_point(&nalgebra::Point3::new(p[0], p[1], p[2]));
        [q.x, q.y, q.z, i]
    };
    let mut points = Vec::new();
    for (b, &sp) in boxes.iter().zip(sparse) {
        let n = if sp {
            rng.gen_range(1..=2)
        } else {
            expected_returns(b, sensor, density)
        };
        let visible: Vec<_> = faces(b)
            .into_iter()
            .filter_map(|(ctr, nrm, a, bb)| {
                let to = [ctr[0] - sensor[0], ctr[1] - sensor[1], ctr[2] - sensor[2]];
                let facing = -dot(nrm, to) / dot(to, to).sqrt();
                (facing > 0.0).then(|| {
                    (
                        ctr,
                        a,
                        bb,
                        4.0 * dot(a, a).sqrt() * dot(bb, bb).sqrt() * facing,
                    )
                })
            })
            .collect();
        let total: f64 = visible.iter().map(|f| f.3).sum();
        for _ in 0..n {
            let mut pick = rng.gen_range(0.0..total);
            let f = visible.iter().find(|f| {
                pick -= f.3;
                pick <= 0.0
            });
            let (ctr, a, bb, _) =
                f.unwrap_or(visible.last().expect("a box always has a facing side"));
            let (u, v) = (rng.gen_range(-0.98..0.98), rng.gen_range(-0.98..0.98));
            let p = [0, 1, 2].map(|i| ctr[i] + u * a[i] + v * bb[i]);
            let intensity = class_intensity(b.class) + rng.gen_range(-0.03..0.03);
            points.push(to_lidar(p, intensity));
        }
    }
    let [x0, x1, y0, y1] = roi;
    let (r_min, r_max) = (2.0f64, x0.abs().max(x1).hypot(y0.abs().max(y1)));
    let mut kept = 0;
    let mut tries = 0;
    while kept < ground_points && tries < 20 * ground_points.max(1) {
        tries += 1;
        // pdf(r) ∝ 1/r gives areal density ∝ 1/r²
        let r = r_min * (r_max / r_min).powf(rng.gen::<f64>());
        let th = rng.gen_range(-PI..PI);
        let p = [r * th.cos(), r * th.sin(), 0.0];
        if p[0] < x0
            || p[0] >= x1
            || p[1] < y0
            || p[1] >= y1
            || boxes.iter().any(|b| b.contains([p[0], p[1], b.center[2]]))
        {
            continue;
        }
        points.push(to_lidar(p, GROUND_INTENSITY + rng.gen_range(-0.03..0.03)));
        kept += 1;
    }
    PointCloud::new(points)
}

/// Ray parameter where `origin + t·dir` enters the box, if it does.
fn ray_box(origin: [f64; 3], dir: [f64; 3], b: &Box3D) -> Option<f64> {
    let (s, c) = b.yaw.sin_cos();
    let rel = [
        origin[0] - b.center[0],
        origin[1] - b.center[1],
        origin[2] - b.center[2],
    ];
    let o = [rel[0] * c + rel[1] * s, -rel[0] * s + rel[1] * c, rel[2]];
    let d = [dir[0] * c + dir[1] * s, -dir[0] * s + dir[1] * c, dir[2]];
    let half = [b.size[1] / 2.0, b.size[0] / 2.0, b.size[2] / 2.0];
    let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
    for i in 0..3 {
        if d[i].abs() < 1e-12 {
            if o[i].abs() > half[i] {
                return None;
            }
        } else {
            let a = (-half[i] - o[i]) / d[i];
            let bb = (half[i] - o[i]) / d[i];
            t0 = t0.max(a.min(bb));
            t1 = t1.min(a.max(bb));
        }
    }
    (t0 <= t1).then_some(t0)
}

/// Ray-cast image: the nearest box lights its class channel; the ground
/// channel fades with range; sky stays black.
pub fn render_camera(cam: &Camera, boxes: &[Box3D]) -> FeatureMap2D {
    let (w, h) = (cam.image_width, cam.image_height);
    let mut img = FeatureMap2D::zeros(IMAGE_CHANNELS, h, w);
    let origin = apply(&cam.ego_from_cam, [0.0; 3]);
    for v in 0..h {
        for u in 0..w {
            let p = cam.back_project(u as f64 + 0.5, v as f64 + 0.5, 1.0);
            let dir = [p[0] - origin[0], p[1] - origin[1], p[2] - origin[2]];
            let ground = if dir[2] < 0.0 {
                -origin[2] / dir[2]
            } else {
                f64::INFINITY
            };
            let hit = boxes
                .iter()
                .filter_map(|b| ray_box(origin, dir, b).map(|t| (t, b.class)))
                .min_by(|a, b| a.0.total_cmp(&b.0));
            match hit {
                Some((t, class)) if t < ground => {
                    *img.at_mut(class.min(IMAGE_CHANNELS - 2), v, u) = 1.0
                }
                _ if ground.is_finite() => {
                    let range = ground * dir[0].hypot(dir[1]);
                    *img.at_mut(IMAGE_CHANNELS - 1, v, u) = (-range / 20.0).exp();
                }
                _ => {}
            }
        }
    }
    img
}

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(shape, data).expect("record layout")
}

/// Quaternion `(i, j, k, w)` then translation; exact, unlike a matrix.
fn rigid_row(r: &Rigid) -> [f64; 7] {
    let q = r.rotation.quaternion().coords;
    let t = r.translation.vector;
    [q[0], q[1], q[2], q[3], t[0], t[1], t[2]]
}

fn rigid_from_row(r: &[f64]) -> Rigid {
    let q = nalgebra::Quaternion::new(r[3], r[0], r[1], r[2]);
    Rigid::from_parts(
        nalgebra::Translation3::new(r[4], r[5], r[6]),
        nalgebra::UnitQuaternion::new_unchecked(q),
    )
}

fn camera_row(c: &Camera) -> Vec<f64> {
    let mut r = c.k.to_vec();
    r.extend(rigid_row(&c.ego_from_cam));
    r.extend([c.image_width as f64, c.image_height as f64]);
    r
}

/// Scene records in the named-tensor container.
pub fn scene_records(s: &Scene) -> Vec<(String, Tensor)> {
    let mut out = vec![
        (
            "meta".to_string(),
            tensor(
                &[4],
                vec![
                    s.seed as f64,
                    s.frames.len() as f64,
                    s.rig.len() as f64,
                    s.dt,
                ],
            ),
        ),
        (
            "lidar_mount".to_string(),
            tensor(&[7], rigid_row(&s.ego_from_lidar).to_vec()),
        ),
    ];
    for (j, c) in s.rig.cameras.iter().enumerate() {
        out.push((format!("camera.{j}"), tensor(&[18], camera_row(c))));
    }
    for (f, fr) in s.frames.iter().enumerate() {
        let mut pose = vec![fr.pose.timestamp as f64];
        pose.extend(rigid_row(&fr.pose.world_from_ego));
        out.push((format!("frame.{f}.pose"), tensor(&[8], pose)));
        let mut rows = Vec::new();
        for (b, &sp) in fr.boxes.iter().zip(&fr.sparse) {
            let v = b.velocity.unwrap_or([0.0; 2]);
            rows.extend(b.center);
            rows.extend(b.size);
            rows.extend([
                b.yaw,
                v[0],
                v[1],
                b.velocity.is_some() as u8 as f64,
                b.class as f64,
                sp as u8 as f64,
            ]);
        }
        out.push((
            format!("frame.{f}.boxes"),
            tensor(&[fr.boxes.len(), 12], rows),
        ));
        out.push((
            format!("frame.{f}.points"),
            tensor(
                &[fr.points.len(), 4],
                fr.points.points.iter().flatten().copied().collect(),
            ),
        ));
        for (j, im) in fr.images.iter().enumerate() {
            out.push((
                format!("frame.{f}.image.{j}"),
                tensor(&[im.channels, im.height, im.width], im.data.clone()),
            ));
        }
    }
    out
}

pub fn scene_from_records(records: Vec<(String, Tensor)>) -> Result<Scene> {
    let map: std::collections::HashMap<String, Tensor> = records.into_iter().collect();
    let get = |k: &str| {
        map.get(k)
            .ok_or_else(|| HarnessError::Data(format!("scene record '{k}' missing")))
    };
    let meta = &get("meta")?.data;
    let (seed, nf, nc, dt) = (meta[0] as u64, meta[1] as usize, meta[2] as usize, meta[3]);
    let ego_from_lidar = rigid_from_row(&get("lidar_mount")?.data);
    let mut cams = Vec::with_capacity(nc);
    for j in 0..nc {
        let r = &get(&format!("camera.{j}"))?.data;
        let k: [f64; 9] = r[..9].try_into().expect("9 entries");
        cams.push(Camera::new(
            format!("cam{j}"),
            k,
            rigid_from_row(&r[9..16]),
            r[16] as usize,
            r[17] as usize,
        )?);
    }
    let mut frames = Vec::with_capacity(nf);
    for f in 0..nf {
        let p = &get(&format!("frame.{f}.pose"))?.data;
        let pose = EgoPose {
            timestamp: p[0] as i64,
            world_from_ego: rigid_from_row(&p[1..]),
        };
        let mut boxes = Vec::new();
        let mut sparse = Vec::new();
        for r in get(&format!("frame.{f}.boxes"))?.data.chunks(12) {
            let vel = (r[9] != 0.0).then_some([r[7], r[8]]);
            boxes.push(Box3D::new(
                [r[0], r[1], r[2]],
                [r[3], r[4], r[5]],
                r[6],
                vel,
                r[10] as usize,
            )?);
            sparse.push(r[11] != 0.0);
        }
        let points = PointCloud::new(
            get(&format!("frame.{f}.points"))?
                .data
                .chunks(4)
                .map(|c| [c[0], c[1], c[2], c[3]])
                .collect(),
        );
        let mut images = Vec::with_capacity(nc);
        for j in 0..nc {
            let t = get(&format!("frame.{f}.image.{j}"))?;
            let s = t.shape();
            images.push(FeatureMap2D::new(s[0], s[1], s[2], t.data.clone())?);
        }
        frames.push(Frame {
            pose,
            boxes,
            sparse,
            points,
            images,
        });
    }
    Ok(Scene {
        seed,
        dt,
        rig: CameraRig::new(cams),
        ego_from_lidar,
        frames,
    })
}

impl Scene {
    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        write_tensors(f, &scene_records(self))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        scene_from_records(read_tensors(f)?)
    }
}
