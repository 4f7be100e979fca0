use nalgebra::{Matrix3, Point3, Rotation3, Translation3, UnitQuaternion, Vector3};

use super::transform::Rigid;
use crate::error::{Error, Result};

/// Points closer than this along the optical axis never hit a camera.
pub const DEPTH_MIN: f64 = 0.1;

/// Pinhole camera with pixel-area image coordinates: pixel `(u, v)` covers
/// `[u, u+1) × [v, v+1)`, `u` along image columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub name: String,
    /// Row-major 3×3 intrinsics.
    pub k: [f64; 9],
    pub ego_from_cam: Rigid,
    pub image_width: usize,
    pub image_height: usize,
}

impl Camera {
    pub fn new(
        name: impl Into<String>,
        k: [f64; 9],
        ego_from_cam: Rigid,
        image_width: usize,
        image_height: usize,
    ) -> Result<Self> {
        if !(k[0] > 0.0 && k[4] > 0.0) || k.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "camera intrinsics need positive focal lengths, got fx={} fy={}",
                k[0], k[4]
            )));
        }
        if k[6] != 0.0 || k[7] != 0.0 || k[8] != 1.0 {
            return Err(Error::Input("intrinsics last row must be [0, 0, 1]".into()));
        }
        if image_width == 0 || image_height == 0 {
            return Err(Error::Input("camera image must be non-empty".into()));
        }
        Ok(Self {
            name: name.into(),
            k,
            ego_from_cam,
            image_width,
            image_height,
        })
    }

    /// Camera at `position` (ego frame) looking horizontally along `yaw`
    /// (0 = ego +x), with image x to the right and image y down.
    pub fn looking(
        name: impl Into<String>,
        position: [f64; 3],
        yaw: f64,
        f: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        // optical frame axes expressed in ego coordinates, before yaw
        let base = Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
        let yaw_r = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw);
        let r = yaw_r.matrix() * base;
        let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
        let pose = Rigid::from_parts(
            Translation3::new(position[0], position[1], position[2]),
            rot,
        );
        let k = [
            f,
            0.0,
            width as f64 / 2.0,
            0.0,
            f,
            height as f64 / 2.0,
            0.0,
            0.0,
            1.0,
        ];
        Self::new(name, k, pose, width, height)
    }

    /// Point in the camera's optical frame.
    pub fn to_camera(&self, pt_ego: [f64; 3]) -> [f64; 3] {
        let p = self
            .ego_from_cam
            .inverse_transform_point(&Point3::new(pt_ego[0], pt_ego[1], pt_ego[2]));
        [p.x, p.y, p.z]
    }

    /// Pixel `(u, v)` and depth of an ego point; depth ≤ 0 gives non-finite pixels.
    pub fn project(&self, pt_ego: [f64; 3]) -> ([f64; 2], f64) {
        let [x, y, z] = self.to_camera(pt_ego);
        let k = &self.k;
        let u = (k[0] * x + k[1] * y + k[2] * z) / z;
        let v = (k[4] * y + k[5] * z) / z;
        ([u, v], z)
    }

    pub fn in_image(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.image_width as f64 && v < self.image_height as f64
    }

    /// Ego point seen at pixel `(u, v)` with optical-axis depth `depth`.
    pub fn back_project(&self, u: f64, v: f64, depth: f64) -> [f64; 3] {
        let k = &self.k;
        let y = (v - k[5]) / k[4];
        let x = (u - k[2] - k[1] * y) / k[0];
        let p = self
            .ego_from_cam
            .transform_point(&Point3::new(x * depth, y * depth, depth));
        [p.x, p.y, p.z]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraRig {
    pub cameras: Vec<Camera>,
}

impl CameraRig {
    pub fn new(cameras: Vec<Camera>) -> Self {
        Self { cameras }
    }

    /// `n` cameras at the ego origin (raised by `height`) spread evenly in yaw.
    pub fn surround(
        n: usize,
        f: f64,
        width: usize,
        height: usize,
        mount_height: f64,
    ) -> Result<Self> {
        let cams = (0..n)
            .map(|j| {
                let yaw = 2.0 * std::f64::consts::PI * j as f64 / n as f64;
                Camera::looking(
                    format!("cam{j}"),
                    [0.0, 0.0, mount_height],
                    yaw,
                    f,
                    width,
                    height,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(cams))
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn camera(&self, j: usize) -> Result<&Camera> {
        self.cameras
            .get(j)
            .ok_or_else(|| Error::OutOfRange(format!("camera {j} of {}", self.cameras.len())))
    }
}

/// LiDAR mounting plus the voxel grid laid out in the LiDAR frame.
///
/// Voxel axes: depth along lidar z, rows along x, columns along y.
#[derive(Debug, Clone, PartialEq)]
pub struct LidarFrame {
    pub ego_from_lidar: Rigid,
    /// Minimum corner `(x, y, z)` of the voxel grid, meters.
    pub origin: [f64; 3],
    pub voxel_size: f64,
    /// `(Z, H_v, W_v)`
    pub dims: [usize; 3],
}

impl LidarFrame {
    pub fn new(
        ego_from_lidar: Rigid,
        origin: [f64; 3],
        voxel_size: f64,
        dims: [usize; 3],
    ) -> Result<Self> {
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(Error::Input(format!(
                "voxel size must be positive, got {voxel_size}"
            )));
        }
        if dims.contains(&0) {
            return Err(Error::Input(format!(
                "voxel dims must be positive, got {dims:?}"
            )));
        }
        Ok(Self {
            ego_from_lidar,
            origin,
            voxel_size,
            dims,
        })
    }

    /// Grid centred on the LiDAR origin in x/y with `z_range` vertically.
    pub fn centered(
        ego_from_lidar: Rigid,
        voxel_size: f64,
        hw: usize,
        z_range: (f64, f64),
    ) -> Result<Self> {
        let half = voxel_size * hw as f64 / 2.0;
        let z = ((z_range.1 - z_range.0) / voxel_size).round().max(1.0) as usize;
        Self::new(
            ego_from_lidar,
            [-half, -half, z_range.0],
            voxel_size,
            [z, hw, hw],
        )
    }

    pub fn to_lidar(&self, pt_ego: [f64; 3]) -> [f64; 3] {
        let p = self
            .ego_from_lidar
            .inverse_transform_point(&Point3::new(pt_ego[0], pt_ego[1], pt_ego[2]));
        [p.x, p.y, p.z]
    }
}

/// Depth-bin edges in meters, strictly increasing; `n` bins need `n + 1` edges.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthBinSpec {
    pub edges: Vec<f64>,
}

impl Default for DepthBinSpec {
    fn default() -> Self {
        Self::uniform(40, 1.0, 41.0).expect("valid default bins")
    }
}

impl DepthBinSpec {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2
            || edges.windows(2).any(|p| p[1] <= p[0])
            || edges.iter().any(|e| !e.is_finite())
        {
            return Err(Error::Input(format!(
                "depth bin edges must be strictly increasing, got {edges:?}"
            )));
        }
        Ok(Self { edges })
    }

    pub fn uniform(bins: usize, lo: f64, hi: f64) -> Result<Self> {
        if bins == 0 {
            return Err(Error::Input("need at least one depth bin".into()));
        }
        Self::new(
            (0..=bins)
                .map(|i| lo + (hi - lo) * i as f64 / bins as f64)
                .collect(),
        )
    }

    pub fn bins(&self) -> usize {
        self.edges.len() - 1
    }

    /// Continuous bin coordinate: edge `k` maps to `k`, linear in between.
    /// `None` outside `[first edge, last edge)`.
    pub fn bin_coord(&self, depth: f64) -> Option<f64> {
        let e = &self.edges;
        if !(depth >= e[0] && depth < e[e.len() - 1]) {
            return None;
        }
        let k = e.partition_point(|&edge| edge <= depth) - 1;
        Some(k as f64 + (depth - e[k]) / (e[k + 1] - e[k]))
    }

    /// Representative depth of each bin (its midpoint).
    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|p| 0.5 * (p[0] + p[1])).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bin_coordinates() {
        let b = DepthBinSpec::default();
        assert_eq!(b.bins(), 40);
        assert_eq!(b.bin_coord(5.5), Some(4.5));
        assert_eq!(b.bin_coord(1.0), Some(0.0));
        assert_eq!(b.bin_coord(7.0), Some(6.0));
        assert_eq!(b.bin_coord(41.0), None);
        assert_eq!(b.bin_coord(0.5), None);
        let nu = DepthBinSpec::new(vec![1.0, 2.0, 4.0, 8.0]).unwrap();
        assert_eq!(nu.bin_coord(4.0), Some(2.0));
        assert_eq!(nu.bin_coord(3.0), Some(1.5));
        assert!(DepthBinSpec::new(vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn camera_validation() {
        let id = Rigid::identity();
        assert!(Camera::new("c", [0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0], id, 4, 4).is_err());
        assert!(Camera::new("c", [1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0], id, 0, 4).is_err());
        assert!(LidarFrame::new(id, [0.0; 3], 0.0, [1, 1, 1]).is_err());
    }

    #[test]
    fn looking_along_x() {
        let cam = Camera::looking("front", [0.0; 3], 0.0, 100.0, 640, 480).unwrap();
        let (px, depth) = cam.project([5.0, 0.0, 0.0]);
        assert_eq!(depth, 5.0);
        assert!((px[0] - 320.0).abs() < 1e-12 && (px[1] - 240.0).abs() < 1e-12);
        // left of the camera → smaller u; above → smaller v
        assert!(cam.project([5.0, 1.0, 0.0]).0[0] < 320.0);
        assert!(cam.project([5.0, 0.0, 1.0]).0[1] < 240.0);
    }
}
