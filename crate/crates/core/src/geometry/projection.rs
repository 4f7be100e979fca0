//! Projections from ego-frame points into the cell coordinates of each
//! modality's feature field.
//!
//! Every projection reports continuous coordinates with cell *edges* at
//! integers (cell `i` spans `[i, i+1)`). Samplers use centre-at-integer
//! coordinates, so [`Projected::sample_loc`] shifts by half a cell.

use super::grid::{make_reference_points_3d, BevGrid};
use super::sensors::{CameraRig, DepthBinSpec, LidarFrame, DEPTH_MIN};
use crate::attention::ReferencePoints;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projected<const D: usize> {
    pub coords: [f64; D],
    pub valid: bool,
}

impl<const D: usize> Projected<D> {
    pub fn sample_loc(&self) -> [f64; D] {
        self.coords.map(|c| c - 0.5)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraProjection {
    /// `(u, v)` pixels.
    pub pixel: [f64; 2],
    /// Optical-axis depth in meters.
    pub depth: f64,
    /// `(row, col)` in feature cells.
    pub cell: Projected<2>,
}

impl CameraProjection {
    pub fn hit(&self) -> bool {
        self.cell.valid
    }
}

fn inside<const D: usize>(coords: &[f64; D], dims: &[usize; D]) -> bool {
    coords
        .iter()
        .zip(dims)
        .all(|(&c, &d)| c >= 0.0 && c < d as f64)
}

/// Ego `(x, y)` into the LiDAR BEV map. The map covers the voxel grid's x/y
/// extent at `bev_dims` resolution.
pub fn project_to_lidar_bev(
    pt_ego: (f64, f64),
    lidar: &LidarFrame,
    bev_dims: (usize, usize),
) -> Projected<2> {
    let p = lidar.to_lidar([pt_ego.0, pt_ego.1, 0.0]);
    let sx = lidar.voxel_size * lidar.dims[1] as f64 / bev_dims.0 as f64;
    let sy = lidar.voxel_size * lidar.dims[2] as f64 / bev_dims.1 as f64;
    let coords = [(p[0] - lidar.origin[0]) / sx, (p[1] - lidar.origin[1]) / sy];
    Projected {
        coords,
        valid: inside(&coords, &[bev_dims.0, bev_dims.1]),
    }
}

/// Ego `(x, y, z)` into voxel cells, ordered `(z, row, col)`.
pub fn project_to_voxel(pt_ego: [f64; 3], lidar: &LidarFrame) -> Projected<3> {
    let p = lidar.to_lidar(pt_ego);
    let s = lidar.voxel_size;
    let coords = [
        (p[2] - lidar.origin[2]) / s,
        (p[0] - lidar.origin[0]) / s,
        (p[1] - lidar.origin[1]) / s,
    ];
    Projected {
        coords,
        valid: inside(&coords, &lidar.dims),
    }
}

/// Ego point into camera `j`; `feature_stride` is image pixels per feature cell.
pub fn project_to_camera(
    pt_ego: [f64; 3],
    rig: &CameraRig,
    j: usize,
    feature_stride: f64,
) -> Result<CameraProjection> {
    let cam = rig.camera(j)?;
    let (pixel, depth) = cam.project(pt_ego);
    let hit = depth > DEPTH_MIN && cam.in_image(pixel[0], pixel[1]);
    let coords = [pixel[1] / feature_stride, pixel[0] / feature_stride];
    Ok(CameraProjection {
        pixel,
        depth,
        cell: Projected { coords, valid: hit },
    })
}

/// Ego point into camera `j`'s frustum grid, ordered `(bin, row, col)`.
pub fn project_to_frustum(
    pt_ego: [f64; 3],
    rig: &CameraRig,
    j: usize,
    feature_stride: f64,
    bins: &DepthBinSpec,
) -> Result<Projected<3>> {
    let cp = project_to_camera(pt_ego, rig, j, feature_stride)?;
    let bin = bins.bin_coord(cp.depth);
    let [r, c] = cp.cell.coords;
    Ok(Projected {
        coords: [bin.unwrap_or(f64::NAN), r, c],
        valid: cp.hit() && bin.is_some(),
    })
}

fn collect<const D: usize>(
    dim: usize,
    per: usize,
    items: impl Iterator<Item = Projected<D>>,
) -> ReferencePoints {
    let mut locs = Vec::new();
    let mut valid = Vec::new();
    for p in items {
        if p.valid {
            locs.extend(p.sample_loc());
        } else {
            locs.extend([0.0; D]);
        }
        valid.push(p.valid);
    }
    ReferencePoints::new(dim, per, locs, valid).expect("consistent reference layout")
}

/// One reference per BEV cell into the LiDAR BEV map.
pub fn lidar_bev_refs(
    grid: &BevGrid,
    lidar: &LidarFrame,
    bev_dims: (usize, usize),
) -> ReferencePoints {
    collect(
        2,
        1,
        grid.cell_centers()
            .into_iter()
            .map(|c| project_to_lidar_bev(c, lidar, bev_dims)),
    )
}

/// `N_ref` voxel references per BEV cell (one per height anchor).
pub fn voxel_refs(grid: &BevGrid, lidar: &LidarFrame) -> ReferencePoints {
    collect(
        3,
        grid.n_ref(),
        make_reference_points_3d(grid)
            .into_iter()
            .map(|p| project_to_voxel(p, lidar)),
    )
}

/// `N_ref` feature-cell references per BEV cell for camera `j`; a reference
/// is valid when its anchor hits the camera.
pub fn camera_refs(
    grid: &BevGrid,
    rig: &CameraRig,
    j: usize,
    feature_stride: f64,
) -> Result<ReferencePoints> {
    let pts = make_reference_points_3d(grid)
        .into_iter()
        .map(|p| project_to_camera(p, rig, j, feature_stride).map(|c| c.cell))
        .collect::<Result<Vec<_>>>()?;
    Ok(collect(2, grid.n_ref(), pts.into_iter()))
}

/// `N_ref` frustum references per BEV cell for camera `j`.
pub fn frustum_refs(
    grid: &BevGrid,
    rig: &CameraRig,
    j: usize,
    feature_stride: f64,
    bins: &DepthBinSpec,
) -> Result<ReferencePoints> {
    let pts = make_reference_points_3d(grid)
        .into_iter()
        .map(|p| project_to_frustum(p, rig, j, feature_stride, bins))
        .collect::<Result<Vec<_>>>()?;
    Ok(collect(3, grid.n_ref(), pts.into_iter()))
}
