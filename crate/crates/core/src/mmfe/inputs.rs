use crate::attention::ReferencePoints;
use crate::error::Result;
use crate::geometry::{
    camera_refs, frustum_refs, lidar_bev_refs, voxel_refs, BevGrid, CameraRig, DepthBinSpec,
    LidarFrame,
};
use crate::numerics::tensor::{FeatureGrid3D, FeatureMap2D};

/// A feature field prepared for attention: position-major rows over `dims`
/// plus one set of references per BEV query.
#[derive(Debug, Clone)]
pub struct ModalField {
    pub rows: Vec<f64>,
    pub channels: usize,
    pub dims: Vec<usize>,
    pub refs: ReferencePoints,
}

impl ModalField {
    pub fn from_map(map: &FeatureMap2D, refs: ReferencePoints) -> Self {
        Self {
            rows: map.to_rows(),
            channels: map.channels,
            dims: vec![map.height, map.width],
            refs,
        }
    }

    pub fn from_grid(grid: &FeatureGrid3D, refs: ReferencePoints) -> Self {
        Self {
            rows: grid.to_rows(),
            channels: grid.channels,
            dims: grid.dims().to_vec(),
            refs,
        }
    }

    /// Compressed LiDAR BEV map; the map spans the voxel grid's x/y extent.
    pub fn lidar_bev(map: &FeatureMap2D, grid: &BevGrid, lidar: &LidarFrame) -> Self {
        Self::from_map(map, lidar_bev_refs(grid, lidar, (map.height, map.width)))
    }

    /// Voxel features at the frame's native resolution.
    pub fn voxels(v: &FeatureGrid3D, grid: &BevGrid, lidar: &LidarFrame) -> Self {
        Self::from_grid(v, voxel_refs(grid, lidar))
    }

    pub fn camera(
        map: &FeatureMap2D,
        stride: f64,
        grid: &BevGrid,
        rig: &CameraRig,
        j: usize,
    ) -> Result<Self> {
        Ok(Self::from_map(map, camera_refs(grid, rig, j, stride)?))
    }

    pub fn frustum(
        d: &FeatureGrid3D,
        stride: f64,
        bins: &DepthBinSpec,
        grid: &BevGrid,
        rig: &CameraRig,
        j: usize,
    ) -> Result<Self> {
        Ok(Self::from_grid(
            d,
            frustum_refs(grid, rig, j, stride, bins)?,
        ))
    }

    /// Gradient rows back to channel-major layout.
    pub fn rows_to_map(&self, g: &[f64]) -> FeatureMap2D {
        FeatureMap2D::from_rows(g, self.channels, self.dims[0], self.dims[1])
    }

    pub fn rows_to_grid(&self, g: &[f64]) -> FeatureGrid3D {
        FeatureGrid3D::from_rows(g, self.channels, self.dims[0], self.dims[1], self.dims[2])
    }
}

/// Everything the encoder may attend. Camera-indexed vectors may be empty
/// when the modality is absent.
#[derive(Debug, Clone, Default)]
pub struct MmfeInputs {
    pub lidar: Option<ModalField>,
    pub image: Vec<ModalField>,
    pub depth: Vec<ModalField>,
}

/// Gradients w.r.t. the modality field rows (same layout as the inputs).
#[derive(Debug, Clone, Default)]
pub struct MmfeInputGrads {
    pub lidar: Option<Vec<f64>>,
    pub image: Vec<Vec<f64>>,
    pub depth: Vec<Vec<f64>>,
}
