//! Coordinate frames, the BEV lattice, sensor projections and ego-motion
//! alignment. The ego frame is the common reference; LiDAR and cameras carry
//! explicit extrinsics.

pub mod align;
pub mod calib;
pub mod grid;
pub mod projection;
pub mod sensors;
pub mod transform;

pub use align::align_history_bev;
pub use calib::{
    format_calibration, parse_calibration, read_calibration, write_calibration, Calibration,
};
pub use grid::{make_reference_points_3d, uniform_anchors, BevGrid};
pub use projection::{
    camera_refs, frustum_refs, lidar_bev_refs, project_to_camera, project_to_frustum,
    project_to_lidar_bev, project_to_voxel, voxel_refs, CameraProjection, Projected,
};
pub use sensors::{Camera, CameraRig, DepthBinSpec, LidarFrame, DEPTH_MIN};
pub use transform::{planar, rigid_from_rows, rigid_to_rows, EgoPose, Rigid};
