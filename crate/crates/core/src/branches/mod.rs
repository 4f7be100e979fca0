//! Modality feature producers: point-cloud voxelization and encoding, a stub
//! multi-scale image extractor, and the interval-based depth branch.

pub mod depth;
pub mod image;
pub mod lidar;
pub mod pointcloud;

pub use depth::{DepthBranch, DepthBranchCache, DepthFeatures};
pub use image::{
    load_feature_map, read_feature_map, save_feature_map, write_feature_map, CameraFeatures,
    ImageBackbone, ImageBackboneCache, ImageFeatures,
};
pub use lidar::{fold_z, unfold_z, BevCompressor, LidarEncoder, LidarEncoderCache};
pub use pointcloud::{voxelize, PointCloud, VoxelStats, RAW_VOXEL_CHANNELS};
