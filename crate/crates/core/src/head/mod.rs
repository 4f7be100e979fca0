//! Set-prediction detection head: object-query decoder over the fused BEV
//! map, Hungarian matching, denoising queries and the composite loss. No NMS.

pub mod boxes;
pub mod decoder;
pub mod denoise;
pub mod loss;
pub mod matching;

pub use boxes::{
    format_detections, normalize_yaw, parse_detections, read_detections, write_detections, Box3D,
    BOX_GEOMETRY, BOX_PARAMS,
};
pub use decoder::{
    head_forward, DecoderLayer, DetectionHead, HeadCache, HeadConfig, HeadOutput, LayerOutput,
    ObjectQuerySet,
};
pub use denoise::{make_denoising_queries, DnNoise, DnQueries};
pub use loss::{detection_loss, focal_loss, match_all, match_layer, LossBreakdown, LossConfig};
pub use matching::{box_l1, hungarian, hungarian_match, Assignment, CostWeights};
