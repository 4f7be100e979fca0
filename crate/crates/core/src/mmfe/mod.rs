//! Multi-modal fusion encoder: BEV queries attend to themselves and then to
//! LiDAR, camera and depth features through deformable attention.

pub mod config;
pub mod encoder;
pub mod inputs;
pub mod queries;

pub use config::{parse_modalities, LidarForm, MmfeConfig, Modality};
pub use encoder::{hit_counts, mmfe_forward, CrossBlock, Mmfe, MmfeCache, MmfeLayer};
pub use inputs::{MmfeInputGrads, MmfeInputs, ModalField};
pub use queries::{init_bev_queries, sine_position, sine_position_backward, BevQueries};
