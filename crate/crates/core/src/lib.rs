//! Multi-modal bird's-eye-view fusion with deformable attention.
//!
//! The crate is organised bottom-up:
//!
//! * [`numerics`]: dense f64 kernels with hand-written backward passes, a
//!   finite-difference gradient checker and the weight checkpoint format.
//! * [`attention`]: multi-head deformable attention over 2D maps and 3D grids,
//!   a brute-force oracle, and dense masked multi-head attention.
//! * [`geometry`]: BEV grid, camera/LiDAR/frustum projections and ego-motion
//!   alignment of historical BEV maps.
//! * [`branches`]: voxelizer, LiDAR encoders, image backbone stub and the
//!   depth-prediction branch.
//! * [`mmfe`]: the multi-modal fusion encoder.
//! * [`tfe`]: the temporal fusion encoder and a channel-concat baseline.
//! * [`head`]: set-prediction detection head, Hungarian matching, denoising
//!   queries and the detection loss.

pub mod attention;
pub mod branches;
pub mod error;
pub mod geometry;
pub mod head;
pub mod mmfe;
pub mod numerics;
pub mod tfe;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
