//! Deformable attention (2D maps and 3D grids), its brute-force oracle, and
//! dense masked multi-head attention for the decoder.

mod deform;
mod mha;
pub mod oracle;
mod refs;

pub use deform::{
    deform_attn_2d, deform_attn_3d, DeformAttn, DeformAttnCache, DeformAttnConfig, DeformAttnGrads,
};
pub use mha::{MhaCache, MultiHeadAttention};
pub use oracle::{deform_attn_oracle_2d, deform_attn_oracle_3d};
pub use refs::ReferencePoints;
