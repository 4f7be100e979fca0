//! Dense double-precision kernels with analytic backward passes.

pub mod checkpoint;
pub mod conv;
pub mod gradcheck;
pub mod module;
pub mod ops;
pub mod sampling;
pub mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use conv::Conv3d;
pub use gradcheck::{finite_difference_check, GradCheckOptions, GradCheckReport};
pub use module::{Module, TensorSet};
pub use ops::{layer_norm, linear, softmax, FeedForward, LayerNorm, Linear};
pub use sampling::{bilinear_sample_2d, trilinear_sample_3d};
pub use tensor::{FeatureGrid3D, FeatureMap2D, Tensor};
