use rand::Rng;

use crate::error::{dim_err, Error, Result};
use crate::numerics::conv::Conv3d;
use crate::numerics::module::{join, Module};
use crate::numerics::ops::{relu, relu_backward};
use crate::numerics::tensor::{FeatureGrid3D, FeatureMap2D, Tensor};

/// Dense stand-in for a sparse 3D backbone: a stack of 3×3×3 convolutions
/// with ReLU between them (none after the last). Only the first conv may
/// stride.
#[derive(Debug, Clone)]
pub struct LidarEncoder {
    pub convs: Vec<Conv3d>,
}

#[derive(Debug, Clone)]
pub struct LidarEncoderCache {
    /// Input of each conv.
    inputs: Vec<FeatureGrid3D>,
    /// Pre-activation output of each conv except the last.
    pre: Vec<FeatureGrid3D>,
}

impl LidarEncoder {
    /// `channels[0]` is the raw input width; one conv per following entry.
    pub fn new(channels: &[usize], stride: usize, rng: &mut impl Rng) -> Result<Self> {
        if channels.len() < 2 || channels.contains(&0) || stride == 0 {
            return Err(Error::Config(format!(
                "lidar encoder needs ≥2 positive channel widths, got {channels:?}"
            )));
        }
        let convs = channels
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let s = if i == 0 { stride } else { 1 };
                Conv3d::new(w[0], w[1], [3, 3, 3], [s, s, s], [1, 1, 1], rng)
            })
            .collect();
        Ok(Self { convs })
    }

    pub fn in_channels(&self) -> usize {
        self.convs[0].cin()
    }

    pub fn out_channels(&self) -> usize {
        self.convs.last().expect("non-empty").cout()
    }

    pub fn output_dims(&self, dims: [usize; 3]) -> [usize; 3] {
        self.convs.iter().fold(dims, |d, c| c.output_dims(d))
    }

    pub fn forward(&self, raw: &FeatureGrid3D) -> Result<(FeatureGrid3D, LidarEncoderCache)> {
        if raw.channels != self.in_channels() {
            return dim_err(format!(
                "voxel grid has {} channels, encoder expects {}",
                raw.channels,
                self.in_channels()
            ));
        }
        let mut inputs = Vec::with_capacity(self.convs.len());
        let mut pre = Vec::new();
        let mut x = raw.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            let y = conv.forward(&x);
            inputs.push(x);
            x = if i + 1 < self.convs.len() {
                let act = FeatureGrid3D {
                    data: relu(&y.data),
                    ..y.clone()
                };
                pre.push(y);
                act
            } else {
                y
            };
        }
        Ok((x, LidarEncoderCache { inputs, pre }))
    }

    pub fn backward(&mut self, cache: &LidarEncoderCache, gy: &FeatureGrid3D) -> FeatureGrid3D {
        let n = self.convs.len();
        let mut g = gy.clone();
        for i in (0..n).rev() {
            if i + 1 < n {
                g.data = relu_backward(&cache.pre[i].data, &g.data);
            }
            g = self.convs[i].backward(&cache.inputs[i], &g);
        }
        g
    }
}

impl Module for LidarEncoder {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.convs.visit_params(&join(prefix, "convs"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.convs.visit_params_mut(&join(prefix, "convs"), f);
    }
}

/// Folds Z into channels (`channel = c·Z + z`) then applies a 2D conv.
#[derive(Debug, Clone)]
pub struct BevCompressor {
    pub conv: Conv3d,
}

/// `[C, Z, H, W] → [C·Z, H, W]`. Channel-major storage makes this a relabelling.
pub fn fold_z(v: &FeatureGrid3D) -> FeatureMap2D {
    FeatureMap2D {
        channels: v.channels * v.depth,
        height: v.height,
        width: v.width,
        data: v.data.clone(),
    }
}

/// Inverse of [`fold_z`].
pub fn unfold_z(m: &FeatureMap2D, depth: usize) -> Result<FeatureGrid3D> {
    if depth == 0 || m.channels % depth != 0 {
        return dim_err(format!(
            "{} channels do not split into depth {depth}",
            m.channels
        ));
    }
    Ok(FeatureGrid3D {
        channels: m.channels / depth,
        depth,
        height: m.height,
        width: m.width,
        data: m.data.clone(),
    })
}

impl BevCompressor {
    pub fn new(in_channels: usize, depth: usize, out_channels: usize, rng: &mut impl Rng) -> Self {
        Self {
            conv: Conv3d::new_2d(in_channels * depth, out_channels, 3, 1, rng),
        }
    }

    pub fn forward(&self, v: &FeatureGrid3D) -> Result<(FeatureMap2D, FeatureMap2D)> {
        let folded = fold_z(v);
        if folded.channels != self.conv.cin() {
            return dim_err(format!(
                "folded voxels have {} channels, compressor expects {}",
                folded.channels,
                self.conv.cin()
            ));
        }
        let y = self.conv.forward_2d(&folded);
        Ok((y, folded))
    }

    /// `folded` is the second value returned by `forward`.
    pub fn backward(
        &mut self,
        folded: &FeatureMap2D,
        depth: usize,
        gy: &FeatureMap2D,
    ) -> Result<FeatureGrid3D> {
        let g = self.conv.backward_2d(folded, gy);
        unfold_z(&g, depth)
    }
}

impl Module for BevCompressor {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.conv.visit_params(&join(prefix, "conv"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.conv.visit_params_mut(&join(prefix, "conv"), f);
    }
}
