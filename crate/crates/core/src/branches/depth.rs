use rand::Rng;

use crate::error::{dim_err, Result};
use crate::geometry::DepthBinSpec;
use crate::numerics::conv::Conv3d;
use crate::numerics::module::{join, Module};
use crate::numerics::tensor::{FeatureGrid3D, FeatureMap2D, Tensor};

/// Interval-based depth branch: a 1×1 conv predicts per-pixel logits over
/// depth bins, the softmax distribution lifts the image features into the
/// frustum (`feat[c] · p[bin]`), and a 3×3×3 conv encodes the result.
#[derive(Debug, Clone)]
pub struct DepthBranch {
    pub bins: DepthBinSpec,
    pub logits: Conv3d,
    pub encoder: Conv3d,
}

/// Frustum features of one camera.
#[derive(Debug, Clone)]
pub struct DepthFeatures {
    /// `[C_d, D_bins, h, w]`
    pub grid: FeatureGrid3D,
    /// Per-pixel depth distribution `[D_bins, h, w]`.
    pub distribution: FeatureGrid3D,
}

#[derive(Debug, Clone)]
pub struct DepthBranchCache {
    feat: FeatureMap2D,
    dist: FeatureGrid3D,
    lifted: FeatureGrid3D,
}

impl DepthBranch {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        bins: DepthBinSpec,
        rng: &mut impl Rng,
    ) -> Self {
        let d = bins.bins();
        Self {
            bins,
            logits: Conv3d::new_2d(in_channels, d, 1, 1, rng),
            encoder: Conv3d::new(
                in_channels,
                out_channels,
                [3, 3, 3],
                [1, 1, 1],
                [1, 1, 1],
                rng,
            ),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.encoder.cout()
    }

    pub fn forward(&self, feat: &FeatureMap2D) -> Result<(DepthFeatures, DepthBranchCache)> {
        if feat.channels != self.logits.cin() {
            return dim_err(format!(
                "depth branch expects {} channels, got {}",
                self.logits.cin(),
                feat.channels
            ));
        }
        let d = self.bins.bins();
        let (h, w) = (feat.height, feat.width);
        let hw = h * w;
        let logits = self.logits.forward_2d(feat);
        let mut dist = FeatureGrid3D::zeros(1, d, h, w);
        for p in 0..hw {
            let m = (0..d)
                .map(|b| logits.data[b * hw + p])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for b in 0..d {
                let e = (logits.data[b * hw + p] - m).exp();
                dist.data[b * hw + p] = e;
                z += e;
            }
            for b in 0..d {
                dist.data[b * hw + p] /= z;
            }
        }
        let c = feat.channels;
        let mut lifted = FeatureGrid3D::zeros(c, d, h, w);
        for ch in 0..c {
            for b in 0..d {
                let dst = &mut lifted.data[(ch * d + b) * hw..(ch * d + b + 1) * hw];
                let f = &feat.data[ch * hw..(ch + 1) * hw];
                let pb = &dist.data[b * hw..(b + 1) * hw];
                for p in 0..hw {
                    dst[p] = f[p] * pb[p];
                }
            }
        }
        let grid = self.encoder.forward(&lifted);
        let out = DepthFeatures {
            grid,
            distribution: dist.clone(),
        };
        Ok((
            out,
            DepthBranchCache {
                feat: feat.clone(),
                dist,
                lifted,
            },
        ))
    }

    /// Returns the gradient w.r.t. the input image features.
    pub fn backward(&mut self, cache: &DepthBranchCache, gy: &FeatureGrid3D) -> FeatureMap2D {
        let glifted = self.encoder.backward(&cache.lifted, gy);
        let feat = &cache.feat;
        let (c, d) = (feat.channels, self.bins.bins());
        let hw = feat.height * feat.width;
        let mut gfeat = FeatureMap2D::zeros(c, feat.height, feat.width);
        let mut gdist = vec![0.0; d * hw];
        for ch in 0..c {
            for b in 0..d {
                let g = &glifted.data[(ch * d + b) * hw..(ch * d + b + 1) * hw];
                for p in 0..hw {
                    gdist[b * hw + p] += g[p] * feat.data[ch * hw + p];
                    gfeat.data[ch * hw + p] += g[p] * cache.dist.data[b * hw + p];
                }
            }
        }
        let mut glogits = FeatureMap2D::zeros(d, feat.height, feat.width);
        for p in 0..hw {
            let dot: f64 = (0..d)
                .map(|b| gdist[b * hw + p] * cache.dist.data[b * hw + p])
                .sum();
            for b in 0..d {
                glogits.data[b * hw + p] = cache.dist.data[b * hw + p] * (gdist[b * hw + p] - dot);
            }
        }
        let g2 = self.logits.backward_2d(feat, &glogits);
        gfeat
            .data
            .iter_mut()
            .zip(&g2.data)
            .for_each(|(a, b)| *a += b);
        gfeat
    }
}

impl Module for DepthBranch {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.logits.visit_params(&join(prefix, "logits"), f);
        self.encoder.visit_params(&join(prefix, "encoder"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.logits.visit_params_mut(&join(prefix, "logits"), f);
        self.encoder.visit_params_mut(&join(prefix, "encoder"), f);
    }
}
