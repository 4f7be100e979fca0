use rand::Rng;

use crate::error::{dim_err, Result};
use crate::numerics::conv::Conv3d;
use crate::numerics::module::{join, Module};
use crate::numerics::ops::add_assign;
use crate::numerics::tensor::{channel_major_to_rows, rows_to_channel_major, FeatureMap2D, Tensor};

/// Baseline temporal fusion: the current map plus a 3×3 conv over the
/// channel concatenation of the current and aligned history maps. Missing
/// frames read zeros, so the conv width is fixed.
#[derive(Debug, Clone)]
pub struct TemporalConcat {
    pub conv: Conv3d,
    channels: usize,
    frames: usize,
    h: usize,
    w: usize,
}

#[derive(Debug, Clone)]
pub struct ConcatCache {
    input: FeatureMap2D,
}

impl TemporalConcat {
    pub fn new(channels: usize, frames: usize, h: usize, w: usize, rng: &mut impl Rng) -> Self {
        let mut conv = Conv3d::new_2d(channels * frames, channels, 3, 1, rng);
        conv.weight.data.iter_mut().for_each(|v| *v *= 0.1);
        Self {
            conv,
            channels,
            frames,
            h,
            w,
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn forward_rows(
        &self,
        current: &[f64],
        history: &[Vec<f64>],
    ) -> Result<(Vec<f64>, ConcatCache)> {
        let (c, p) = (self.channels, self.h * self.w);
        if current.len() != c * p || history.iter().any(|m| m.len() != c * p) {
            return dim_err(format!(
                "temporal concat expects {}x{}x{c} rows",
                self.h, self.w
            ));
        }
        let mut data = Vec::with_capacity(c * p * self.frames);
        data.extend(rows_to_channel_major(current, c, p));
        for m in history.iter().take(self.frames - 1) {
            data.extend(rows_to_channel_major(m, c, p));
        }
        data.resize(c * p * self.frames, 0.0);
        let input = FeatureMap2D::new(c * self.frames, self.h, self.w, data)?;
        let y = self.conv.forward_2d(&input);
        let mut out = current.to_vec();
        add_assign(&mut out, &channel_major_to_rows(&y.data, c, p));
        Ok((out, ConcatCache { input }))
    }

    pub fn backward(&mut self, cache: &ConcatCache, gout: &[f64]) -> Vec<f64> {
        let (c, p) = (self.channels, self.h * self.w);
        let gy = FeatureMap2D::from_rows(gout, c, self.h, self.w);
        let gin = self.conv.backward_2d(&cache.input, &gy);
        let mut g = gout.to_vec();
        add_assign(&mut g, &channel_major_to_rows(&gin.data[..c * p], c, p));
        g
    }
}

impl Module for TemporalConcat {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.conv.visit_params(&join(prefix, "conv"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.conv.visit_params_mut(&join(prefix, "conv"), f);
    }
}
