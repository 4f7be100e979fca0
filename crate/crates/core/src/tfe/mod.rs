//! Temporal fusion: a buffer of past fused BEV maps, ego-motion alignment,
//! and two fusers behind one interface (deformable attention summed over
//! frames, or a channel-concat baseline).

pub mod concat;
pub mod encoder;
pub mod history;

pub use concat::{ConcatCache, TemporalConcat};
pub use encoder::{Tfe, TfeCache, TfeConfig, TfeLayer};
pub use history::{push_history, BevHistory};

use crate::error::Result;
use crate::geometry::{BevGrid, EgoPose};
use crate::mmfe::encoder::seeded;
use crate::numerics::module::Module;
use crate::numerics::tensor::{FeatureMap2D, Tensor};

#[derive(Debug, Clone)]
pub enum TemporalFusion {
    Attention(Tfe),
    Concat(TemporalConcat),
}

#[derive(Debug, Clone)]
pub enum TemporalCache {
    Attention(TfeCache),
    Concat(ConcatCache),
}

impl TemporalFusion {
    pub fn attention(cfg: TfeConfig, grid: &BevGrid) -> Result<Self> {
        Ok(Self::Attention(Tfe::new(cfg, grid.h, grid.w)?))
    }

    pub fn concat(cfg: &TfeConfig, grid: &BevGrid) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seeded(cfg.seed, "concat");
        Ok(Self::Concat(TemporalConcat::new(
            cfg.embed_dim,
            cfg.frames,
            grid.h,
            grid.w,
            &mut rng,
        )))
    }

    /// Frames attended including the current one.
    pub fn frames(&self) -> usize {
        match self {
            Self::Attention(t) => t.cfg.frames,
            Self::Concat(t) => t.frames(),
        }
    }

    /// `history` holds aligned maps as position-major rows, newest first.
    pub fn forward_rows(
        &self,
        current: &[f64],
        history: &[Vec<f64>],
    ) -> Result<(Vec<f64>, TemporalCache)> {
        match self {
            Self::Attention(t) => t
                .forward_rows(current, history)
                .map(|(y, c)| (y, TemporalCache::Attention(c))),
            Self::Concat(t) => t
                .forward_rows(current, history)
                .map(|(y, c)| (y, TemporalCache::Concat(c))),
        }
    }

    /// Gradient for the current rows.
    ///
    /// # Panics
    /// If the cache came from the other variant.
    pub fn backward(&mut self, cache: &TemporalCache, gout: &[f64]) -> Vec<f64> {
        match (self, cache) {
            (Self::Attention(t), TemporalCache::Attention(c)) => t.backward(c, gout),
            (Self::Concat(t), TemporalCache::Concat(c)) => t.backward(c, gout),
            _ => panic!("temporal cache does not match the fuser"),
        }
    }
}

impl Module for TemporalFusion {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        match self {
            Self::Attention(t) => t.visit_params(prefix, f),
            Self::Concat(t) => t.visit_params(prefix, f),
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        match self {
            Self::Attention(t) => t.visit_params_mut(prefix, f),
            Self::Concat(t) => t.visit_params_mut(prefix, f),
        }
    }
}

/// Warps the most recent `frames - 1` history maps into `now` and returns
/// them as rows, newest first.
pub fn aligned_history_rows(
    buf: &BevHistory,
    now: &EgoPose,
    grid: &BevGrid,
    frames: usize,
) -> Result<Vec<Vec<f64>>> {
    Ok(buf
        .aligned(now, grid, frames.saturating_sub(1))?
        .iter()
        .map(FeatureMap2D::to_rows)
        .collect())
}

/// Fuses `current` with the buffered history seen from `now`.
pub fn tfe_forward(
    current: &FeatureMap2D,
    buf: &BevHistory,
    now: &EgoPose,
    fuser: &TemporalFusion,
    grid: &BevGrid,
) -> Result<FeatureMap2D> {
    let hist = aligned_history_rows(buf, now, grid, fuser.frames())?;
    let (rows, _) = fuser.forward_rows(&current.to_rows(), &hist)?;
    Ok(FeatureMap2D::from_rows(
        &rows,
        current.channels,
        current.height,
        current.width,
    ))
}
