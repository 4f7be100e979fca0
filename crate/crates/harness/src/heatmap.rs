//! Grayscale dumps of BEV feature maps.

use std::path::Path;
use std::str::FromStr;

use bevfuse_core::numerics::FeatureMap2D;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduce {
    L2,
    Max,
}

impl FromStr for Reduce {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(Self::L2),
            "max" => Ok(Self::Max),
            other => Err(HarnessError::Config(format!(
                "unknown reduction '{other}' (expected l2 or max)"
            ))),
        }
    }
}

/// Per-cell channel reduction, min-max normalised to `0..=255`, row-major
/// `H × W`. A constant map is all zeros.
pub fn heatmap_pixels(bev: &FeatureMap2D, reduce: Reduce) -> Vec<u8> {
    let n = bev.height * bev.width;
    let vals: Vec<f64> = (0..n)
        .map(|p| {
            let ch = (0..bev.channels).map(|c| bev.data[c * n + p]);
            match reduce {
                Reduce::L2 => ch.map(|v| v * v).sum::<f64>().sqrt(),
                Reduce::Max => ch.fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect();
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0; n];
    }
    vals.iter()
        .map(|v| ((v - lo) / (hi - lo) * 255.0).round() as u8)
        .collect()
}

/// Binary PGM (`P5`) bytes.
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn dump_bev_heatmap(bev: &FeatureMap2D, reduce: Reduce, path: &Path) -> Result<()> {
    std::fs::write(
        path,
        encode_pgm(bev.width, bev.height, &heatmap_pixels(bev, reduce)),
    )?;
    Ok(())
}
