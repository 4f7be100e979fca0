use crate::error::{Error, Result};

/// The H×W lattice of BEV queries over a square ROI in the ego frame.
///
/// Rows run along ego x, columns along ego y. Cell `(ix, iy)` has its centre
/// at `(x_min + (ix + 0.5)·cell, y_min + (iy + 0.5)·cell)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BevGrid {
    pub h: usize,
    pub w: usize,
    /// `(x_min, x_max, y_min, y_max)` in meters.
    pub roi: [f64; 4],
    /// Height anchors in meters, strictly increasing.
    pub z_anchors: Vec<f64>,
    cell_size: f64,
}

/// `n` heights spread evenly over `[lo, hi]` (a single anchor sits at the midpoint).
pub fn uniform_anchors(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

impl BevGrid {
    pub fn new(h: usize, w: usize, roi: [f64; 4], z_anchors: Vec<f64>) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(Error::Config(format!(
                "BEV grid must be non-empty, got {h}x{w}"
            )));
        }
        let [x0, x1, y0, y1] = roi;
        if !roi.iter().all(|v| v.is_finite()) || x1 <= x0 || y1 <= y0 {
            return Err(Error::Config(format!("invalid ROI {roi:?}")));
        }
        let cx = (x1 - x0) / h as f64;
        let cy = (y1 - y0) / w as f64;
        if (cx - cy).abs() > 1e-9 * cx.max(cy) {
            return Err(Error::Config(format!(
                "cells must be square: {cx} m along x vs {cy} m along y"
            )));
        }
        if z_anchors.is_empty()
            || z_anchors.windows(2).any(|p| p[1] <= p[0])
            || z_anchors.iter().any(|z| !z.is_finite())
        {
            return Err(Error::Config(format!(
                "height anchors must be non-empty and strictly increasing: {z_anchors:?}"
            )));
        }
        Ok(Self {
            h,
            w,
            roi,
            z_anchors,
            cell_size: cx,
        })
    }

    /// Square grid over `[-half, half]²` with `n_ref` anchors on `[-3, 3]` m.
    pub fn square(n: usize, half_extent: f64, n_ref: usize) -> Result<Self> {
        Self::new(
            n,
            n,
            [-half_extent, half_extent, -half_extent, half_extent],
            uniform_anchors(n_ref, -3.0, 3.0),
        )
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn num_cells(&self) -> usize {
        self.h * self.w
    }

    pub fn n_ref(&self) -> usize {
        self.z_anchors.len()
    }

    pub fn bev_cell_center(&self, ix: usize, iy: usize) -> Result<(f64, f64)> {
        if ix >= self.h || iy >= self.w {
            return Err(Error::OutOfRange(format!(
                "cell ({ix}, {iy}) outside {}x{} grid",
                self.h, self.w
            )));
        }
        Ok(self.center_unchecked(ix, iy))
    }

    #[inline]
    pub(crate) fn center_unchecked(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            self.roi[0] + (ix as f64 + 0.5) * self.cell_size,
            self.roi[2] + (iy as f64 + 0.5) * self.cell_size,
        )
    }

    /// Floor-maps a metric location to its cell, `None` outside the ROI.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let (r, c) = self.continuous_cell(x, y);
        if r.is_nan() || c.is_nan() || r < 0.0 || c < 0.0 {
            return None;
        }
        let (ix, iy) = (r.floor() as usize, c.floor() as usize);
        (ix < self.h && iy < self.w).then_some((ix, iy))
    }

    /// Continuous cell coordinates with cell edges at integers.
    pub fn continuous_cell(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.roi[0]) / self.cell_size,
            (y - self.roi[2]) / self.cell_size,
        )
    }

    /// Centres of all cells in row-major order.
    pub fn cell_centers(&self) -> Vec<(f64, f64)> {
        (0..self.h)
            .flat_map(|ix| (0..self.w).map(move |iy| (ix, iy)))
            .map(|(ix, iy)| self.center_unchecked(ix, iy))
            .collect()
    }
}

/// One pillar of `N_ref` 3D points per cell at the cell centre, cell-major.
pub fn make_reference_points_3d(grid: &BevGrid) -> Vec<[f64; 3]> {
    let mut out = Vec::with_capacity(grid.num_cells() * grid.n_ref());
    for (x, y) in grid.cell_centers() {
        out.extend(grid.z_anchors.iter().map(|&z| [x, y, z]));
    }
    out
}
