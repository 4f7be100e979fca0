use super::grid::BevGrid;
use super::transform::{apply, EgoPose};
use crate::error::{dim_err, Result};
use crate::numerics::sampling::bilinear_sample_2d;
use crate::numerics::tensor::FeatureMap2D;

/// Resamples a historical BEV map into the current ego frame.
///
/// Each current cell centre is carried through world into the historical
/// ego frame and `hist` is bilinearly sampled there; locations that fall
/// outside the historical grid read zeros.
pub fn align_history_bev(
    hist: &FeatureMap2D,
    pose_then: &EgoPose,
    pose_now: &EgoPose,
    grid: &BevGrid,
) -> Result<FeatureMap2D> {
    if hist.height != grid.h || hist.width != grid.w {
        return dim_err(format!(
            "history map {}x{} does not match grid {}x{}",
            hist.height, hist.width, grid.h, grid.w
        ));
    }
    if pose_then.world_from_ego == pose_now.world_from_ego {
        return Ok(hist.clone());
    }
    let then_from_now = pose_then.world_from_ego.inverse() * pose_now.world_from_ego;
    let mut out = FeatureMap2D::zeros(hist.channels, grid.h, grid.w);
    for ix in 0..grid.h {
        for iy in 0..grid.w {
            let (x, y) = grid.center_unchecked(ix, iy);
            let p = apply(&then_from_now, [x, y, 0.0]);
            let (r, c) = grid.continuous_cell(p[0], p[1]);
            let v = bilinear_sample_2d(hist, (r - 0.5, c - 0.5));
            for (ch, val) in v.into_iter().enumerate() {
                *out.at_mut(ch, ix, iy) = val;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(grid: &BevGrid) -> FeatureMap2D {
        let mut m = FeatureMap2D::zeros(2, grid.h, grid.w);
        for i in 0..grid.h {
            for j in 0..grid.w {
                *m.at_mut(0, i, j) = (i * 31 + j * 7) as f64 % 13.0;
                *m.at_mut(1, i, j) = i as f64 - 2.0 * j as f64;
            }
        }
        m
    }

    #[test]
    fn identical_poses_are_identity() {
        let grid = BevGrid::square(8, 4.0, 1).unwrap();
        let m = ramp(&grid);
        let p = EgoPose::planar(0, 3.0, -1.0, 0.4);
        assert_eq!(align_history_bev(&m, &p, &p, &grid).unwrap(), m);
    }

    #[test]
    fn one_cell_translation() {
        let grid = BevGrid::square(8, 4.0, 1).unwrap();
        let m = ramp(&grid);
        let then = EgoPose::planar(0, 0.0, 0.0, 0.0);
        let now = EgoPose::planar(1, grid.cell_size(), 0.0, 0.0);
        let out = align_history_bev(&m, &then, &now, &grid).unwrap();
        for c in 0..2 {
            for i in 0..7 {
                for j in 0..8 {
                    assert!((out.at(c, i, j) - m.at(c, i + 1, j)).abs() < 1e-12);
                }
            }
            for j in 0..8 {
                assert_eq!(out.at(c, 7, j), 0.0);
            }
        }
    }

    #[test]
    fn half_turn() {
        let grid = BevGrid::square(6, 3.0, 1).unwrap();
        let m = ramp(&grid);
        let then = EgoPose::planar(0, 0.0, 0.0, 0.0);
        let now = EgoPose::planar(1, 0.0, 0.0, std::f64::consts::PI);
        let out = align_history_bev(&m, &then, &now, &grid).unwrap();
        for c in 0..2 {
            for i in 0..6 {
                for j in 0..6 {
                    assert!((out.at(c, i, j) - m.at(c, 5 - i, 5 - j)).abs() < 1e-9);
                }
            }
        }
    }
}
