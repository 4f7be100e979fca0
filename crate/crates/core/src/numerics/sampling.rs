//! Multilinear sampling with zero padding.
//!
//! Locations are in cell units where integer coordinates hit cell values
//! exactly. Neighbours outside the grid contribute zero, so any location at or
//! beyond one cell outside the grid samples the zero vector.

use super::tensor::{FeatureGrid3D, FeatureMap2D};

#[derive(Debug, Clone, Copy)]
struct Corner {
    pos: usize,
    weight: f64,
    /// d weight / d loc_d
    dweight: [f64; 3],
}

/// Enumerates in-range corners of the cell containing `loc`.
#[inline]
fn corners<const D: usize>(dims: [usize; D], loc: [f64; D], mut f: impl FnMut(Corner)) {
    let mut base = [0i64; D];
    let mut frac = [0f64; D];
    for d in 0..D {
        if !loc[d].is_finite() || loc[d] <= -1.0 || loc[d] >= dims[d] as f64 {
            return;
        }
        let fl = loc[d].floor();
        base[d] = fl as i64;
        frac[d] = loc[d] - fl;
    }
    'corner: for mask in 0..(1usize << D) {
        let mut pos = 0usize;
        let mut axis_w = [0f64; D];
        for d in 0..D {
            let bit = (mask >> d) & 1;
            let idx = base[d] + bit as i64;
            if idx < 0 || idx >= dims[d] as i64 {
                continue 'corner;
            }
            pos = pos * dims[d] + idx as usize;
            axis_w[d] = if bit == 1 { frac[d] } else { 1.0 - frac[d] };
        }
        let mut weight = 1.0;
        for w in axis_w.iter() {
            weight *= w;
        }
        let mut dweight = [0f64; 3];
        for d in 0..D {
            let mut g = if (mask >> d) & 1 == 1 { 1.0 } else { -1.0 };
            for (e, w) in axis_w.iter().enumerate() {
                if e != d {
                    g *= w;
                }
            }
            dweight[d] = g;
        }
        f(Corner {
            pos,
            weight,
            dweight,
        });
    }
}

/// Accumulates `scale * sample(loc)` over channels `[c0, c0 + out.len())` of a
/// position-major field with `stride` values per position.
#[inline]
pub fn sample_rows_into<const D: usize>(
    rows: &[f64],
    stride: usize,
    dims: [usize; D],
    loc: [f64; D],
    c0: usize,
    scale: f64,
    out: &mut [f64],
) {
    let len = out.len();
    corners(dims, loc, |c| {
        let w = c.weight * scale;
        if w == 0.0 {
            return;
        }
        let row = &rows[c.pos * stride + c0..c.pos * stride + c0 + len];
        for (o, v) in out.iter_mut().zip(row) {
            *o += w * v;
        }
    });
}

/// Backward of [`sample_rows_into`]: scatters `scale * gout` into `grows` and
/// returns `d<gout, scale * sample>/d loc` together with the unscaled
/// `<gout, sample>`.
#[inline]
pub fn sample_rows_backward<const D: usize>(
    rows: &[f64],
    grows: &mut [f64],
    stride: usize,
    dims: [usize; D],
    loc: [f64; D],
    c0: usize,
    scale: f64,
    gout: &[f64],
) -> ([f64; D], f64) {
    let len = gout.len();
    let mut gloc = [0f64; D];
    let mut value_dot = 0.0;
    corners(dims, loc, |c| {
        let base = c.pos * stride + c0;
        let row = &rows[base..base + len];
        let dot: f64 = row.iter().zip(gout).map(|(v, g)| v * g).sum();
        for d in 0..D {
            gloc[d] += scale * c.dweight[d] * dot;
        }
        value_dot += c.weight * dot;
        let w = c.weight * scale;
        if w != 0.0 {
            for (gr, g) in grows[base..base + len].iter_mut().zip(gout) {
                *gr += w * g;
            }
        }
    });
    (gloc, value_dot)
}

/// Bilinear sample of all channels at `loc = (row, col)`.
pub fn bilinear_sample_2d(map: &FeatureMap2D, loc: (f64, f64)) -> Vec<f64> {
    let mut out = vec![0.0; map.channels];
    let hw = map.positions();
    corners([map.height, map.width], [loc.0, loc.1], |c| {
        for (ch, o) in out.iter_mut().enumerate() {
            *o += c.weight * map.data[ch * hw + c.pos];
        }
    });
    out
}

/// Returns `(dL/dmap, dL/dloc)` for upstream gradient `gout` over channels.
pub fn bilinear_sample_2d_backward(
    map: &FeatureMap2D,
    loc: (f64, f64),
    gout: &[f64],
) -> (FeatureMap2D, (f64, f64)) {
    let mut gmap = FeatureMap2D::zeros(map.channels, map.height, map.width);
    let hw = map.positions();
    let mut gloc = [0.0; 2];
    corners([map.height, map.width], [loc.0, loc.1], |c| {
        for (ch, g) in gout.iter().enumerate() {
            gmap.data[ch * hw + c.pos] += c.weight * g;
            gloc[0] += c.dweight[0] * g * map.data[ch * hw + c.pos];
            gloc[1] += c.dweight[1] * g * map.data[ch * hw + c.pos];
        }
    });
    (gmap, (gloc[0], gloc[1]))
}

/// Trilinear sample of all channels at `loc = (z, row, col)`.
pub fn trilinear_sample_3d(grid: &FeatureGrid3D, loc: (f64, f64, f64)) -> Vec<f64> {
    let mut out = vec![0.0; grid.channels];
    let n = grid.positions();
    corners(grid.dims(), [loc.0, loc.1, loc.2], |c| {
        for (ch, o) in out.iter_mut().enumerate() {
            *o += c.weight * grid.data[ch * n + c.pos];
        }
    });
    out
}

pub fn trilinear_sample_3d_backward(
    grid: &FeatureGrid3D,
    loc: (f64, f64, f64),
    gout: &[f64],
) -> (FeatureGrid3D, (f64, f64, f64)) {
    let mut g = FeatureGrid3D::zeros(grid.channels, grid.depth, grid.height, grid.width);
    let n = grid.positions();
    let mut gloc = [0.0; 3];
    corners(grid.dims(), [loc.0, loc.1, loc.2], |c| {
        for (ch, go) in gout.iter().enumerate() {
            let v = grid.data[ch * n + c.pos];
            g.data[ch * n + c.pos] += c.weight * go;
            for d in 0..3 {
                gloc[d] += c.dweight[d] * go * v;
            }
        }
    });
    (g, (gloc[0], gloc[1], gloc[2]))
}
