//! Brute-force deformable attention used to verify the main kernel.
//!
//! Everything is spelled out with explicit loops over the raw channel-major
//! field: projections are applied per corner instead of once per field, and
//! the interpolation weights are written out per corner.

use super::deform::DeformAttn;
use super::refs::ReferencePoints;
use crate::numerics::tensor::{FeatureGrid3D, FeatureMap2D};

fn mat_vec(w: &[f64], b: &[f64], x: &[f64], dout: usize) -> Vec<f64> {
    let mut y = b.to_vec();
    for (i, xi) in x.iter().enumerate() {
        for o in 0..dout {
            y[o] += xi * w[i * dout + o];
        }
    }
    y
}

struct Heads {
    offsets: Vec<f64>,
    weights: Vec<f64>,
}

fn query_heads(p: &DeformAttn, q: &[f64]) -> Heads {
    let cfg = p.cfg;
    let offsets = mat_vec(
        &p.offset_proj.w.data,
        &p.offset_proj.b.data,
        q,
        cfg.heads * cfg.points * cfg.dim,
    );
    let logits = mat_vec(
        &p.weight_proj.w.data,
        &p.weight_proj.b.data,
        q,
        cfg.heads * cfg.points,
    );
    let mut weights = vec![0.0; logits.len()];
    for h in 0..cfg.heads {
        let row = &logits[h * cfg.points..(h + 1) * cfg.points];
        let m = row.iter().cloned().fold(f64::MIN, f64::max);
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        for k in 0..cfg.points {
            weights[h * cfg.points + k] = (row[k] - m).exp() / z;
        }
    }
    Heads { offsets, weights }
}

fn projected_value(p: &DeformAttn, raw: &[f64]) -> Vec<f64> {
    mat_vec(
        &p.value_proj.w.data,
        &p.value_proj.b.data,
        raw,
        p.cfg.embed_dim,
    )
}

fn finish(p: &DeformAttn, acc: &[f64], valid_refs: usize) -> Vec<f64> {
    let c = p.cfg.embed_dim;
    let mut y = vec![0.0; c];
    for o in 0..c {
        y[o] = valid_refs as f64 * p.output_proj.b.data[o];
        for i in 0..c {
            y[o] += acc[i] * p.output_proj.w.data[i * c + o];
        }
    }
    y
}

/// Oracle for [`super::deform_attn_2d`].
pub fn deform_attn_oracle_2d(
    q: &[f64],
    refs: &ReferencePoints,
    map: &FeatureMap2D,
    p: &DeformAttn,
) -> Vec<f64> {
    let c = p.cfg.embed_dim;
    let dh = c / p.cfg.heads;
    let n = q.len() / c;
    let mut out = Vec::with_capacity(n * c);
    let pixel = |i: i64, j: i64| -> Option<Vec<f64>> {
        if i < 0 || j < 0 || i >= map.height as i64 || j >= map.width as i64 {
            return None;
        }
        let raw: Vec<f64> = (0..map.channels)
            .map(|ch| map.at(ch, i as usize, j as usize))
            .collect();
        Some(projected_value(p, &raw))
    };
    for qi in 0..n {
        let qv = &q[qi * c..(qi + 1) * c];
        let heads = query_heads(p, qv);
        let mut acc = vec![0.0; c];
        let mut valid = 0;
        for r in 0..refs.per_query {
            if !refs.is_valid(qi, r) {
                continue;
            }
            valid += 1;
            let rl = refs.loc(qi, r);
            for h in 0..p.cfg.heads {
                for k in 0..p.cfg.points {
                    let hk = h * p.cfg.points + k;
                    let y = rl[0] + heads.offsets[hk * 2];
                    let x = rl[1] + heads.offsets[hk * 2 + 1];
                    let (y0, x0) = (y.floor(), x.floor());
                    let (ty, tx) = (y - y0, x - x0);
                    let (y0, x0) = (y0 as i64, x0 as i64);
                    let taps = [
                        (y0, x0, (1.0 - ty) * (1.0 - tx)),
                        (y0, x0 + 1, (1.0 - ty) * tx),
                        (y0 + 1, x0, ty * (1.0 - tx)),
                        (y0 + 1, x0 + 1, ty * tx),
                    ];
                    for (i, j, w) in taps {
                        if let Some(v) = pixel(i, j) {
                            for ch in 0..dh {
                                acc[h * dh + ch] += heads.weights[hk] * w * v[h * dh + ch];
                            }
                        }
                    }
                }
            }
        }
        out.extend(finish(p, &acc, valid));
    }
    out
}

/// Oracle for [`super::deform_attn_3d`].
pub fn deform_attn_oracle_3d(
    q: &[f64],
    refs: &ReferencePoints,
    grid: &FeatureGrid3D,
    p: &DeformAttn,
) -> Vec<f64> {
    let c = p.cfg.embed_dim;
    let dh = c / p.cfg.heads;
    let n = q.len() / c;
    let mut out = Vec::with_capacity(n * c);
    let voxel = |z: i64, i: i64, j: i64| -> Option<Vec<f64>> {
        if z < 0
            || i < 0
            || j < 0
            || z >= grid.depth as i64
            || i >= grid.height as i64
            || j >= grid.width as i64
        {
            return None;
        }
        let raw: Vec<f64> = (0..grid.channels)
            .map(|ch| grid.at(ch, z as usize, i as usize, j as usize))
            .collect();
        Some(projected_value(p, &raw))
    };
    for qi in 0..n {
        let qv = &q[qi * c..(qi + 1) * c];
        let heads = query_heads(p, qv);
        let mut acc = vec![0.0; c];
        let mut valid = 0;
        for r in 0..refs.per_query {
            if !refs.is_valid(qi, r) {
                continue;
            }
            valid += 1;
            let rl = refs.loc(qi, r);
            for h in 0..p.cfg.heads {
                for k in 0..p.cfg.points {
                    let hk = h * p.cfg.points + k;
                    let l: Vec<f64> = (0..3).map(|d| rl[d] + heads.offsets[hk * 3 + d]).collect();
                    let b: Vec<f64> = l.iter().map(|v| v.floor()).collect();
                    let t: Vec<f64> = l.iter().zip(&b).map(|(v, f)| v - f).collect();
                    for dz in 0..2i64 {
                        for dy in 0..2i64 {
                            for dx in 0..2i64 {
                                let wz = if dz == 1 { t[0] } else { 1.0 - t[0] };
                                let wy = if dy == 1 { t[1] } else { 1.0 - t[1] };
                                let wx = if dx == 1 { t[2] } else { 1.0 - t[2] };
                                if let Some(v) =
                                    voxel(b[0] as i64 + dz, b[1] as i64 + dy, b[2] as i64 + dx)
                                {
                                    for ch in 0..dh {
                                        acc[h * dh + ch] +=
                                            heads.weights[hk] * wz * wy * wx * v[h * dh + ch];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out.extend(finish(p, &acc, valid));
    }
    out
}
