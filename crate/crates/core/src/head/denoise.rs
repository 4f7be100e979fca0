use rand::Rng;

use super::boxes::{Box3D, BOX_PARAMS};
use crate::error::{Error, Result};

/// Noise applied to ground truth when building denoising queries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DnNoise {
    /// Centre shift, uniform in `±center·(w, l)` along (x, y).
    pub center: f64,
    /// Relative size jitter, uniform in `±size`.
    pub size: f64,
}

impl Default for DnNoise {
    fn default() -> Self {
        Self {
            center: 0.5,
            size: 0.2,
        }
    }
}

/// Denoising queries appended after the matched queries. Their targets are
/// fixed by `source`; `group` separates them in self-attention.
#[derive(Debug, Clone, PartialEq)]
pub struct DnQueries {
    /// Noised centres (ego metres) used as initial references.
    pub refs: Vec<[f64; 2]>,
    pub classes: Vec<usize>,
    /// Noised box parameters, same layout as [`Box3D::to_params`].
    pub boxes: Vec<[f64; BOX_PARAMS]>,
    /// Ground-truth index each query reconstructs.
    pub source: Vec<usize>,
    /// Denoising group of each query, from 0.
    pub group: Vec<usize>,
    pub groups: usize,
    pub noise: DnNoise,
}

impl DnQueries {
    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }
}

/// One query per ground-truth box per group.
pub fn make_denoising_queries(
    gt: &[Box3D],
    noise: &DnNoise,
    groups: usize,
    rng: &mut impl Rng,
) -> Result<DnQueries> {
    if !(noise.center >= 0.0 && noise.size >= 0.0 && noise.size < 1.0) {
        return Err(Error::Config(format!(
            "denoising noise {noise:?} out of range"
        )));
    }
    let n = gt.len() * groups;
    let mut q = DnQueries {
        refs: Vec::with_capacity(n),
        classes: Vec::with_capacity(n),
        boxes: Vec::with_capacity(n),
        source: Vec::with_capacity(n),
        group: Vec::with_capacity(n),
        groups,
        noise: *noise,
    };
    let mut jitter = |scale: f64| {
        if scale > 0.0 {
            rng.gen_range(-scale..=scale)
        } else {
            0.0
        }
    };
    for g in 0..groups {
        for (i, b) in gt.iter().enumerate() {
            let mut p = b.to_params();
            p[0] += jitter(noise.center * b.size[0]);
            p[1] += jitter(noise.center * b.size[1]);
            for k in 0..3 {
                p[3 + k] += (1.0 + jitter(noise.size)).ln();
            }
            q.refs.push([p[0], p[1]]);
            q.classes.push(b.class);
            q.boxes.push(p);
            q.source.push(i);
            q.group.push(g);
        }
    }
    Ok(q)
}
