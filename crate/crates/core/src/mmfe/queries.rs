use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::BevGrid;
use crate::numerics::tensor::Tensor;

/// Sinusoidal encoding of a normalised 2D position `(u, v) ∈ [0, 1]²`.
///
/// The first half of the channels encodes `u`, the second half `v`; within a
/// half, pair `k` holds `(sin, cos)` at frequency `π·2^k`. Needs `c % 4 == 0`.
pub fn sine_position(u: f64, v: f64, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; c];
    let pairs = c / 4;
    for (axis, val) in [u, v].into_iter().enumerate() {
        for k in 0..pairs {
            let f = std::f64::consts::PI * (1u64 << k) as f64;
            let base = axis * (c / 2) + 2 * k;
            out[base] = (f * val).sin();
            out[base + 1] = (f * val).cos();
        }
    }
    out
}

/// `(∂L/∂u, ∂L/∂v)` given `∂L/∂encoding`.
pub fn sine_position_backward(u: f64, v: f64, g: &[f64]) -> (f64, f64) {
    let c = g.len();
    let pairs = c / 4;
    let mut out = [0.0; 2];
    for (axis, val) in [u, v].into_iter().enumerate() {
        for k in 0..pairs {
            let f = std::f64::consts::PI * (1u64 << k) as f64;
            let base = axis * (c / 2) + 2 * k;
            out[axis] += g[base] * f * (f * val).cos() - g[base + 1] * f * (f * val).sin();
        }
    }
    (out[0], out[1])
}

/// Learnable BEV queries, one per grid cell in row-major order, plus the
/// fixed positional encoding of each cell centre.
#[derive(Debug, Clone)]
pub struct BevQueries {
    /// `[H·W, C]`
    pub query: Tensor,
    /// `[H·W, C]`, not learned.
    pub pos_enc: Vec<f64>,
    pub grid: BevGrid,
}

impl BevQueries {
    pub fn new(grid: &BevGrid, c: usize, rng: &mut impl Rng) -> Result<Self> {
        if c == 0 || c % 4 != 0 {
            return Err(Error::Config(format!(
                "embedding width {c} must be a positive multiple of 4"
            )));
        }
        let n = grid.num_cells();
        let query = Tensor::param_uniform(&[n, c], 0.1, rng);
        let mut pos_enc = Vec::with_capacity(n * c);
        for ix in 0..grid.h {
            for iy in 0..grid.w {
                let u = (ix as f64 + 0.5) / grid.h as f64;
                let v = (iy as f64 + 0.5) / grid.w as f64;
                pos_enc.extend(sine_position(u, v, c));
            }
        }
        Ok(Self {
            query,
            pos_enc,
            grid: grid.clone(),
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.query.last_dim()
    }

    pub fn len(&self) -> usize {
        self.grid.num_cells()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Encoder input: learnable query plus positional encoding.
    pub fn initial(&self) -> Vec<f64> {
        self.query
            .data
            .iter()
            .zip(&self.pos_enc)
            .map(|(a, b)| a + b)
            .collect()
    }
}

/// `init_bev_queries` entry point.
pub fn init_bev_queries(grid: &BevGrid, c: usize, rng: &mut impl Rng) -> Result<BevQueries> {
    BevQueries::new(grid, c, rng)
}
