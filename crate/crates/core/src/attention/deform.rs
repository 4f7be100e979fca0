//! Multi-head deformable attention.
//!
//! For a query `q` with reference locations `r_1..r_R` (cells of the attended
//! field), each head `h` predicts `K` sampling offsets `Δ_hk(q)` and logits
//! that are softmax-normalised over `k`. The output for one reference is
//!
//! ```text
//! W_o · concat_h Σ_k A_hk(q) · (W_v F)_h(r + Δ_hk(q)) + b_o
//! ```
//!
//! and the per-reference outputs are summed over valid references. Offsets are
//! in cells of the attended field.

use rand::Rng;

use super::refs::ReferencePoints;
use crate::error::{Error, Result};
use crate::numerics::module::{join, Module};
use crate::numerics::ops::{softmax_rows, softmax_rows_backward, Linear};
use crate::numerics::sampling::{sample_rows_backward, sample_rows_into};
use crate::numerics::tensor::{FeatureGrid3D, FeatureMap2D, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeformAttnConfig {
    pub embed_dim: usize,
    /// Channels of the attended field before the value projection.
    pub value_dim: usize,
    pub heads: usize,
    pub points: usize,
    /// 2 for maps, 3 for grids.
    pub dim: usize,
}

impl DeformAttnConfig {
    pub fn new(embed_dim: usize, heads: usize, points: usize, dim: usize) -> Self {
        Self {
            embed_dim,
            value_dim: embed_dim,
            heads,
            points,
            dim,
        }
    }

    pub fn with_value_dim(mut self, value_dim: usize) -> Self {
        self.value_dim = value_dim;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim != 2 && self.dim != 3 {
            return Err(Error::Config(format!(
                "sampling dimension must be 2 or 3, got {}",
                self.dim
            )));
        }
        if self.heads == 0 || self.points == 0 || self.embed_dim == 0 {
            return Err(Error::Config(
                "heads, points and embed_dim must be positive".into(),
            ));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} is not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }
}

#[derive(Debug, Clone)]
pub struct DeformAttn {
    pub cfg: DeformAttnConfig,
    /// `[C, heads·K·dim]`
    pub offset_proj: Linear,
    /// `[C, heads·K]`
    pub weight_proj: Linear,
    /// `[C_value, C]`
    pub value_proj: Linear,
    /// `[C, C]`
    pub output_proj: Linear,
}

#[derive(Debug, Clone)]
pub struct DeformAttnCache {
    query: Vec<f64>,
    refs: ReferencePoints,
    dims: [usize; 3],
    value_in: Vec<f64>,
    value: Vec<f64>,
    offsets: Vec<f64>,
    attn: Vec<f64>,
    summed: Vec<f64>,
    counts: Vec<f64>,
}

impl DeformAttnCache {
    /// Softmax-normalised attention weights `[N, heads·K]`.
    pub fn attention_weights(&self) -> &[f64] {
        &self.attn
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }
}

/// Gradients with respect to the inputs of one call.
#[derive(Debug, Clone)]
pub struct DeformAttnGrads {
    /// `[N, C]`
    pub query: Vec<f64>,
    /// Position-major `[P, C_value]`.
    pub value: Vec<f64>,
    /// Same layout as `ReferencePoints::locs`.
    pub refs: Vec<f64>,
}

impl DeformAttn {
    /// Zero offset and weight projections (uniform attention at the
    /// references), Xavier value/output projections.
    pub fn new(cfg: DeformAttnConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.embed_dim;
        Ok(Self {
            cfg,
            offset_proj: Linear::zeros(c, cfg.heads * cfg.points * cfg.dim),
            weight_proj: Linear::zeros(c, cfg.heads * cfg.points),
            value_proj: Linear::new(cfg.value_dim, c, rng),
            output_proj: Linear::new(c, c, rng),
        })
    }

    /// Initial offsets spread on rings around the reference: head `h` points
    /// along angle `2πh/heads` in the last two axes, point `k` at radius
    /// `(k+1)·radius/K`.
    pub fn with_ring_offsets(mut self, radius: f64) -> Self {
        let (heads, k, dim) = (self.cfg.heads, self.cfg.points, self.cfg.dim);
        for h in 0..heads {
            let ang = std::f64::consts::TAU * h as f64 / heads as f64;
            for p in 0..k {
                let r = radius * (p + 1) as f64 / k as f64;
                let base = (h * k + p) * dim;
                self.offset_proj.b.data[base + dim - 2] = r * ang.cos();
                self.offset_proj.b.data[base + dim - 1] = r * ang.sin();
            }
        }
        self
    }

    fn check(
        &self,
        q: &[f64],
        refs: &ReferencePoints,
        dims: &[usize],
        value_rows: &[f64],
    ) -> Result<usize> {
        let c = self.cfg.embed_dim;
        if q.len() % c != 0 {
            return Err(Error::Dimension(format!(
                "query length {} not a multiple of {c}",
                q.len()
            )));
        }
        let n = q.len() / c;
        if refs.dim != self.cfg.dim || dims.len() != self.cfg.dim {
            return Err(Error::Config(format!(
                "attention samples {}D but got {}D references over a {}D field",
                self.cfg.dim,
                refs.dim,
                dims.len()
            )));
        }
        if refs.num_queries() != n {
            return Err(Error::Dimension(format!(
                "{} queries but {} reference sets",
                n,
                refs.num_queries()
            )));
        }
        let p: usize = dims.iter().product();
        if value_rows.len() != p * self.cfg.value_dim {
            return Err(Error::Dimension(format!(
                "field has {} values, expected {}x{}",
                value_rows.len(),
                p,
                self.cfg.value_dim
            )));
        }
        Ok(n)
    }

    /// Attends a position-major field (`[P, C_value]` rows over `dims`).
    pub fn forward_rows(
        &self,
        q: &[f64],
        refs: &ReferencePoints,
        dims: &[usize],
        value_rows: &[f64],
    ) -> Result<(Vec<f64>, DeformAttnCache)> {
        self.check(q, refs, dims, value_rows)?;
        let out = match dims.len() {
            2 => self.forward_impl::<2>(q, refs, [dims[0], dims[1]], value_rows),
            _ => self.forward_impl::<3>(q, refs, [dims[0], dims[1], dims[2]], value_rows),
        };
        Ok(out)
    }

    pub fn forward_2d(
        &self,
        q: &[f64],
        refs: &ReferencePoints,
        map: &FeatureMap2D,
    ) -> Result<(Vec<f64>, DeformAttnCache)> {
        self.forward_rows(q, refs, &[map.height, map.width], &map.to_rows())
    }

    pub fn forward_3d(
        &self,
        q: &[f64],
        refs: &ReferencePoints,
        grid: &FeatureGrid3D,
    ) -> Result<(Vec<f64>, DeformAttnCache)> {
        self.forward_rows(q, refs, &grid.dims(), &grid.to_rows())
    }

    fn forward_impl<const D: usize>(
        &self,
        q: &[f64],
        refs: &ReferencePoints,
        dims: [usize; D],
        value_rows: &[f64],
    ) -> (Vec<f64>, DeformAttnCache) {
        let cfg = self.cfg;
        let (c, heads, k, dh) = (cfg.embed_dim, cfg.heads, cfg.points, cfg.head_dim());
        let n = q.len() / c;
        let offsets = self.offset_proj.forward(q);
        let attn = softmax_rows(&self.weight_proj.forward(q), k);
        let value = self.value_proj.forward(value_rows);
        let mut summed = vec![0.0; n * c];
        let mut counts = vec![0.0; n];
        for qi in 0..n {
            let s = &mut summed[qi * c..(qi + 1) * c];
            for r in 0..refs.per_query {
                if !refs.is_valid(qi, r) {
                    continue;
                }
                counts[qi] += 1.0;
                let rloc = refs.loc(qi, r);
                for h in 0..heads {
                    for p in 0..k {
                        let hk = h * k + p;
                        let off =
                            &offsets[(qi * heads * k + hk) * D..(qi * heads * k + hk + 1) * D];
                        let mut loc = [0.0; D];
                        for d in 0..D {
                            loc[d] = rloc[d] + off[d];
                        }
                        let a = attn[qi * heads * k + hk];
                        sample_rows_into(
                            &value,
                            c,
                            dims,
                            loc,
                            h * dh,
                            a,
                            &mut s[h * dh..(h + 1) * dh],
                        );
                    }
                }
            }
        }
        let out = self.project_out(&summed, &counts);
        let mut dims3 = [1usize; 3];
        dims3[3 - D..].copy_from_slice(&dims);
        let cache = DeformAttnCache {
            query: q.to_vec(),
            refs: refs.clone(),
            dims: dims3,
            value_in: value_rows.to_vec(),
            value,
            offsets,
            attn,
            summed,
            counts,
        };
        (out, cache)
    }

    /// `out_n = S_n·W_o + count_n·b_o`: each valid reference contributes its own bias.
    fn project_out(&self, summed: &[f64], counts: &[f64]) -> Vec<f64> {
        let c = self.cfg.embed_dim;
        let w = &self.output_proj.w.data;
        let b = &self.output_proj.b.data;
        let mut out = vec![0.0; summed.len()];
        for (qi, (srow, orow)) in summed
            .chunks_exact(c)
            .zip(out.chunks_exact_mut(c))
            .enumerate()
        {
            for (o, bv) in orow.iter_mut().zip(b) {
                *o = counts[qi] * bv;
            }
            for (i, &sv) in srow.iter().enumerate() {
                if sv == 0.0 {
                    continue;
                }
                for (o, wv) in orow.iter_mut().zip(&w[i * c..(i + 1) * c]) {
                    *o += sv * wv;
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients and returns input gradients.
    pub fn backward(&mut self, cache: &DeformAttnCache, gout: &[f64]) -> DeformAttnGrads {
        if self.cfg.dim == 2 {
            self.backward_impl::<2>(cache, gout, [cache.dims[1], cache.dims[2]])
        } else {
            self.backward_impl::<3>(cache, gout, cache.dims)
        }
    }

    fn backward_impl<const D: usize>(
        &mut self,
        cache: &DeformAttnCache,
        gout: &[f64],
        dims: [usize; D],
    ) -> DeformAttnGrads {
        let cfg = self.cfg;
        let (c, heads, k, dh) = (cfg.embed_dim, cfg.heads, cfg.points, cfg.head_dim());
        let n = cache.counts.len();
        let refs = &cache.refs;

        // output projection
        let gsummed = self.output_proj.input_grad(gout);
        {
            let gw = self.output_proj.w.grad_mut();
            for (srow, grow) in cache.summed.chunks_exact(c).zip(gout.chunks_exact(c)) {
                for (i, &sv) in srow.iter().enumerate() {
                    if sv == 0.0 {
                        continue;
                    }
                    for (g, go) in gw[i * c..(i + 1) * c].iter_mut().zip(grow) {
                        *g += sv * go;
                    }
                }
            }
        }
        {
            let gb = self.output_proj.b.grad_mut();
            for (qi, grow) in gout.chunks_exact(c).enumerate() {
                for (g, go) in gb.iter_mut().zip(grow) {
                    *g += cache.counts[qi] * go;
                }
            }
        }

        let mut gvalue = vec![0.0; cache.value.len()];
        let mut gattn = vec![0.0; cache.attn.len()];
        let mut goff = vec![0.0; cache.offsets.len()];
        let mut grefs = vec![0.0; refs.locs.len()];
        for qi in 0..n {
            let gs = &gsummed[qi * c..(qi + 1) * c];
            for r in 0..refs.per_query {
                if !refs.is_valid(qi, r) {
                    continue;
                }
                let rloc = refs.loc(qi, r);
                for h in 0..heads {
                    let gsh = &gs[h * dh..(h + 1) * dh];
                    for p in 0..k {
                        let hk = qi * heads * k + h * k + p;
                        let mut loc = [0.0; D];
                        for d in 0..D {
                            loc[d] = rloc[d] + cache.offsets[hk * D + d];
                        }
                        let a = cache.attn[hk];
                        let (gl, dot) = sample_rows_backward(
                            &cache.value,
                            &mut gvalue,
                            c,
                            dims,
                            loc,
                            h * dh,
                            a,
                            gsh,
                        );
                        gattn[hk] += dot;
                        for d in 0..D {
                            goff[hk * D + d] += gl[d];
                            grefs[(qi * refs.per_query + r) * D + d] += gl[d];
                        }
                    }
                }
            }
        }
        let glogits = softmax_rows_backward(&cache.attn, &gattn, k);
        let mut gq = self.weight_proj.backward(&cache.query, &glogits);
        let gq_off = self.offset_proj.backward(&cache.query, &goff);
        for (a, b) in gq.iter_mut().zip(&gq_off) {
            *a += b;
        }
        let gvalue_in = self.value_proj.backward(&cache.value_in, &gvalue);
        DeformAttnGrads {
            query: gq,
            value: gvalue_in,
            refs: grefs,
        }
    }
}

impl Module for DeformAttn {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.offset_proj
            .visit_params(&join(prefix, "offset_proj"), f);
        self.weight_proj
            .visit_params(&join(prefix, "weight_proj"), f);
        self.value_proj.visit_params(&join(prefix, "value_proj"), f);
        self.output_proj
            .visit_params(&join(prefix, "output_proj"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.offset_proj
            .visit_params_mut(&join(prefix, "offset_proj"), f);
        self.weight_proj
            .visit_params_mut(&join(prefix, "weight_proj"), f);
        self.value_proj
            .visit_params_mut(&join(prefix, "value_proj"), f);
        self.output_proj
            .visit_params_mut(&join(prefix, "output_proj"), f);
    }
}

/// `deform_attn_2d`: one reference per query into a `[C, H, W]` map.
pub fn deform_attn_2d(
    q: &[f64],
    refs: &ReferencePoints,
    map: &FeatureMap2D,
    params: &DeformAttn,
) -> Result<Vec<f64>> {
    if params.cfg.dim != 2 {
        return Err(Error::Config(
            "deform_attn_2d needs 2D attention parameters".into(),
        ));
    }
    Ok(params.forward_2d(q, refs, map)?.0)
}

/// `deform_attn_3d`: `N_ref` references per query into a `[C, Z, H, W]` grid,
/// per-reference outputs summed.
pub fn deform_attn_3d(
    q: &[f64],
    refs: &ReferencePoints,
    grid: &FeatureGrid3D,
    params: &DeformAttn,
) -> Result<Vec<f64>> {
    if params.cfg.dim != 3 {
        return Err(Error::Config(
            "deform_attn_3d needs 3D attention parameters".into(),
        ));
    }
    Ok(params.forward_3d(q, refs, grid)?.0)
}
