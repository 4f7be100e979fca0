use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{LidarForm, MmfeConfig, Modality};
use super::inputs::{MmfeInputGrads, MmfeInputs, ModalField};
use super::queries::BevQueries;
use crate::attention::{DeformAttn, DeformAttnCache, DeformAttnConfig, ReferencePoints};
use crate::error::{Error, Result};
use crate::geometry::BevGrid;
use crate::numerics::module::{join, path_seed, Module};
use crate::numerics::ops::{add_assign, FeedForward, FeedForwardCache, LayerNorm, LayerNormCache};
use crate::numerics::tensor::{FeatureMap2D, Tensor};

pub(crate) fn seeded(seed: u64, path: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(path_seed(seed, path))
}

/// Number of views each query hits: a view counts when any of the query's
/// references is valid in it.
pub fn hit_counts(fields: &[ModalField], queries: usize) -> Vec<usize> {
    (0..queries)
        .map(|q| fields.iter().filter(|f| f.refs.any_valid(q)).count())
        .collect()
}

/// One modality cross-attention sublayer (pre-norm, residual added by the caller).
#[derive(Debug, Clone)]
pub struct CrossBlock {
    pub modality: Modality,
    pub norm: LayerNorm,
    pub attn: DeformAttn,
}

#[derive(Debug, Clone)]
pub struct CrossCache {
    norm: LayerNormCache,
    /// One cache per attended field (a single one for points).
    attn: Vec<DeformAttnCache>,
    /// Per-query `1 / max(|V_hit|, 1)`; all ones for points.
    scale: Vec<f64>,
}

impl CrossBlock {
    fn new(cfg: &MmfeConfig, modality: Modality, path: &str) -> Result<Self> {
        let mut rng = seeded(cfg.seed, path);
        let (dim, value_dim) = match modality {
            Modality::Points => (
                if cfg.lidar_form == LidarForm::Voxel {
                    3
                } else {
                    2
                },
                cfg.lidar_channels,
            ),
            Modality::Image => (2, cfg.image_channels),
            Modality::Depth => (3, cfg.depth_channels),
        };
        let acfg = DeformAttnConfig::new(cfg.embed_dim, cfg.heads, cfg.points, dim)
            .with_value_dim(value_dim);
        let attn = DeformAttn::new(acfg, &mut rng)?.with_ring_offsets(cfg.offset_ring);
        Ok(Self {
            modality,
            norm: LayerNorm::new(cfg.embed_dim),
            attn,
        })
    }

    fn fields<'a>(&self, inputs: &'a MmfeInputs) -> Result<&'a [ModalField]> {
        let fields: &[ModalField] = match self.modality {
            Modality::Points => inputs.lidar.as_slice(),
            Modality::Image => &inputs.image,
            Modality::Depth => &inputs.depth,
        };
        if fields.is_empty() {
            return Err(Error::Input(format!(
                "no {} features supplied and the modality is not masked",
                self.modality
            )));
        }
        Ok(fields)
    }

    /// The sublayer's residual increment for normalised queries `y`.
    pub fn increment(
        &self,
        y: &[f64],
        inputs: &MmfeInputs,
    ) -> Result<(Vec<f64>, Vec<DeformAttnCache>, Vec<f64>)> {
        let c = self.attn.cfg.embed_dim;
        let n = y.len() / c;
        let fields = self.fields(inputs)?;
        let mut total = vec![0.0; n * c];
        let mut caches = Vec::with_capacity(fields.len());
        for f in fields {
            let (out, cache) = self.attn.forward_rows(y, &f.refs, &f.dims, &f.rows)?;
            add_assign(&mut total, &out);
            caches.push(cache);
        }
        let scale: Vec<f64> = if self.modality == Modality::Points {
            vec![1.0; n]
        } else {
            hit_counts(fields, n)
                .into_iter()
                .map(|h| 1.0 / h.max(1) as f64)
                .collect()
        };
        for (q, s) in scale.iter().enumerate() {
            if *s != 1.0 {
                total[q * c..(q + 1) * c].iter_mut().for_each(|v| *v *= s);
            }
        }
        Ok((total, caches, scale))
    }

    fn forward(&self, x: &[f64], inputs: &MmfeInputs) -> Result<(Vec<f64>, CrossCache)> {
        let (y, norm) = self.norm.forward(x);
        let (d, attn, scale) = self.increment(&y, inputs)?;
        Ok((d, CrossCache { norm, attn, scale }))
    }

    /// Returns `∂L/∂x` of the sublayer input (residual path excluded).
    fn backward(&mut self, cache: &CrossCache, gd: &[f64], grads: &mut MmfeInputGrads) -> Vec<f64> {
        let c = self.attn.cfg.embed_dim;
        let mut g = gd.to_vec();
        for (q, s) in cache.scale.iter().enumerate() {
            if *s != 1.0 {
                g[q * c..(q + 1) * c].iter_mut().for_each(|v| *v *= s);
            }
        }
        let mut gy = vec![0.0; gd.len()];
        for (j, ac) in cache.attn.iter().enumerate() {
            let r = self.attn.backward(ac, &g);
            add_assign(&mut gy, &r.query);
            let slot = match self.modality {
                Modality::Points => grads.lidar.get_or_insert_with(|| vec![0.0; r.value.len()]),
                Modality::Image => &mut grads.image[j],
                Modality::Depth => &mut grads.depth[j],
            };
            if slot.is_empty() {
                *slot = r.value;
            } else {
                add_assign(slot, &r.value);
            }
        }
        self.norm.backward(&cache.norm, &gy)
    }
}

impl Module for CrossBlock {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.norm.visit_params(&join(prefix, "norm"), f);
        self.attn.visit_params(&join(prefix, "attn"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.norm.visit_params_mut(&join(prefix, "norm"), f);
        self.attn.visit_params_mut(&join(prefix, "attn"), f);
    }
}

#[derive(Debug, Clone)]
pub struct MmfeLayer {
    pub sa_norm: LayerNorm,
    pub sa: DeformAttn,
    pub cross: Vec<CrossBlock>,
    pub ffn_norm: LayerNorm,
    pub ffn: FeedForward,
}

#[derive(Debug, Clone)]
struct LayerCache {
    sa_norm: LayerNormCache,
    sa: DeformAttnCache,
    cross: Vec<(usize, CrossCache)>,
    ffn_norm: LayerNormCache,
    ffn: FeedForwardCache,
}

impl MmfeLayer {
    fn new(cfg: &MmfeConfig, prefix: &str) -> Result<Self> {
        let c = cfg.embed_dim;
        let sa_cfg = DeformAttnConfig::new(c, cfg.heads, cfg.points, 2);
        let sa = DeformAttn::new(sa_cfg, &mut seeded(cfg.seed, &join(prefix, "sa")))?;
        let cross = cfg
            .modality_order
            .iter()
            .map(|&m| CrossBlock::new(cfg, m, &join(prefix, m.name())))
            .collect::<Result<Vec<_>>>()?;
        let ffn = FeedForward::new(
            c,
            cfg.ffn_hidden,
            &mut seeded(cfg.seed, &join(prefix, "ffn")),
        );
        Ok(Self {
            sa_norm: LayerNorm::new(c),
            sa,
            cross,
            ffn_norm: LayerNorm::new(c),
            ffn,
        })
    }

    fn block(&self, m: Modality) -> Option<&CrossBlock> {
        self.cross.iter().find(|b| b.modality == m)
    }
}

impl Module for MmfeLayer {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.sa_norm.visit_params(&join(prefix, "sa_norm"), f);
        self.sa.visit_params(&join(prefix, "sa"), f);
        for b in &self.cross {
            b.visit_params(&join(prefix, b.modality.name()), f);
        }
        self.ffn_norm.visit_params(&join(prefix, "ffn_norm"), f);
        self.ffn.visit_params(&join(prefix, "ffn"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.sa_norm.visit_params_mut(&join(prefix, "sa_norm"), f);
        self.sa.visit_params_mut(&join(prefix, "sa"), f);
        for b in &mut self.cross {
            let name = b.modality.name();
            b.visit_params_mut(&join(prefix, name), f);
        }
        self.ffn_norm.visit_params_mut(&join(prefix, "ffn_norm"), f);
        self.ffn.visit_params_mut(&join(prefix, "ffn"), f);
    }
}

/// Multi-modal fusion encoder: per layer, deformable self-attention over the
/// query map, one cross-attention per active modality in the configured
/// order, then an FFN. Every sublayer is `x + f(norm(x))`.
#[derive(Debug, Clone)]
pub struct Mmfe {
    pub cfg: MmfeConfig,
    pub queries: BevQueries,
    pub layers: Vec<MmfeLayer>,
    self_refs: ReferencePoints,
}

#[derive(Debug, Clone)]
pub struct MmfeCache {
    layers: Vec<LayerCache>,
}

impl Mmfe {
    /// Weights are drawn from per-path seeds, so an encoder without a
    /// modality shares every remaining weight with one that has it.
    pub fn new(cfg: MmfeConfig, grid: &BevGrid) -> Result<Self> {
        cfg.validate()?;
        let queries = BevQueries::new(grid, cfg.embed_dim, &mut seeded(cfg.seed, "queries"))?;
        let layers = (0..cfg.num_layers)
            .map(|l| MmfeLayer::new(&cfg, &format!("layers.{l}")))
            .collect::<Result<Vec<_>>>()?;
        let self_refs = ReferencePoints::own_cells(grid.h, grid.w);
        Ok(Self {
            cfg,
            queries,
            layers,
            self_refs,
        })
    }

    pub fn grid(&self) -> &BevGrid {
        &self.queries.grid
    }

    pub fn layer_block(&self, layer: usize, m: Modality) -> Option<&CrossBlock> {
        self.layers.get(layer).and_then(|l| l.block(m))
    }

    /// Runs the encoder on position-major rows `[H·W, C]`.
    pub fn forward_rows(&self, inputs: &MmfeInputs) -> Result<(Vec<f64>, MmfeCache)> {
        let grid = self.grid();
        let dims = [grid.h, grid.w];
        let mut x = self.queries.initial();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, sa_norm) = layer.sa_norm.forward(&x);
            let (d, sa) = layer.sa.forward_rows(&y, &self.self_refs, &dims, &y)?;
            add_assign(&mut x, &d);
            let mut cross = Vec::new();
            for (i, block) in layer.cross.iter().enumerate() {
                if self.cfg.is_masked(block.modality) {
                    continue;
                }
                let (d, cc) = block.forward(&x, inputs)?;
                add_assign(&mut x, &d);
                cross.push((i, cc));
            }
            let (y, ffn_norm) = layer.ffn_norm.forward(&x);
            let (d, ffn) = layer.ffn.forward(&y);
            add_assign(&mut x, &d);
            caches.push(LayerCache {
                sa_norm,
                sa,
                cross,
                ffn_norm,
                ffn,
            });
        }
        Ok((x, MmfeCache { layers: caches }))
    }

    pub fn forward(&self, inputs: &MmfeInputs) -> Result<(FeatureMap2D, MmfeCache)> {
        let (rows, cache) = self.forward_rows(inputs)?;
        let g = self.grid();
        Ok((
            FeatureMap2D::from_rows(&rows, self.cfg.embed_dim, g.h, g.w),
            cache,
        ))
    }

    /// Accumulates parameter gradients (including the learnable queries)
    /// and returns gradients for the modality fields.
    pub fn backward(
        &mut self,
        cache: &MmfeCache,
        inputs: &MmfeInputs,
        gout: &[f64],
    ) -> MmfeInputGrads {
        let mut grads = MmfeInputGrads {
            lidar: None,
            image: vec![Vec::new(); inputs.image.len()],
            depth: vec![Vec::new(); inputs.depth.len()],
        };
        let mut gx = gout.to_vec();
        for (layer, lc) in self.layers.iter_mut().zip(&cache.layers).rev() {
            let gy = layer.ffn.backward(&lc.ffn, &gx);
            add_assign(&mut gx, &layer.ffn_norm.backward(&lc.ffn_norm, &gy));
            for (i, cc) in lc.cross.iter().rev() {
                let g = layer.cross[*i].backward(cc, &gx, &mut grads);
                add_assign(&mut gx, &g);
            }
            let r = layer.sa.backward(&lc.sa, &gx);
            let mut gy = r.query;
            add_assign(&mut gy, &r.value);
            add_assign(&mut gx, &layer.sa_norm.backward(&lc.sa_norm, &gy));
        }
        self.queries.query.accumulate_grad(&gx);
        for (slot, f) in grads.image.iter_mut().zip(&inputs.image) {
            if slot.is_empty() {
                *slot = vec![0.0; f.rows.len()];
            }
        }
        for (slot, f) in grads.depth.iter_mut().zip(&inputs.depth) {
            if slot.is_empty() {
                *slot = vec![0.0; f.rows.len()];
            }
        }
        grads
    }
}

impl Module for Mmfe {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "queries"), &self.queries.query);
        self.layers.visit_params(&join(prefix, "layers"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "queries"), &mut self.queries.query);
        self.layers.visit_params_mut(&join(prefix, "layers"), f);
    }
}

/// `mmfe_forward` entry point: the fused BEV map `[C, H, W]`.
pub fn mmfe_forward(encoder: &Mmfe, inputs: &MmfeInputs) -> Result<FeatureMap2D> {
    Ok(encoder.forward(inputs)?.0)
}
