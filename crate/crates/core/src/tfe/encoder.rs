use crate::attention::{DeformAttn, DeformAttnCache, DeformAttnConfig, ReferencePoints};
use crate::error::{dim_err, Error, Result};
use crate::mmfe::encoder::seeded;
use crate::numerics::module::{join, Module};
use crate::numerics::ops::{add_assign, FeedForward, FeedForwardCache, LayerNorm, LayerNormCache};
use crate::numerics::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TfeConfig {
    pub num_layers: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub points: usize,
    pub ffn_hidden: usize,
    /// Frames attended including the current one.
    pub frames: usize,
    /// Divide the summed attention by the number of frames.
    pub mean: bool,
    pub offset_ring: f64,
    pub seed: u64,
}

impl TfeConfig {
    pub fn new(embed_dim: usize, frames: usize) -> Self {
        Self {
            num_layers: 3,
            embed_dim,
            heads: 4,
            points: 4,
            ffn_hidden: 4 * embed_dim,
            frames,
            mean: false,
            offset_ring: 2.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.frames == 0 {
            return Err(Error::Config(
                "temporal encoder needs at least one layer and one frame".into(),
            ));
        }
        if self.heads == 0 || self.points == 0 || self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "{} heads / {} points incompatible with width {}",
                self.heads, self.points, self.embed_dim
            )));
        }
        Ok(())
    }
}

/// Sums equal-length vectors by recursive halving. Identical terms then add
/// up to exactly `n·v` for `n` in {1, 2, 3, 4, 6, 8}.
fn pairwise_sum(parts: &[Vec<f64>]) -> Vec<f64> {
    match parts.len() {
        0 => Vec::new(),
        1 => parts[0].clone(),
        n => {
            let mut a = pairwise_sum(&parts[..n / 2]);
            add_assign(&mut a, &pairwise_sum(&parts[n / 2..]));
            a
        }
    }
}

#[derive(Debug, Clone)]
pub struct TfeLayer {
    pub norm: LayerNorm,
    pub attn: DeformAttn,
    pub ffn_norm: LayerNorm,
    pub ffn: FeedForward,
}

#[derive(Debug, Clone)]
struct LayerCache {
    norm: LayerNormCache,
    attn: Vec<DeformAttnCache>,
    ffn_norm: LayerNormCache,
    ffn: FeedForwardCache,
}

impl TfeLayer {
    fn new(cfg: &TfeConfig, prefix: &str) -> Result<Self> {
        let c = cfg.embed_dim;
        let acfg = DeformAttnConfig::new(c, cfg.heads, cfg.points, 2);
        let attn = DeformAttn::new(acfg, &mut seeded(cfg.seed, &join(prefix, "attn")))?
            .with_ring_offsets(cfg.offset_ring);
        let ffn = FeedForward::new(
            c,
            cfg.ffn_hidden,
            &mut seeded(cfg.seed, &join(prefix, "ffn")),
        );
        Ok(Self {
            norm: LayerNorm::new(c),
            attn,
            ffn_norm: LayerNorm::new(c),
            ffn,
        })
    }
}

impl Module for TfeLayer {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.norm.visit_params(&join(prefix, "norm"), f);
        self.attn.visit_params(&join(prefix, "attn"), f);
        self.ffn_norm.visit_params(&join(prefix, "ffn_norm"), f);
        self.ffn.visit_params(&join(prefix, "ffn"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.norm.visit_params_mut(&join(prefix, "norm"), f);
        self.attn.visit_params_mut(&join(prefix, "attn"), f);
        self.ffn_norm.visit_params_mut(&join(prefix, "ffn_norm"), f);
        self.ffn.visit_params_mut(&join(prefix, "ffn"), f);
    }
}

/// Temporal fusion encoder. Queries start as the current BEV rows; each layer
/// adds the deformable attention of the normalised queries summed over the
/// current map and every aligned history map (own-cell references), then an
/// FFN.
#[derive(Debug, Clone)]
pub struct Tfe {
    pub cfg: TfeConfig,
    pub layers: Vec<TfeLayer>,
    h: usize,
    w: usize,
    refs: ReferencePoints,
}

#[derive(Debug, Clone)]
pub struct TfeCache {
    layers: Vec<LayerCache>,
    frames: usize,
}

impl Tfe {
    pub fn new(cfg: TfeConfig, h: usize, w: usize) -> Result<Self> {
        cfg.validate()?;
        let layers = (0..cfg.num_layers)
            .map(|l| TfeLayer::new(&cfg, &format!("layers.{l}")))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg,
            layers,
            h,
            w,
            refs: ReferencePoints::own_cells(h, w),
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    fn check(&self, current: &[f64], history: &[Vec<f64>]) -> Result<()> {
        let n = self.h * self.w * self.cfg.embed_dim;
        if current.len() != n || history.iter().any(|m| m.len() != n) {
            return dim_err(format!(
                "temporal encoder expects {}x{}x{} rows",
                self.h, self.w, self.cfg.embed_dim
            ));
        }
        Ok(())
    }

    /// The attention term of one layer for normalised queries `y`, before
    /// the residual: the sum over `frames` (mean when configured).
    pub fn attention_term(
        &self,
        layer: usize,
        y: &[f64],
        frames: &[&[f64]],
    ) -> Result<(Vec<f64>, Vec<DeformAttnCache>)> {
        let attn = &self.layers[layer].attn;
        let mut outs = Vec::with_capacity(frames.len());
        let mut caches = Vec::with_capacity(frames.len());
        for f in frames {
            let (o, c) = attn.forward_rows(y, &self.refs, &[self.h, self.w], f)?;
            outs.push(o);
            caches.push(c);
        }
        let mut total = pairwise_sum(&outs);
        if self.cfg.mean && frames.len() > 1 {
            let s = 1.0 / frames.len() as f64;
            total.iter_mut().for_each(|v| *v *= s);
        }
        Ok((total, caches))
    }

    /// `history` holds aligned maps newest first; only the most recent
    /// `frames - 1` are attended.
    pub fn forward_rows(
        &self,
        current: &[f64],
        history: &[Vec<f64>],
    ) -> Result<(Vec<f64>, TfeCache)> {
        self.check(current, history)?;
        let mut frames: Vec<&[f64]> = vec![current];
        frames.extend(history.iter().take(self.cfg.frames - 1).map(Vec::as_slice));
        let mut x = current.to_vec();
        let mut caches = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let (y, norm) = layer.norm.forward(&x);
            let (d, attn) = self.attention_term(l, &y, &frames)?;
            add_assign(&mut x, &d);
            let (y, ffn_norm) = layer.ffn_norm.forward(&x);
            let (d, ffn) = layer.ffn.forward(&y);
            add_assign(&mut x, &d);
            caches.push(LayerCache {
                norm,
                attn,
                ffn_norm,
                ffn,
            });
        }
        Ok((
            x,
            TfeCache {
                layers: caches,
                frames: frames.len(),
            },
        ))
    }

    /// Accumulates parameter gradients and returns the gradient for the
    /// current rows. History maps are constants.
    pub fn backward(&mut self, cache: &TfeCache, gout: &[f64]) -> Vec<f64> {
        let mut gx = gout.to_vec();
        let mut gcur = vec![0.0; gout.len()];
        let scale = if self.cfg.mean && cache.frames > 1 {
            1.0 / cache.frames as f64
        } else {
            1.0
        };
        for (layer, lc) in self.layers.iter_mut().zip(&cache.layers).rev() {
            let gy = layer.ffn.backward(&lc.ffn, &gx);
            add_assign(&mut gx, &layer.ffn_norm.backward(&lc.ffn_norm, &gy));
            let gd: Vec<f64> = gx.iter().map(|v| v * scale).collect();
            let mut gy = vec![0.0; gx.len()];
            for (i, ac) in lc.attn.iter().enumerate() {
                let r = layer.attn.backward(ac, &gd);
                add_assign(&mut gy, &r.query);
                if i == 0 {
                    add_assign(&mut gcur, &r.value);
                }
            }
            add_assign(&mut gx, &layer.norm.backward(&lc.norm, &gy));
        }
        add_assign(&mut gcur, &gx);
        gcur
    }
}

impl Module for Tfe {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.layers.visit_params(&join(prefix, "layers"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.layers.visit_params_mut(&join(prefix, "layers"), f);
    }
}
