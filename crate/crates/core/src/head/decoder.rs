use rand::Rng;

use super::boxes::{Box3D, BOX_PARAMS};
use super::denoise::{DnNoise, DnQueries};
use crate::attention::{
    DeformAttn, DeformAttnCache, DeformAttnConfig, MhaCache, MultiHeadAttention, ReferencePoints,
};
use crate::error::{dim_err, Error, Result};
use crate::geometry::BevGrid;
use crate::mmfe::encoder::seeded;
use crate::mmfe::{sine_position, sine_position_backward};
use crate::numerics::module::{join, Module};
use crate::numerics::ops::{
    add_assign, relu, relu_backward, FeedForward, FeedForwardCache, LayerNorm, LayerNormCache,
    Linear,
};
use crate::numerics::tensor::{FeatureMap2D, Tensor};

/// Box features fed to the denoising content projection: `z`, log sizes and
/// the yaw pair.
const DN_FEATURES: std::ops::Range<usize> = 2..8;

#[derive(Debug, Clone, PartialEq)]
pub struct HeadConfig {
    pub num_layers: usize,
    pub num_queries: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub points: usize,
    pub ffn_hidden: usize,
    pub num_classes: usize,
    pub dn_groups: usize,
    pub dn_noise: DnNoise,
    /// Initial foreground probability of every class logit.
    pub prior_prob: f64,
    pub seed: u64,
}

impl HeadConfig {
    pub fn new(embed_dim: usize, num_classes: usize) -> Self {
        Self {
            num_layers: 3,
            num_queries: 100,
            embed_dim,
            heads: 4,
            points: 4,
            ffn_hidden: 4 * embed_dim,
            num_classes,
            dn_groups: 2,
            dn_noise: DnNoise::default(),
            prior_prob: 0.01,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.num_queries == 0 || self.num_classes == 0 {
            return Err(Error::Config(
                "head needs layers, queries and classes".into(),
            ));
        }
        if self.embed_dim == 0
            || self.embed_dim % 4 != 0
            || self.embed_dim % self.heads.max(1) != 0
            || self.heads == 0
            || self.points == 0
        {
            return Err(Error::Config(format!(
                "head width {} must be a multiple of 4 and of {} heads",
                self.embed_dim, self.heads
            )));
        }
        if !(self.prior_prob > 0.0 && self.prior_prob < 1.0) {
            return Err(Error::Config(format!(
                "prior probability {} outside (0, 1)",
                self.prior_prob
            )));
        }
        Ok(())
    }
}

/// Learnable object queries: content vectors and BEV reference points (ego
/// metres).
#[derive(Debug, Clone)]
pub struct ObjectQuerySet {
    /// `[N_q, C]`
    pub content: Tensor,
    /// `[N_q, 2]`
    pub refs: Tensor,
}

impl ObjectQuerySet {
    /// References on a regular lattice over the grid's ROI.
    pub fn lattice(n: usize, c: usize, grid: &BevGrid, rng: &mut impl Rng) -> Self {
        let side = (n as f64).sqrt().ceil() as usize;
        let [x0, x1, y0, y1] = grid.roi;
        let mut refs = Vec::with_capacity(2 * n);
        for q in 0..n {
            let (i, j) = (q / side, q % side);
            refs.push(x0 + (i as f64 + 0.5) / side as f64 * (x1 - x0));
            refs.push(y0 + (j as f64 + 0.5) / side as f64 * (y1 - y0));
        }
        Self {
            content: Tensor::param_uniform(&[n, c], 0.1, rng),
            refs: Tensor::param(&[n, 2], refs).expect("reference layout"),
        }
    }

    pub fn len(&self) -> usize {
        self.content.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct DecoderLayer {
    pub sa_norm: LayerNorm,
    pub sa: MultiHeadAttention,
    pub ca_norm: LayerNorm,
    pub ca: DeformAttn,
    pub ffn_norm: LayerNorm,
    pub ffn: FeedForward,
    pub out_norm: LayerNorm,
    pub reg_hidden: Linear,
    pub reg_out: Linear,
    pub cls: Linear,
}

impl DecoderLayer {
    fn new(cfg: &HeadConfig, prefix: &str) -> Result<Self> {
        let c = cfg.embed_dim;
        let sa = MultiHeadAttention::new(c, cfg.heads, &mut seeded(cfg.seed, &join(prefix, "sa")))?;
        let acfg = DeformAttnConfig::new(c, cfg.heads, cfg.points, 2);
        let ca = DeformAttn::new(acfg, &mut seeded(cfg.seed, &join(prefix, "ca")))?
            .with_ring_offsets(1.0);
        let ffn = FeedForward::new(
            c,
            cfg.ffn_hidden,
            &mut seeded(cfg.seed, &join(prefix, "ffn")),
        );
        let reg_hidden = Linear::new(c, c, &mut seeded(cfg.seed, &join(prefix, "reg_hidden")));
        let mut cls = Linear::new(
            c,
            cfg.num_classes,
            &mut seeded(cfg.seed, &join(prefix, "cls")),
        );
        cls.b
            .data
            .fill(-((1.0 - cfg.prior_prob) / cfg.prior_prob).ln());
        Ok(Self {
            sa_norm: LayerNorm::new(c),
            sa,
            ca_norm: LayerNorm::new(c),
            ca,
            ffn_norm: LayerNorm::new(c),
            ffn,
            out_norm: LayerNorm::new(c),
            reg_hidden,
            reg_out: Linear::zeros(c, BOX_PARAMS),
            cls,
        })
    }
}

impl Module for DecoderLayer {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.sa_norm.visit_params(&join(prefix, "sa_norm"), f);
        self.sa.visit_params(&join(prefix, "sa"), f);
        self.ca_norm.visit_params(&join(prefix, "ca_norm"), f);
        self.ca.visit_params(&join(prefix, "ca"), f);
        self.ffn_norm.visit_params(&join(prefix, "ffn_norm"), f);
        self.ffn.visit_params(&join(prefix, "ffn"), f);
        self.out_norm.visit_params(&join(prefix, "out_norm"), f);
        self.reg_hidden.visit_params(&join(prefix, "reg_hidden"), f);
        self.reg_out.visit_params(&join(prefix, "reg_out"), f);
        self.cls.visit_params(&join(prefix, "cls"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.sa_norm.visit_params_mut(&join(prefix, "sa_norm"), f);
        self.sa.visit_params_mut(&join(prefix, "sa"), f);
        self.ca_norm.visit_params_mut(&join(prefix, "ca_norm"), f);
        self.ca.visit_params_mut(&join(prefix, "ca"), f);
        self.ffn_norm.visit_params_mut(&join(prefix, "ffn_norm"), f);
        self.ffn.visit_params_mut(&join(prefix, "ffn"), f);
        self.out_norm.visit_params_mut(&join(prefix, "out_norm"), f);
        self.reg_hidden
            .visit_params_mut(&join(prefix, "reg_hidden"), f);
        self.reg_out.visit_params_mut(&join(prefix, "reg_out"), f);
        self.cls.visit_params_mut(&join(prefix, "cls"), f);
    }
}

/// Predictions of one decoder layer for every query (matched first, then
/// denoising).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerOutput {
    /// `[N, classes]`
    pub logits: Vec<f64>,
    /// `[N, BOX_PARAMS]` with absolute centres.
    pub boxes: Vec<f64>,
}

impl LayerOutput {
    pub fn zeros_like(other: &LayerOutput) -> Self {
        Self {
            logits: vec![0.0; other.logits.len()],
            boxes: vec![0.0; other.boxes.len()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    pub layers: Vec<LayerOutput>,
    pub num_queries: usize,
    pub num_dn: usize,
    pub num_classes: usize,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl HeadOutput {
    pub fn last(&self) -> &LayerOutput {
        self.layers.last().expect("head has at least one layer")
    }

    /// Boxes of the matched queries of `layer`, best first, at most `max`.
    /// Class is the arg-max logit and score its sigmoid.
    pub fn decode(&self, layer: usize, max: usize) -> Vec<Box3D> {
        let out = &self.layers[layer];
        let k = self.num_classes;
        let mut boxes: Vec<Box3D> = (0..self.num_queries)
            .map(|q| {
                let logits = &out.logits[q * k..(q + 1) * k];
                let (class, z) =
                    logits
                        .iter()
                        .enumerate()
                        .fold(
                            (0, f64::NEG_INFINITY),
                            |a, (i, &v)| if v > a.1 { (i, v) } else { a },
                        );
                Box3D::from_params(
                    &out.boxes[q * BOX_PARAMS..(q + 1) * BOX_PARAMS],
                    class,
                    sigmoid(z),
                )
            })
            .collect();
        boxes.sort_by(|a, b| b.score.total_cmp(&a.score));
        boxes.truncate(max);
        boxes
    }

    pub fn decode_last(&self, max: usize) -> Vec<Box3D> {
        self.decode(self.layers.len() - 1, max)
    }
}

#[derive(Debug, Clone)]
struct LayerCache {
    refs: Vec<f64>,
    sa_norm: LayerNormCache,
    sa: MhaCache,
    ca_norm: LayerNormCache,
    ca: DeformAttnCache,
    ffn_norm: LayerNormCache,
    ffn: FeedForwardCache,
    out_norm: LayerNormCache,
    z: Vec<f64>,
    pre: Vec<f64>,
    hidden: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    layers: Vec<LayerCache>,
    dn_classes: Vec<usize>,
    dn_features: Vec<f64>,
}

/// Deformable-DETR style decoder over a BEV map. Per layer: positional
/// encoding of the current references is added to the queries, then
/// group-masked self-attention, deformable cross-attention at the
/// references, FFN (all pre-norm), and prediction heads. The predicted
/// centres become the next layer's references.
#[derive(Debug, Clone)]
pub struct DetectionHead {
    pub cfg: HeadConfig,
    pub grid: BevGrid,
    pub queries: ObjectQuerySet,
    /// `[classes, C]`
    pub label_embed: Tensor,
    pub dn_box: Linear,
    pub layers: Vec<DecoderLayer>,
}

impl DetectionHead {
    pub fn new(cfg: HeadConfig, grid: &BevGrid) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.embed_dim;
        let queries =
            ObjectQuerySet::lattice(cfg.num_queries, c, grid, &mut seeded(cfg.seed, "queries"));
        let label_embed = Tensor::param_uniform(
            &[cfg.num_classes, c],
            0.1,
            &mut seeded(cfg.seed, "label_embed"),
        );
        let dn_box = Linear::new(DN_FEATURES.len(), c, &mut seeded(cfg.seed, "dn_box"));
        let layers = (0..cfg.num_layers)
            .map(|l| DecoderLayer::new(&cfg, &format!("layers.{l}")))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg,
            grid: grid.clone(),
            queries,
            label_embed,
            dn_box,
            layers,
        })
    }

    fn extent(&self) -> (f64, f64) {
        let [x0, x1, y0, y1] = self.grid.roi;
        (x1 - x0, y1 - y0)
    }

    fn position_encoding(&self, refs: &[f64]) -> Vec<f64> {
        let [x0, _, y0, _] = self.grid.roi;
        let (ex, ey) = self.extent();
        refs.chunks_exact(2)
            .flat_map(|r| sine_position((r[0] - x0) / ex, (r[1] - y0) / ey, self.cfg.embed_dim))
            .collect()
    }

    fn position_encoding_backward(&self, refs: &[f64], g: &[f64], gref: &mut [f64]) {
        let [x0, _, y0, _] = self.grid.roi;
        let (ex, ey) = self.extent();
        let c = self.cfg.embed_dim;
        for (q, r) in refs.chunks_exact(2).enumerate() {
            let (gu, gv) =
                sine_position_backward((r[0] - x0) / ex, (r[1] - y0) / ey, &g[q * c..(q + 1) * c]);
            gref[2 * q] += gu / ex;
            gref[2 * q + 1] += gv / ey;
        }
    }

    fn sample_refs(&self, refs: &[f64]) -> Result<ReferencePoints> {
        let locs = refs
            .chunks_exact(2)
            .flat_map(|r| {
                let (row, col) = self.grid.continuous_cell(r[0], r[1]);
                [row - 0.5, col - 0.5]
            })
            .collect();
        ReferencePoints::single(2, locs)
    }

    /// Runs every decoder layer; denoising queries, when given, follow the
    /// learned ones and are isolated from them in self-attention.
    pub fn forward(
        &self,
        bev: &FeatureMap2D,
        dn: Option<&DnQueries>,
    ) -> Result<(HeadOutput, HeadCache)> {
        let c = self.cfg.embed_dim;
        let k = self.cfg.num_classes;
        if bev.channels != c || bev.height != self.grid.h || bev.width != self.grid.w {
            return dim_err(format!(
                "head expects a {c}x{}x{} BEV map, got {}x{}x{}",
                self.grid.h, self.grid.w, bev.channels, bev.height, bev.width
            ));
        }
        let nq = self.queries.len();
        let mut x = self.queries.content.data.clone();
        let mut refs = self.queries.refs.data.clone();
        let mut groups = vec![0usize; nq];
        let mut dn_classes = Vec::new();
        let mut dn_features = Vec::new();
        if let Some(dn) = dn {
            if let Some(bad) = dn.classes.iter().find(|&&cl| cl >= k) {
                return Err(Error::Input(format!("denoising class {bad} out of range")));
            }
            for (i, b) in dn.boxes.iter().enumerate() {
                dn_features.extend_from_slice(&b[DN_FEATURES]);
                refs.extend_from_slice(&dn.refs[i]);
                groups.push(1 + dn.group[i]);
            }
            let proj = self.dn_box.forward(&dn_features);
            for (i, &cl) in dn.classes.iter().enumerate() {
                let row = &self.label_embed.data[cl * c..(cl + 1) * c];
                x.extend(
                    row.iter()
                        .zip(&proj[i * c..(i + 1) * c])
                        .map(|(a, b)| a + b),
                );
            }
            dn_classes = dn.classes.clone();
        }
        let n = groups.len();
        let bev_rows = bev.to_rows();
        let dims = [self.grid.h, self.grid.w];
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            add_assign(&mut x, &self.position_encoding(&refs));
            let (y, sa_norm) = layer.sa_norm.forward(&x);
            let (d, sa) = layer.sa.forward(&y, &y, &y, &groups);
            add_assign(&mut x, &d);
            let (y, ca_norm) = layer.ca_norm.forward(&x);
            let (d, ca) = layer
                .ca
                .forward_rows(&y, &self.sample_refs(&refs)?, &dims, &bev_rows)?;
            add_assign(&mut x, &d);
            let (y, ffn_norm) = layer.ffn_norm.forward(&x);
            let (d, ffn) = layer.ffn.forward(&y);
            add_assign(&mut x, &d);
            let (z, out_norm) = layer.out_norm.forward(&x);
            let pre = layer.reg_hidden.forward(&z);
            let hidden = relu(&pre);
            let mut boxes = layer.reg_out.forward(&hidden);
            let logits = layer.cls.forward(&z);
            for q in 0..n {
                boxes[q * BOX_PARAMS] += refs[2 * q];
                boxes[q * BOX_PARAMS + 1] += refs[2 * q + 1];
            }
            let next: Vec<f64> = boxes
                .chunks_exact(BOX_PARAMS)
                .flat_map(|b| [b[0], b[1]])
                .collect();
            caches.push(LayerCache {
                refs: std::mem::replace(&mut refs, next),
                sa_norm,
                sa,
                ca_norm,
                ca,
                ffn_norm,
                ffn,
                out_norm,
                z,
                pre,
                hidden,
            });
            outputs.push(LayerOutput { logits, boxes });
        }
        let out = HeadOutput {
            layers: outputs,
            num_queries: nq,
            num_dn: n - nq,
            num_classes: self.cfg.num_classes,
        };
        Ok((
            out,
            HeadCache {
                layers: caches,
                dn_classes,
                dn_features,
            },
        ))
    }

    /// Accumulates parameter gradients from per-layer output gradients and
    /// returns the gradient of the BEV map as position-major rows.
    pub fn backward(&mut self, cache: &HeadCache, grads: &[LayerOutput]) -> Vec<f64> {
        let c = self.cfg.embed_dim;
        let n = cache.layers[0].refs.len() / 2;
        let nq = self.queries.len();
        let cs = self.grid.cell_size();
        let mut gbev = vec![0.0; self.grid.num_cells() * c];
        let mut gx = vec![0.0; n * c];
        let mut gref_next = vec![0.0; 2 * n];
        for l in (0..self.layers.len()).rev() {
            let lc = &cache.layers[l];
            let mut gboxes = grads[l].boxes.clone();
            for q in 0..n {
                gboxes[q * BOX_PARAMS] += gref_next[2 * q];
                gboxes[q * BOX_PARAMS + 1] += gref_next[2 * q + 1];
            }
            let mut gref: Vec<f64> = gboxes
                .chunks_exact(BOX_PARAMS)
                .flat_map(|b| [b[0], b[1]])
                .collect();
            let layer = &mut self.layers[l];
            let gh = layer.reg_out.backward(&lc.hidden, &gboxes);
            let gpre = relu_backward(&lc.pre, &gh);
            let mut gz = layer.reg_hidden.backward(&lc.z, &gpre);
            add_assign(&mut gz, &layer.cls.backward(&lc.z, &grads[l].logits));
            add_assign(&mut gx, &layer.out_norm.backward(&lc.out_norm, &gz));
            let gy = layer.ffn.backward(&lc.ffn, &gx);
            add_assign(&mut gx, &layer.ffn_norm.backward(&lc.ffn_norm, &gy));
            let r = layer.ca.backward(&lc.ca, &gx);
            add_assign(&mut gbev, &r.value);
            for (g, gr) in gref.iter_mut().zip(&r.refs) {
                *g += gr / cs;
            }
            add_assign(&mut gx, &layer.ca_norm.backward(&lc.ca_norm, &r.query));
            let (gq, gk, gv) = layer.sa.backward(&lc.sa, &gx);
            let mut gy = gq;
            add_assign(&mut gy, &gk);
            add_assign(&mut gy, &gv);
            add_assign(&mut gx, &layer.sa_norm.backward(&lc.sa_norm, &gy));
            self.position_encoding_backward(&lc.refs, &gx, &mut gref);
            gref_next = gref;
        }
        self.queries.content.accumulate_grad(&gx[..nq * c]);
        self.queries.refs.accumulate_grad(&gref_next[..nq * 2]);
        if !cache.dn_classes.is_empty() {
            let gdn = &gx[nq * c..];
            let mut glabel = vec![0.0; self.label_embed.len()];
            for (i, &cl) in cache.dn_classes.iter().enumerate() {
                add_assign(&mut glabel[cl * c..(cl + 1) * c], &gdn[i * c..(i + 1) * c]);
            }
            self.label_embed.accumulate_grad(&glabel);
            self.dn_box.accumulate(&cache.dn_features, gdn);
        }
        gbev
    }
}

impl Module for DetectionHead {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "queries.content"), &self.queries.content);
        f(&join(prefix, "queries.refs"), &self.queries.refs);
        f(&join(prefix, "label_embed"), &self.label_embed);
        self.dn_box.visit_params(&join(prefix, "dn_box"), f);
        self.layers.visit_params(&join(prefix, "layers"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "queries.content"), &mut self.queries.content);
        f(&join(prefix, "queries.refs"), &mut self.queries.refs);
        f(&join(prefix, "label_embed"), &mut self.label_embed);
        self.dn_box.visit_params_mut(&join(prefix, "dn_box"), f);
        self.layers.visit_params_mut(&join(prefix, "layers"), f);
    }
}

/// `head_forward` entry point: per-layer predictions for the learned
/// queries plus any denoising queries.
pub fn head_forward(
    bev: &FeatureMap2D,
    head: &DetectionHead,
    dn: Option<&DnQueries>,
) -> Result<HeadOutput> {
    Ok(head.forward(bev, dn)?.0)
}
