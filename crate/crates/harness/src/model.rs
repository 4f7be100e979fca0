//! The end-to-end detector: LiDAR and camera branches, a BEV fusion stage
//! (the fusion encoder or an add/concat baseline), optional temporal fusion
//! and the set-prediction head.

use bevfuse_core::attention::ReferencePoints;
use bevfuse_core::branches::{
    voxelize, BevCompressor, DepthBranch, DepthBranchCache, ImageBackbone, ImageBackboneCache,
    LidarEncoder, LidarEncoderCache, RAW_VOXEL_CHANNELS,
};
use bevfuse_core::geometry::{
    align_history_bev, camera_refs, frustum_refs, lidar_bev_refs, uniform_anchors, voxel_refs,
    BevGrid, CameraRig, DepthBinSpec, EgoPose, LidarFrame,
};
use bevfuse_core::head::{
    detection_loss, make_denoising_queries, match_all, Box3D, DetectionHead, HeadCache, HeadConfig,
    HeadOutput, LayerOutput, LossBreakdown, LossConfig,
};
use bevfuse_core::mmfe::{
    parse_modalities, LidarForm, Mmfe, MmfeCache, MmfeConfig, MmfeInputs, ModalField, Modality,
};
use bevfuse_core::numerics::gradcheck::{
    finite_difference_check, GradCheckOptions, GradCheckReport,
};
use bevfuse_core::numerics::module::join;
use bevfuse_core::numerics::{Conv3d, FeatureGrid3D, FeatureMap2D, Module, Tensor};
use bevfuse_core::tfe::{TemporalCache, TemporalFusion, TfeConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::scene::{Scene, IMAGE_CHANNELS};

/// Per-component RNG derived from the model seed and a name.
fn component_rng(seed: u64, name: &str) -> ChaCha8Rng {
    // FNV-1a, stable across toolchains
    let h = name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    });
    ChaCha8Rng::seed_from_u64(seed ^ h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMethod {
    /// Deformable cross-attention into every modality.
    Mmfe,
    /// Camera-only encoder, then `conv(lidar_bev + camera_bev)`.
    Add,
    /// Camera-only encoder, then `conv(concat[lidar_bev, camera_bev])`.
    Concat,
}

impl FusionMethod {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mmfe" => Ok(Self::Mmfe),
            "add" => Ok(Self::Add),
            "concat" => Ok(Self::Concat),
            other => Err(HarnessError::Config(format!(
                "unknown fusion method '{other}'"
            ))),
        }
    }
}

/// Sensor data of one frame, ready for the network.
#[derive(Debug, Clone)]
pub struct SensorInput {
    /// Raw voxel encoding `[4, Z, H_v, W_v]`.
    pub voxels: FeatureGrid3D,
    pub images: Vec<FeatureMap2D>,
}

/// A scene reduced to what training and evaluation consume.
#[derive(Debug, Clone)]
pub struct Sample {
    /// Oldest first; the last entry is the key frame.
    pub frames: Vec<SensorInput>,
    pub poses: Vec<EgoPose>,
    pub gt: Vec<Box3D>,
}

pub fn lidar_frame(
    cfg: &ExperimentConfig,
    scene_mount: &bevfuse_core::geometry::Rigid,
) -> Result<LidarFrame> {
    Ok(LidarFrame::centered(
        *scene_mount,
        cfg.lidar.voxel_size,
        cfg.voxel_hw(),
        (cfg.lidar.z_range[0], cfg.lidar.z_range[1]),
    )?)
}

/// Voxelises every frame of `scene`.
pub fn prepare(scene: &Scene, lidar: &LidarFrame) -> Sample {
    Sample {
        frames: scene
            .frames
            .iter()
            .map(|f| SensorInput {
                voxels: voxelize(&f.points, lidar).0,
                images: f.images.clone(),
            })
            .collect(),
        poses: scene.frames.iter().map(|f| f.pose.clone()).collect(),
        gt: scene.gt().to_vec(),
    }
}

pub fn bev_grid(cfg: &ExperimentConfig) -> Result<BevGrid> {
    let g = &cfg.grid;
    let e = g.half_extent;
    Ok(BevGrid::new(
        g.size,
        g.size,
        [-e, e, -e, e],
        uniform_anchors(g.n_ref, g.z_min, g.z_max),
    )?)
}

#[derive(Debug, Clone)]
struct FieldRefs {
    lidar: ReferencePoints,
    cameras: Vec<ReferencePoints>,
    frustums: Vec<ReferencePoints>,
}

#[derive(Debug, Clone)]
pub struct FusionDetector {
    pub grid: BevGrid,
    pub lidar: LidarFrame,
    pub rig: CameraRig,
    pub fusion: FusionMethod,
    pub lidar_form: LidarForm,
    pub lidar_encoder: LidarEncoder,
    pub compressor: Option<BevCompressor>,
    pub backbone: ImageBackbone,
    pub depth: Option<DepthBranch>,
    pub encoder: Mmfe,
    /// Add/concat baselines only.
    pub fuse: Option<Conv3d>,
    pub temporal: Option<TemporalFusion>,
    pub head: DetectionHead,
    refs: FieldRefs,
    image_level: usize,
    use_points: bool,
    use_image: bool,
    use_depth: bool,
}

#[derive(Debug, Clone)]
struct FrameCache {
    lidar: Option<(LidarEncoderCache, FeatureGrid3D)>,
    /// Folded voxels and the compressed map, when the BEV compressor ran.
    compress: Option<(FeatureMap2D, FeatureMap2D)>,
    images: Vec<ImageBackboneCache>,
    depth: Vec<DepthBranchCache>,
    inputs: MmfeInputs,
    mmfe: MmfeCache,
    fuse_in: Option<FeatureMap2D>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    frame: FrameCache,
    temporal: Option<TemporalCache>,
    head: HeadCache,
}

impl FusionDetector {
    pub fn new(cfg: &ExperimentConfig, rig: &CameraRig, lidar: LidarFrame) -> Result<Self> {
        cfg.validate()?;
        let grid = bev_grid(cfg)?;
        let seed = cfg.seed;
        let c = cfg.model.embed_dim;
        let fusion = FusionMethod::parse(&cfg.model.fusion)?;
        let lidar_form = cfg.lidar.form.parse::<LidarForm>()?;
        let order = parse_modalities(&cfg.model.order)?;
        let mut mask = parse_modalities(&cfg.model.mask)?;
        let use_depth = order.contains(&Modality::Depth) && !mask.contains(&Modality::Depth);
        if use_depth && cfg.camera.depth_bins == 0 {
            return Err(HarnessError::Config(
                "depth modality requested but camera.depth_bins is 0".into(),
            ));
        }
        if fusion != FusionMethod::Mmfe && !mask.contains(&Modality::Points) {
            // the baselines bring LiDAR in after a camera-only encoder
            mask.push(Modality::Points);
        }
        let use_points = order.contains(&Modality::Points) && !mask.contains(&Modality::Points);
        let use_image = order.contains(&Modality::Image) && !mask.contains(&Modality::Image);

        let lc = cfg.lidar.channels;
        let lidar_encoder = LidarEncoder::new(
            &[RAW_VOXEL_CHANNELS, lc, lc],
            1,
            &mut component_rng(seed, "lidar_encoder"),
        )?;
        let zdim = lidar.dims[0];
        let bev_needed = lidar_form == LidarForm::Bev || fusion != FusionMethod::Mmfe;
        let lidar_map_channels = if fusion == FusionMethod::Mmfe { lc } else { c };
        let compressor = bev_needed.then(|| {
            BevCompressor::new(
                lc,
                zdim,
                lidar_map_channels,
                &mut component_rng(seed, "compressor"),
            )
        });
        if fusion != FusionMethod::Mmfe && (lidar.dims[1] != grid.h || lidar.dims[2] != grid.w) {
            return Err(HarnessError::Config(format!(
                "add/concat fusion needs the voxel grid ({}x{}) to match the BEV grid ({}x{})",
                lidar.dims[1], lidar.dims[2], grid.h, grid.w
            )));
        }
        let ic = cfg.camera.channels;
        let backbone = ImageBackbone::new(
            IMAGE_CHANNELS,
            ic,
            cfg.camera.levels,
            &mut component_rng(seed, "backbone"),
        )?;
        let image_level = cfg.camera.levels - 1;
        let stride = 2f64.powi(cfg.camera.levels as i32);
        let bins = if cfg.camera.depth_bins > 0 {
            Some(DepthBinSpec::uniform(
                cfg.camera.depth_bins,
                cfg.camera.depth_range[0],
                cfg.camera.depth_range[1],
            )?)
        } else {
            None
        };
        let depth = match (&bins, use_depth) {
            (Some(b), true) => Some(DepthBranch::new(
                ic,
                ic,
                b.clone(),
                &mut component_rng(seed, "depth"),
            )),
            _ => None,
        };

        let mcfg = MmfeConfig {
            num_layers: cfg.model.layers,
            heads: cfg.model.heads,
            points: cfg.model.points,
            modality_order: order,
            modality_mask: mask,
            lidar_form,
            depth_channels: ic,
            image_level,
            seed: seed ^ 0x4D4D_4645,
            ..MmfeConfig::new(c, lidar_map_channels, ic)
        };
        let encoder = Mmfe::new(mcfg, &grid)?;
        let fuse = match fusion {
            FusionMethod::Mmfe => None,
            FusionMethod::Add => Some(Conv3d::new_2d(c, c, 3, 1, &mut component_rng(seed, "fuse"))),
            FusionMethod::Concat => Some(Conv3d::new_2d(
                2 * c,
                c,
                3,
                1,
                &mut component_rng(seed, "fuse"),
            )),
        };
        let temporal = if cfg.temporal.frames > 1 {
            let tcfg = TfeConfig {
                num_layers: cfg.temporal.layers,
                heads: cfg.model.heads,
                points: cfg.model.points,
                mean: cfg.temporal.mean,
                seed: seed ^ 0x0054_4645,
                ..TfeConfig::new(c, cfg.temporal.frames)
            };
            Some(match cfg.temporal.fuser.as_str() {
                "concat" => TemporalFusion::concat(&tcfg, &grid)?,
                _ => TemporalFusion::attention(tcfg, &grid)?,
            })
        } else {
            None
        };
        let hcfg = HeadConfig {
            num_layers: cfg.head.layers,
            num_queries: cfg.head.queries,
            heads: cfg.model.heads,
            points: cfg.model.points,
            dn_groups: cfg.head.dn_groups,
            seed: seed ^ 0x4845_4144,
            ..HeadConfig::new(c, cfg.head.num_classes)
        };
        let head = DetectionHead::new(hcfg, &grid)?;

        let lidar_refs = if lidar_form == LidarForm::Voxel {
            voxel_refs(&grid, &lidar)
        } else {
            lidar_bev_refs(&grid, &lidar, (lidar.dims[1], lidar.dims[2]))
        };
        let cameras = (0..rig.len())
            .map(|j| camera_refs(&grid, rig, j, stride))
            .collect::<bevfuse_core::Result<Vec<_>>>()?;
        let frustums = match &bins {
            Some(b) if use_depth => (0..rig.len())
                .map(|j| frustum_refs(&grid, rig, j, stride, b))
                .collect::<bevfuse_core::Result<Vec<_>>>()?,
            _ => Vec::new(),
        };
        Ok(Self {
            grid,
            lidar,
            rig: rig.clone(),
            fusion,
            lidar_form,
            lidar_encoder,
            compressor,
            backbone,
            depth,
            encoder,
            fuse,
            temporal,
            head,
            refs: FieldRefs {
                lidar: lidar_refs,
                cameras,
                frustums,
            },
            image_level,
            use_points,
            use_image,
            use_depth,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.encoder.cfg.embed_dim
    }

    pub fn frames(&self) -> usize {
        self.temporal.as_ref().map_or(1, TemporalFusion::frames)
    }

    fn lidar_used(&self) -> bool {
        self.use_points || self.fusion != FusionMethod::Mmfe
    }

    /// BEV rows of one frame before temporal fusion.
    fn encode(&self, inp: &SensorInput) -> Result<(Vec<f64>, FrameCache)> {
        let mut inputs = MmfeInputs::default();
        let mut lidar_cache = None;
        let mut compress = None;
        let mut lidar_map = None;
        if self.lidar_used() {
            let (vf, lcache) = self.lidar_encoder.forward(&inp.voxels)?;
            if let Some(comp) = &self.compressor {
                let (map, folded) = comp.forward(&vf)?;
                if self.use_points {
                    inputs.lidar = Some(ModalField::from_map(&map, self.refs.lidar.clone()));
                }
                lidar_map = Some(map.clone());
                compress = Some((folded, map));
            } else {
                inputs.lidar = Some(ModalField::from_grid(&vf, self.refs.lidar.clone()));
            }
            lidar_cache = Some((lcache, vf));
        }
        let mut images = Vec::new();
        let mut depth = Vec::new();
        if self.use_image || self.use_depth {
            if inp.images.len() != self.rig.len() {
                return Err(HarnessError::Data(format!(
                    "{} images for {} cameras",
                    inp.images.len(),
                    self.rig.len()
                )));
            }
            for (j, img) in inp.images.iter().enumerate() {
                let (feats, cache) = self.backbone.forward(img)?;
                let level = &feats.levels[self.image_level];
                if self.use_image {
                    inputs
                        .image
                        .push(ModalField::from_map(level, self.refs.cameras[j].clone()));
                }
                if let Some(d) = &self.depth {
                    let (df, dc) = d.forward(level)?;
                    inputs.depth.push(ModalField::from_grid(
                        &df.grid,
                        self.refs.frustums[j].clone(),
                    ));
                    depth.push(dc);
                }
                images.push(cache);
            }
        }
        let (rows, mmfe) = self.encoder.forward_rows(&inputs)?;
        let (out, fuse_in) = match (&self.fuse, lidar_map) {
            (Some(conv), Some(lmap)) => {
                let (h, w) = (self.grid.h, self.grid.w);
                let cam = FeatureMap2D::from_rows(&rows, self.embed_dim(), h, w);
                let x = match self.fusion {
                    FusionMethod::Add => FeatureMap2D {
                        data: lmap
                            .data
                            .iter()
                            .zip(&cam.data)
                            .map(|(a, b)| a + b)
                            .collect(),
                        ..cam
                    },
                    _ => {
                        let mut data = lmap.data.clone();
                        data.extend_from_slice(&cam.data);
                        FeatureMap2D::new(2 * self.embed_dim(), h, w, data)?
                    }
                };
                (conv.forward_2d(&x).to_rows(), Some(x))
            }
            _ => (rows, None),
        };
        Ok((
            out,
            FrameCache {
                lidar: lidar_cache,
                compress,
                images,
                depth,
                inputs,
                mmfe,
                fuse_in,
            },
        ))
    }

    fn encode_backward(&mut self, cache: &FrameCache, g_rows: &[f64]) -> Result<()> {
        let (c, h, w) = (self.embed_dim(), self.grid.h, self.grid.w);
        let mut g_lidar_map: Option<FeatureMap2D> = None;
        let g_enc = match (&mut self.fuse, &cache.fuse_in) {
            (Some(conv), Some(x)) => {
                let gy = FeatureMap2D::from_rows(g_rows, c, h, w);
                let gx = conv.backward_2d(x, &gy);
                let n = c * h * w;
                let (gl, gc) = match self.fusion {
                    FusionMethod::Add => (gx.data.clone(), gx.data),
                    _ => (gx.data[..n].to_vec(), gx.data[n..].to_vec()),
                };
                g_lidar_map = Some(FeatureMap2D::new(c, h, w, gl)?);
                FeatureMap2D::new(c, h, w, gc)?.to_rows()
            }
            _ => g_rows.to_vec(),
        };
        let grads = self.encoder.backward(&cache.mmfe, &cache.inputs, &g_enc);
        if let Some(field) = &cache.inputs.lidar {
            if let Some(g) = &grads.lidar {
                match self.lidar_form {
                    LidarForm::Bev => {
                        let gm = field.rows_to_map(g);
                        g_lidar_map = Some(match g_lidar_map.take() {
                            Some(mut acc) => {
                                acc.data.iter_mut().zip(&gm.data).for_each(|(a, b)| *a += b);
                                acc
                            }
                            None => gm,
                        });
                    }
                    LidarForm::Voxel => {
                        let gv = field.rows_to_grid(g);
                        let (lc, _) = cache.lidar.as_ref().expect("lidar ran");
                        self.lidar_encoder.backward(lc, &gv);
                    }
                }
            }
        }
        if let (Some(gm), Some((folded, _)), Some(comp)) =
            (g_lidar_map, &cache.compress, &mut self.compressor)
        {
            let (lc, vf) = cache.lidar.as_ref().expect("lidar ran");
            let gv = comp.backward(folded, vf.depth, &gm)?;
            self.lidar_encoder.backward(lc, &gv);
        }
        for (j, ic) in cache.images.iter().enumerate() {
            let mut g_level: Option<FeatureMap2D> = None;
            if self.use_image {
                g_level = Some(cache.inputs.image[j].rows_to_map(&grads.image[j]));
            }
            if let Some(d) = &mut self.depth {
                let gd = cache.inputs.depth[j].rows_to_grid(&grads.depth[j]);
                let gf = d.backward(&cache.depth[j], &gd);
                g_level = Some(match g_level {
                    Some(mut acc) => {
                        acc.data.iter_mut().zip(&gf.data).for_each(|(a, b)| *a += b);
                        acc
                    }
                    None => gf,
                });
            }
            let mut levels: Vec<Option<FeatureMap2D>> = vec![None; self.backbone.num_levels()];
            levels[self.image_level] = g_level;
            self.backbone.backward(ic, &levels);
        }
        Ok(())
    }

    /// Aligned history rows for the key frame, newest first.
    fn history(&self, sample: &Sample) -> Result<Vec<Vec<f64>>> {
        let t = self.frames();
        let n = sample.frames.len();
        let now = &sample.poses[n - 1];
        let (c, h, w) = (self.embed_dim(), self.grid.h, self.grid.w);
        let mut out = Vec::new();
        for k in (n.saturating_sub(t)..n - 1).rev() {
            let rows = self.encode(&sample.frames[k])?.0;
            let map = FeatureMap2D::from_rows(&rows, c, h, w);
            out.push(align_history_bev(&map, &sample.poses[k], now, &self.grid)?.to_rows());
        }
        Ok(out)
    }

    /// Fused BEV map of the key frame (after temporal fusion).
    pub fn bev(&self, sample: &Sample) -> Result<FeatureMap2D> {
        let (rows, _, _) = self.bev_rows(sample)?;
        Ok(FeatureMap2D::from_rows(
            &rows,
            self.embed_dim(),
            self.grid.h,
            self.grid.w,
        ))
    }

    fn bev_rows(&self, sample: &Sample) -> Result<(Vec<f64>, FrameCache, Option<TemporalCache>)> {
        if sample.frames.is_empty() || sample.frames.len() != sample.poses.len() {
            return Err(HarnessError::Data(
                "sample needs one pose per frame and at least one frame".into(),
            ));
        }
        let (rows, frame) = self.encode(sample.frames.last().expect("non-empty"))?;
        match &self.temporal {
            Some(t) => {
                let hist = self.history(sample)?;
                let (y, tc) = t.forward_rows(&rows, &hist)?;
                Ok((y, frame, Some(tc)))
            }
            None => Ok((rows, frame, None)),
        }
    }

    pub fn forward(
        &self,
        sample: &Sample,
        dn: Option<&bevfuse_core::head::DnQueries>,
    ) -> Result<(HeadOutput, ForwardCache)> {
        let (rows, frame, temporal) = self.bev_rows(sample)?;
        let bev = FeatureMap2D::from_rows(&rows, self.embed_dim(), self.grid.h, self.grid.w);
        let (out, head) = self.head.forward(&bev, dn)?;
        Ok((
            out,
            ForwardCache {
                frame,
                temporal,
                head,
            },
        ))
    }

    /// Accumulates gradients of every parameter from per-layer output gradients.
    pub fn backward(&mut self, cache: &ForwardCache, grads: &[LayerOutput]) -> Result<()> {
        let g_bev = self.head.backward(&cache.head, grads);
        let g_cur = match (&mut self.temporal, &cache.temporal) {
            (Some(t), Some(tc)) => t.backward(tc, &g_bev),
            _ => g_bev,
        };
        self.encode_backward(&cache.frame, &g_cur)
    }

    /// Forward, loss and backward on one sample; gradients accumulate.
    pub fn train_step(
        &mut self,
        sample: &Sample,
        loss_cfg: &LossConfig,
        rng: &mut impl Rng,
    ) -> Result<LossBreakdown> {
        let dn = if self.head.cfg.dn_groups > 0 && !sample.gt.is_empty() {
            Some(make_denoising_queries(
                &sample.gt,
                &self.head.cfg.dn_noise,
                self.head.cfg.dn_groups,
                rng,
            )?)
        } else {
            None
        };
        let (out, cache) = self.forward(sample, dn.as_ref())?;
        let assign = match_all(&out, &sample.gt, &loss_cfg.cost)?;
        let (loss, grads) = detection_loss(&out, &sample.gt, &assign, dn.as_ref(), loss_cfg)?;
        if loss.total.is_finite() {
            self.backward(&cache, &grads)?;
        }
        Ok(loss)
    }

    /// Loss without denoising queries and without touching gradients.
    pub fn eval_loss(&self, sample: &Sample, loss_cfg: &LossConfig) -> Result<LossBreakdown> {
        let (out, _) = self.forward(sample, None)?;
        let assign = match_all(&out, &sample.gt, &loss_cfg.cost)?;
        Ok(detection_loss(&out, &sample.gt, &assign, None, loss_cfg)?.0)
    }

    /// Finite-difference check of the whole detector on one sample. The
    /// query-to-target assignment is frozen at the current parameters so the
    /// objective is smooth in them.
    pub fn gradient_check(
        &mut self,
        sample: &Sample,
        loss_cfg: &LossConfig,
        opts: &GradCheckOptions,
    ) -> Result<GradCheckReport> {
        self.zero_grad();
        let (out, cache) = self.forward(sample, None)?;
        let assign = match_all(&out, &sample.gt, &loss_cfg.cost)?;
        let (_, grads) = detection_loss(&out, &sample.gt, &assign, None, loss_cfg)?;
        self.backward(&cache, &grads)?;
        let f = |m: &Self| -> f64 {
            m.forward(sample, None)
                .and_then(|(o, _)| {
                    Ok(detection_loss(&o, &sample.gt, &assign, None, loss_cfg)?
                        .0
                        .total)
                })
                .unwrap_or(f64::NAN)
        };
        Ok(finite_difference_check(self, f, opts)?)
    }

    pub fn predict(&self, sample: &Sample, max: usize) -> Result<Vec<Box3D>> {
        Ok(self.forward(sample, None)?.0.decode_last(max))
    }
}

impl Module for FusionDetector {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.lidar_encoder
            .visit_params(&join(prefix, "lidar_encoder"), f);
        self.compressor.visit_params(&join(prefix, "compressor"), f);
        self.backbone.visit_params(&join(prefix, "backbone"), f);
        self.depth.visit_params(&join(prefix, "depth"), f);
        self.encoder.visit_params(&join(prefix, "encoder"), f);
        self.fuse.visit_params(&join(prefix, "fuse"), f);
        self.temporal.visit_params(&join(prefix, "temporal"), f);
        self.head.visit_params(&join(prefix, "head"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.lidar_encoder
            .visit_params_mut(&join(prefix, "lidar_encoder"), f);
        self.compressor
            .visit_params_mut(&join(prefix, "compressor"), f);
        self.backbone.visit_params_mut(&join(prefix, "backbone"), f);
        self.depth.visit_params_mut(&join(prefix, "depth"), f);
        self.encoder.visit_params_mut(&join(prefix, "encoder"), f);
        self.fuse.visit_params_mut(&join(prefix, "fuse"), f);
        self.temporal.visit_params_mut(&join(prefix, "temporal"), f);
        self.head.visit_params_mut(&join(prefix, "head"), f);
    }
}
