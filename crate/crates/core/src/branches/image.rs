use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{dim_err, Error, Result};
use crate::numerics::conv::Conv3d;
use crate::numerics::module::{join, Module};
use crate::numerics::ops::{relu, relu_backward};
use crate::numerics::tensor::{FeatureMap2D, Tensor};

const MAGIC: &[u8; 5] = b"FBIM1";

/// Multi-scale features of one camera. `strides[l]` is image pixels per
/// cell of `levels[l]`; each level halves the previous resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraFeatures {
    pub levels: Vec<FeatureMap2D>,
    pub strides: Vec<f64>,
}

/// Per-camera multi-scale features.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFeatures {
    pub cameras: Vec<CameraFeatures>,
}

impl ImageFeatures {
    pub fn level(&self, camera: usize, level: usize) -> Result<(&FeatureMap2D, f64)> {
        let cam = self
            .cameras
            .get(camera)
            .ok_or_else(|| Error::OutOfRange(format!("camera {camera}")))?;
        let map = cam
            .levels
            .get(level)
            .ok_or_else(|| Error::OutOfRange(format!("image level {level}")))?;
        Ok((map, cam.strides[level]))
    }
}

/// Stub pyramid in place of a pretrained backbone and FPN: two stride-2
/// 3×3 convs with ReLU, each output kept as a level.
#[derive(Debug, Clone)]
pub struct ImageBackbone {
    pub convs: Vec<Conv3d>,
}

#[derive(Debug, Clone)]
pub struct ImageBackboneCache {
    inputs: Vec<FeatureMap2D>,
    pre: Vec<FeatureMap2D>,
}

impl ImageBackbone {
    pub fn new(
        in_channels: usize,
        channels: usize,
        levels: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if levels == 0 || channels == 0 || in_channels == 0 {
            return Err(Error::Config(
                "image backbone needs positive channels and at least one level".into(),
            ));
        }
        let convs = (0..levels)
            .map(|l| {
                Conv3d::new_2d(
                    if l == 0 { in_channels } else { channels },
                    channels,
                    3,
                    2,
                    rng,
                )
            })
            .collect();
        Ok(Self { convs })
    }

    pub fn out_channels(&self) -> usize {
        self.convs[0].cout()
    }

    pub fn num_levels(&self) -> usize {
        self.convs.len()
    }

    /// Level `(h, w)` sizes for an `h × w` image: repeated ceil-halving.
    pub fn level_dims(&self, h: usize, w: usize) -> Vec<(usize, usize)> {
        let mut d = (h, w);
        self.convs
            .iter()
            .map(|c| {
                let o = c.output_dims([1, d.0, d.1]);
                d = (o[1], o[2]);
                d
            })
            .collect()
    }

    pub fn forward(&self, img: &FeatureMap2D) -> Result<(CameraFeatures, ImageBackboneCache)> {
        if img.channels != self.convs[0].cin() {
            return dim_err(format!(
                "image has {} channels, backbone expects {}",
                img.channels,
                self.convs[0].cin()
            ));
        }
        let mut inputs = Vec::new();
        let mut pre = Vec::new();
        let mut levels = Vec::new();
        let mut strides = Vec::new();
        let mut x = img.clone();
        let mut stride = 1.0;
        for conv in &self.convs {
            let y = conv.forward_2d(&x);
            let act = FeatureMap2D {
                data: relu(&y.data),
                ..y.clone()
            };
            inputs.push(x);
            pre.push(y);
            stride *= 2.0;
            levels.push(act.clone());
            strides.push(stride);
            x = act;
        }
        Ok((
            CameraFeatures { levels, strides },
            ImageBackboneCache { inputs, pre },
        ))
    }

    /// `grads[l]` is the gradient w.r.t. level `l` (`None` for unused levels).
    pub fn backward(
        &mut self,
        cache: &ImageBackboneCache,
        grads: &[Option<FeatureMap2D>],
    ) -> FeatureMap2D {
        let n = self.convs.len();
        let mut carry: Option<FeatureMap2D> = None;
        for l in (0..n).rev() {
            let pre = &cache.pre[l];
            let mut g = FeatureMap2D::zeros(pre.channels, pre.height, pre.width);
            if let Some(Some(d)) = grads.get(l) {
                g.data.iter_mut().zip(&d.data).for_each(|(a, b)| *a += b);
            }
            if let Some(c) = carry.take() {
                g.data.iter_mut().zip(&c.data).for_each(|(a, b)| *a += b);
            }
            g.data = relu_backward(&pre.data, &g.data);
            carry = Some(self.convs[l].backward_2d(&cache.inputs[l], &g));
        }
        carry.expect("at least one level")
    }
}

impl Module for ImageBackbone {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.convs.visit_params(&join(prefix, "convs"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.convs.visit_params_mut(&join(prefix, "convs"), f);
    }
}

/// Little-endian: magic, `u32` channels, height, width, then channel-major doubles.
pub fn write_feature_map(w: &mut impl Write, m: &FeatureMap2D) -> Result<()> {
    w.write_all(MAGIC)?;
    for d in [m.channels, m.height, m.width] {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for v in &m.data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_feature_map(r: &mut impl Read) -> Result<FeatureMap2D> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not an image tensor file (bad magic)".into()));
    }
    let mut dims = [0usize; 3];
    let mut b4 = [0u8; 4];
    for d in dims.iter_mut() {
        r.read_exact(&mut b4)?;
        *d = u32::from_le_bytes(b4) as usize;
    }
    let n = dims[0] * dims[1] * dims[2];
    let mut data = Vec::with_capacity(n);
    let mut b8 = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b8)?;
        data.push(f64::from_le_bytes(b8));
    }
    FeatureMap2D::new(dims[0], dims[1], dims[2], data)
}

pub fn save_feature_map(path: impl AsRef<Path>, m: &FeatureMap2D) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_feature_map(&mut f, m)?;
    f.flush()?;
    Ok(())
}

pub fn load_feature_map(path: impl AsRef<Path>) -> Result<FeatureMap2D> {
    read_feature_map(&mut std::io::BufReader::new(std::fs::File::open(path)?))
}
