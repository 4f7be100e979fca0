use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Points,
    Image,
    Depth,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Points => "points",
            Modality::Image => "image",
            Modality::Depth => "depth",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "points" | "lidar" | "l" => Ok(Modality::Points),
            "image" | "camera" | "c" => Ok(Modality::Image),
            "depth" | "d" => Ok(Modality::Depth),
            other => Err(Error::Config(format!("unknown modality '{other}'"))),
        }
    }
}

/// How LiDAR features reach the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LidarForm {
    /// Z folded into channels, 2D attention.
    Bev,
    /// Voxel grid, 3D attention over the height anchors.
    Voxel,
}

impl FromStr for LidarForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bev" => Ok(LidarForm::Bev),
            "voxel" => Ok(LidarForm::Voxel),
            other => Err(Error::Config(format!("unknown lidar form '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmfeConfig {
    pub num_layers: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub points: usize,
    pub modality_order: Vec<Modality>,
    pub modality_mask: Vec<Modality>,
    pub lidar_form: LidarForm,
    /// Channel widths of the incoming modality fields.
    pub lidar_channels: usize,
    pub image_channels: usize,
    pub depth_channels: usize,
    /// Image pyramid level attended by every layer.
    pub image_level: usize,
    pub ffn_hidden: usize,
    /// Radius (cells) of the initial ring of cross-attention offsets.
    pub offset_ring: f64,
    pub seed: u64,
}

impl MmfeConfig {
    /// Six layers, points before image.
    pub fn new(embed_dim: usize, lidar_channels: usize, image_channels: usize) -> Self {
        Self {
            num_layers: 6,
            embed_dim,
            heads: 4,
            points: 4,
            modality_order: vec![Modality::Points, Modality::Image],
            modality_mask: Vec::new(),
            lidar_form: LidarForm::Voxel,
            lidar_channels,
            image_channels,
            depth_channels: image_channels,
            image_level: 0,
            ffn_hidden: 4 * embed_dim,
            offset_ring: 1.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        for (i, m) in self.modality_order.iter().enumerate() {
            if self.modality_order[..i].contains(m) {
                return Err(Error::Config(format!(
                    "modality '{m}' listed twice in order"
                )));
            }
        }
        if self.active().is_empty() {
            return Err(Error::Config("every modality is masked".into()));
        }
        if self.heads == 0 || self.embed_dim % self.heads != 0 || self.points == 0 {
            return Err(Error::Config(format!(
                "{} heads / {} points incompatible with width {}",
                self.heads, self.points, self.embed_dim
            )));
        }
        Ok(())
    }

    pub fn is_masked(&self, m: Modality) -> bool {
        self.modality_mask.contains(&m)
    }

    /// Modalities attended, in order.
    pub fn active(&self) -> Vec<Modality> {
        self.modality_order
            .iter()
            .copied()
            .filter(|m| !self.is_masked(*m))
            .collect()
    }
}

/// Parses `"points,image"` style lists; empty string → empty list.
pub fn parse_modalities(s: &str) -> Result<Vec<Modality>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(str::parse)
        .collect()
}
