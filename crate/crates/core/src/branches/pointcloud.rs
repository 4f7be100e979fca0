use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::LidarFrame;
use crate::numerics::tensor::FeatureGrid3D;

/// Raw per-voxel encoding: mean (dx, dy, dz) offset from the voxel centre
/// in meters, then mean intensity.
pub const RAW_VOXEL_CHANNELS: usize = 4;

const MAGIC: &[u8; 5] = b"FBPC1";

/// Points in the LiDAR frame as `(x, y, z, intensity)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoxelStats {
    /// Finite points that landed inside the grid.
    pub accepted: usize,
    /// Finite points outside the grid.
    pub outside: usize,
    /// Points with a non-finite coordinate or intensity.
    pub rejected: usize,
    /// Point count per voxel, `[Z, H, W]` order.
    pub counts: Vec<u32>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 4]>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Little-endian: magic, `u64` count, then `count × 4` doubles.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.points.len() as u64).to_le_bytes())?;
        for p in &self.points {
            for v in p {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a point cloud file (bad magic)".into()));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let n = u64::from_le_bytes(b8) as usize;
        let mut points = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            let mut p = [0.0; 4];
            for v in p.iter_mut() {
                r.read_exact(&mut b8)?;
                *v = f64::from_le_bytes(b8);
            }
            points.push(p);
        }
        Ok(Self { points })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Bins points by `floor((p − origin) / voxel_size)` and averages the raw
/// encoding inside each voxel. Empty voxels stay zero.
pub fn voxelize(pc: &PointCloud, frame: &LidarFrame) -> (FeatureGrid3D, VoxelStats) {
    let [zd, hd, wd] = frame.dims;
    let s = frame.voxel_size;
    let positions = zd * hd * wd;
    let mut sums = vec![0.0; RAW_VOXEL_CHANNELS * positions];
    let mut counts = vec![0u32; positions];
    let (mut accepted, mut outside, mut rejected) = (0, 0, 0);
    for p in &pc.points {
        if p.iter().any(|v| !v.is_finite()) {
            rejected += 1;
            continue;
        }
        let fx = ((p[0] - frame.origin[0]) / s).floor();
        let fy = ((p[1] - frame.origin[1]) / s).floor();
        let fz = ((p[2] - frame.origin[2]) / s).floor();
        if fx < 0.0 || fy < 0.0 || fz < 0.0 || fx >= hd as f64 || fy >= wd as f64 || fz >= zd as f64
        {
            outside += 1;
            continue;
        }
        let (ix, iy, iz) = (fx as usize, fy as usize, fz as usize);
        let cell = (iz * hd + ix) * wd + iy;
        let centre = [
            frame.origin[0] + (fx + 0.5) * s,
            frame.origin[1] + (fy + 0.5) * s,
            frame.origin[2] + (fz + 0.5) * s,
        ];
        let enc = [p[0] - centre[0], p[1] - centre[1], p[2] - centre[2], p[3]];
        for (c, v) in enc.iter().enumerate() {
            sums[c * positions + cell] += v;
        }
        counts[cell] += 1;
        accepted += 1;
    }
    for c in 0..RAW_VOXEL_CHANNELS {
        for (cell, &n) in counts.iter().enumerate() {
            if n > 0 {
                sums[c * positions + cell] /= n as f64;
            }
        }
    }
    let grid = FeatureGrid3D {
        channels: RAW_VOXEL_CHANNELS,
        depth: zd,
        height: hd,
        width: wd,
        data: sums,
    };
    (
        grid,
        VoxelStats {
            accepted,
            outside,
            rejected,
            counts,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rigid;

    fn frame() -> LidarFrame {
        LidarFrame::new(Rigid::identity(), [-2.0, -2.0, -1.0], 1.0, [2, 4, 4]).unwrap()
    }

    #[test]
    fn single_point_at_centre() {
        let pc = PointCloud::new(vec![[0.5, -0.5, -0.5, 0.7]]);
        let (g, stats) = voxelize(&pc, &frame());
        assert_eq!(stats.accepted, 1);
        // x cell 2, y cell 1, z cell 0
        for c in 0..3 {
            assert_eq!(g.at(c, 0, 2, 1), 0.0);
        }
        assert_eq!(g.at(3, 0, 2, 1), 0.7);
        let nonzero = g.data.iter().filter(|v| **v != 0.0).count();
        assert_eq!(nonzero, 1);
    }

    #[test]
    fn duplicates_and_permutations() {
        let one = PointCloud::new(vec![[0.2, 0.3, 0.1, 0.5]]);
        let two = PointCloud::new(vec![[0.2, 0.3, 0.1, 0.5]; 2]);
        assert_eq!(voxelize(&one, &frame()).0, voxelize(&two, &frame()).0);

        let pts = vec![
            [0.2, 0.3, 0.1, 0.5],
            [0.7, 0.9, 0.4, 0.1],
            [-1.5, 1.2, -0.3, 0.9],
            [0.25, 0.35, 0.15, 0.2],
        ];
        let mut rev = pts.clone();
        rev.reverse();
        let (a, sa) = voxelize(&PointCloud::new(pts), &frame());
        let (b, sb) = voxelize(&PointCloud::new(rev), &frame());
        assert_eq!(sa, sb);
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_and_counts() {
        let pc = PointCloud::new(vec![
            [f64::NAN, 0.0, 0.0, 1.0],
            [10.0, 0.0, 0.0, 1.0],
            [0.1, 0.1, 0.1, 1.0],
            [0.2, 0.2, 0.2, f64::INFINITY],
        ]);
        let (_, s) = voxelize(&pc, &frame());
        assert_eq!((s.accepted, s.outside, s.rejected), (1, 1, 2));
        assert_eq!(
            s.counts.iter().map(|&c| c as usize).sum::<usize>(),
            s.accepted
        );
    }

    #[test]
    fn file_roundtrip() {
        let pc = PointCloud::new(vec![[1.0, -2.0, 0.25, 0.5], [3.5, 0.0, -1.0, 0.0]]);
        let mut buf = Vec::new();
        pc.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 5 + 8 + 2 * 32);
        assert_eq!(PointCloud::read_from(&mut buf.as_slice()).unwrap(), pc);
        buf[0] = b'X';
        assert!(PointCloud::read_from(&mut buf.as_slice()).is_err());
    }
}
