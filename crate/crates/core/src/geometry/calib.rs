//! Plain-text sensor calibration.
//!
//! One record per line, whitespace separated, `#` starts a comment:
//!
//! ```text
//! camera <name> <width> <height> K <9 values, row-major> T <12 values, row-major [R|t] ego<-cam>
//! lidar T <12 values ego<-lidar> origin <x> <y> <z> voxel <size> dims <Z> <H> <W>
//! ```
//!
//! Floats are written in shortest round-trip form, so write→read is exact.

use std::fmt::Write as _;
use std::path::Path;

use super::sensors::{Camera, CameraRig, LidarFrame};
use super::transform::{rigid_from_rows, rigid_to_rows};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub rig: CameraRig,
    pub lidar: Option<LidarFrame>,
}

struct Tokens<'a> {
    it: std::str::SplitWhitespace<'a>,
    line: usize,
}

impl<'a> Tokens<'a> {
    fn word(&mut self) -> Result<&'a str> {
        self.it
            .next()
            .ok_or_else(|| Error::Format(format!("line {}: unexpected end of record", self.line)))
    }

    fn keyword(&mut self, kw: &str) -> Result<()> {
        let w = self.word()?;
        if w != kw {
            return Err(Error::Format(format!(
                "line {}: expected '{kw}', found '{w}'",
                self.line
            )));
        }
        Ok(())
    }

    fn num<T: std::str::FromStr>(&mut self) -> Result<T> {
        let w = self.word()?;
        w.parse()
            .map_err(|_| Error::Format(format!("line {}: bad number '{w}'", self.line)))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.num()).collect()
    }

    fn finish(mut self) -> Result<()> {
        match self.it.next() {
            Some(w) => Err(Error::Format(format!(
                "line {}: trailing token '{w}'",
                self.line
            ))),
            None => Ok(()),
        }
    }
}

pub fn parse_calibration(text: &str) -> Result<Calibration> {
    let mut cameras = Vec::new();
    let mut lidar = None;
    for (i, raw) in text.lines().enumerate() {
        let content = raw.split('#').next().unwrap_or("");
        let mut t = Tokens {
            it: content.split_whitespace(),
            line: i + 1,
        };
        let Some(kind) = t.it.next() else { continue };
        match kind {
            "camera" => {
                let name = t.word()?.to_string();
                let w: usize = t.num()?;
                let h: usize = t.num()?;
                t.keyword("K")?;
                let k: [f64; 9] = t.floats(9)?.try_into().expect("nine values");
                t.keyword("T")?;
                let pose = rigid_from_rows(&t.floats(12)?)?;
                t.finish()?;
                cameras.push(Camera::new(name, k, pose, w, h)?);
            }
            "lidar" => {
                if lidar.is_some() {
                    return Err(Error::Format(format!(
                        "line {}: duplicate lidar record",
                        i + 1
                    )));
                }
                t.keyword("T")?;
                let pose = rigid_from_rows(&t.floats(12)?)?;
                t.keyword("origin")?;
                let o = t.floats(3)?;
                t.keyword("voxel")?;
                let size: f64 = t.num()?;
                t.keyword("dims")?;
                let dims = [t.num()?, t.num()?, t.num()?];
                t.finish()?;
                lidar = Some(LidarFrame::new(pose, [o[0], o[1], o[2]], size, dims)?);
            }
            other => {
                return Err(Error::Format(format!(
                    "line {}: unknown record '{other}'",
                    i + 1
                )))
            }
        }
    }
    Ok(Calibration {
        rig: CameraRig::new(cameras),
        lidar,
    })
}

fn join(vals: &[f64]) -> String {
    vals.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn format_calibration(calib: &Calibration) -> String {
    let mut s = String::new();
    for c in &calib.rig.cameras {
        let _ = writeln!(
            s,
            "camera {} {} {} K {} T {}",
            c.name,
            c.image_width,
            c.image_height,
            join(&c.k),
            join(&rigid_to_rows(&c.ego_from_cam))
        );
    }
    if let Some(l) = &calib.lidar {
        let _ = writeln!(
            s,
            "lidar T {} origin {} voxel {} dims {} {} {}",
            join(&rigid_to_rows(&l.ego_from_lidar)),
            join(&l.origin),
            l.voxel_size,
            l.dims[0],
            l.dims[1],
            l.dims[2]
        );
    }
    s
}

pub fn read_calibration(path: impl AsRef<Path>) -> Result<Calibration> {
    parse_calibration(&std::fs::read_to_string(path)?)
}

pub fn write_calibration(path: impl AsRef<Path>, calib: &Calibration) -> Result<()> {
    std::fs::write(path, format_calibration(calib))?;
    Ok(())
}
