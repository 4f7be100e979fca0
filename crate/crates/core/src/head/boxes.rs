use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Regression layout: `[x, y, z, ln w, ln l, ln h, sin yaw, cos yaw, vx, vy]`.
pub const BOX_PARAMS: usize = 10;
/// Leading entries of the layout that describe the box itself (no velocity).
pub const BOX_GEOMETRY: usize = 8;

/// Wraps an angle into `(-π, π]`.
pub fn normalize_yaw(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Box3D {
    /// Ego-frame centre in metres.
    pub center: [f64; 3],
    /// Width (along the heading's left axis), length (along the heading), height.
    pub size: [f64; 3],
    pub yaw: f64,
    /// `None` when the ground truth carries no velocity.
    pub velocity: Option<[f64; 2]>,
    pub class: usize,
    pub score: f64,
}

impl Box3D {
    pub fn new(
        center: [f64; 3],
        size: [f64; 3],
        yaw: f64,
        velocity: Option<[f64; 2]>,
        class: usize,
    ) -> Result<Self> {
        if !size.iter().all(|s| *s > 0.0 && s.is_finite()) {
            return Err(Error::Input(format!(
                "box sizes must be positive, got {size:?}"
            )));
        }
        if !center
            .iter()
            .chain(velocity.iter().flatten())
            .all(|v| v.is_finite())
            || !yaw.is_finite()
        {
            return Err(Error::Input("non-finite box field".into()));
        }
        Ok(Self {
            center,
            size,
            yaw: normalize_yaw(yaw),
            velocity,
            class,
            score: 1.0,
        })
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = score;
        self
    }

    /// Missing velocity encodes as zero.
    pub fn to_params(&self) -> [f64; BOX_PARAMS] {
        let [vx, vy] = self.velocity.unwrap_or([0.0; 2]);
        [
            self.center[0],
            self.center[1],
            self.center[2],
            self.size[0].ln(),
            self.size[1].ln(),
            self.size[2].ln(),
            self.yaw.sin(),
            self.yaw.cos(),
            vx,
            vy,
        ]
    }

    /// Inverse of [`to_params`](Self::to_params); yaw comes from `atan2`, so
    /// `(sin, cos)` need not be unit length.
    pub fn from_params(p: &[f64], class: usize, score: f64) -> Self {
        Self {
            center: [p[0], p[1], p[2]],
            size: [p[3].exp(), p[4].exp(), p[5].exp()],
            yaw: p[6].atan2(p[7]),
            velocity: Some([p[8], p[9]]),
            class,
            score,
        }
    }

    /// BEV footprint corners (x, y), counter-clockwise.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let (hl, hw) = (self.size[1] / 2.0, self.size[0] / 2.0);
        [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)].map(|(a, b)| {
            [
                self.center[0] + a * c - b * s,
                self.center[1] + a * s + b * c,
            ]
        })
    }

    /// Whether the ego-frame point lies inside the box.
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let (s, c) = self.yaw.sin_cos();
        let (dx, dy) = (p[0] - self.center[0], p[1] - self.center[1]);
        let along = dx * c + dy * s;
        let across = -dx * s + dy * c;
        along.abs() <= self.size[1] / 2.0
            && across.abs() <= self.size[0] / 2.0
            && (p[2] - self.center[2]).abs() <= self.size[2] / 2.0
    }

    pub fn bev_distance(&self, other: &Box3D) -> f64 {
        (self.center[0] - other.center[0]).hypot(self.center[1] - other.center[1])
    }
}

const HEADER: &str = "# class score x y z w l h yaw vx vy";

/// One line per box; a missing velocity is written as `- -`. Floats use the
/// shortest representation that round-trips.
pub fn format_detections(boxes: &[Box3D]) -> String {
    let mut s = String::from(HEADER);
    s.push('\n');
    for b in boxes {
        let _ = write!(
            s,
            "{} {} {} {} {} {} {} {} {}",
            b.class,
            b.score,
            b.center[0],
            b.center[1],
            b.center[2],
            b.size[0],
            b.size[1],
            b.size[2],
            b.yaw
        );
        match b.velocity {
            Some([vx, vy]) => {
                let _ = writeln!(s, " {vx} {vy}");
            }
            None => s.push_str(" - -\n"),
        }
    }
    s
}

pub fn parse_detections(text: &str) -> Result<Vec<Box3D>> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |what: &str| Error::Format(format!("detections line {}: {what}", ln + 1));
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() != 11 {
            return Err(bad(&format!("expected 11 fields, found {}", tok.len())));
        }
        let class = tok[0].parse::<usize>().map_err(|_| bad("class"))?;
        let num = |i: usize| {
            tok[i]
                .parse::<f64>()
                .map_err(|_| bad(&format!("field {}", i + 1)))
        };
        let velocity = match (tok[9], tok[10]) {
            ("-", "-") => None,
            _ => Some([num(9)?, num(10)?]),
        };
        let b = Box3D::new(
            [num(2)?, num(3)?, num(4)?],
            [num(5)?, num(6)?, num(7)?],
            num(8)?,
            velocity,
            class,
        )
        .map_err(|e| bad(&e.to_string()))?;
        out.push(b.with_score(num(1)?));
    }
    Ok(out)
}

pub fn write_detections(path: &Path, boxes: &[Box3D]) -> Result<()> {
    std::fs::write(path, format_detections(boxes))?;
    Ok(())
}

pub fn read_detections(path: &Path) -> Result<Vec<Box3D>> {
    parse_detections(&std::fs::read_to_string(path)?)
}
