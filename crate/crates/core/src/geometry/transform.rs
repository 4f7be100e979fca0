use nalgebra::{Isometry3, Matrix3, Point3, Rotation3, Translation3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

pub type Rigid = Isometry3<f64>;

const ORTHO_TOL: f64 = 1e-9;

/// Builds a rigid transform from a row-major 3×4 `[R | t]`, rejecting
/// rotations that are not orthonormal within 1e-9 or that reflect.
pub fn rigid_from_rows(m: &[f64]) -> Result<Rigid> {
    if m.len() != 12 || m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input(format!(
            "rigid transform needs 12 finite values, got {}",
            m.len()
        )));
    }
    let r = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
    check_rotation(&r)?;
    let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    Ok(Isometry3::from_parts(
        Translation3::new(m[3], m[7], m[11]),
        rot,
    ))
}

pub fn check_rotation(r: &Matrix3<f64>) -> Result<()> {
    let err = (r.transpose() * r - Matrix3::identity()).abs().max();
    if err > ORTHO_TOL {
        return Err(Error::Input(format!(
            "rotation not orthonormal (deviation {err:.3e})"
        )));
    }
    if r.determinant() <= 0.0 {
        return Err(Error::Input("rotation has negative determinant".into()));
    }
    Ok(())
}

/// Row-major 3×4 `[R | t]`.
pub fn rigid_to_rows(t: &Rigid) -> [f64; 12] {
    let r = t.rotation.to_rotation_matrix();
    let r = r.matrix();
    let p = t.translation.vector;
    [
        r[(0, 0)],
        r[(0, 1)],
        r[(0, 2)],
        p.x,
        r[(1, 0)],
        r[(1, 1)],
        r[(1, 2)],
        p.y,
        r[(2, 0)],
        r[(2, 1)],
        r[(2, 2)],
        p.z,
    ]
}

/// Translation followed by a rotation about +z.
pub fn planar(x: f64, y: f64, z: f64, yaw: f64) -> Rigid {
    Isometry3::from_parts(
        Translation3::new(x, y, z),
        UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
    )
}

pub fn apply(t: &Rigid, p: [f64; 3]) -> [f64; 3] {
    let q = t.transform_point(&Point3::new(p[0], p[1], p[2]));
    [q.x, q.y, q.z]
}

/// Ego pose at a discrete timestamp: maps ego coordinates to world.
#[derive(Debug, Clone, PartialEq)]
pub struct EgoPose {
    pub timestamp: i64,
    pub world_from_ego: Rigid,
}

impl EgoPose {
    pub fn new(timestamp: i64, world_from_ego: Rigid) -> Self {
        Self {
            timestamp,
            world_from_ego,
        }
    }

    pub fn from_rows(timestamp: i64, rows: &[f64]) -> Result<Self> {
        Ok(Self::new(timestamp, rigid_from_rows(rows)?))
    }

    pub fn planar(timestamp: i64, x: f64, y: f64, yaw: f64) -> Self {
        Self::new(timestamp, planar(x, y, 0.0, yaw))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_roundtrip() {
        let t = planar(1.0, -2.0, 0.5, 0.7);
        let rows = rigid_to_rows(&t);
        let back = rigid_from_rows(&rows).unwrap();
        let p = apply(&back, [0.3, 0.2, -1.0]);
        let q = apply(&t, [0.3, 0.2, -1.0]);
        for d in 0..3 {
            assert!((p[d] - q[d]).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_rigid() {
        let mut rows = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        assert!(rigid_from_rows(&rows).is_ok());
        rows[0] = 1.0 + 1e-6;
        assert!(rigid_from_rows(&rows).is_err());
        rows[0] = -1.0;
        assert!(rigid_from_rows(&rows).is_err());
        assert!(rigid_from_rows(&rows[..11]).is_err());
    }
}
