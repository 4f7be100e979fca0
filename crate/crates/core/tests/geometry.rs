use bevfuse_core::geometry::*;
use bevfuse_core::numerics::FeatureMap2D;
use nalgebra::{Matrix3, Matrix4, Rotation3, Vector3, Vector4};
use proptest::prelude::*;

/// Homogeneous 4×4 from row-major `[R|t]`, independent of the isometry path.
fn homogeneous(rows: &[f64; 12]) -> Matrix4<f64> {
    Matrix4::new(
        rows[0], rows[1], rows[2], rows[3], rows[4], rows[5], rows[6], rows[7], rows[8], rows[9],
        rows[10], rows[11], 0.0, 0.0, 0.0, 1.0,
    )
}

fn rotation_rows(roll: f64, pitch: f64, yaw: f64, t: [f64; 3]) -> [f64; 12] {
    let r = Rotation3::from_euler_angles(roll, pitch, yaw);
    let m = r.matrix();
    [
        m[(0, 0)],
        m[(0, 1)],
        m[(0, 2)],
        t[0],
        m[(1, 0)],
        m[(1, 1)],
        m[(1, 2)],
        t[1],
        m[(2, 0)],
        m[(2, 1)],
        m[(2, 2)],
        t[2],
    ]
}

/// Camera whose optical axis is tilted by arbitrary angles; extrinsics built
/// from an optical-frame basis times a perturbation.
fn odd_camera(roll: f64, pitch: f64, yaw: f64, t: [f64; 3]) -> ([f64; 12], Camera) {
    let base = Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
    let pert = Rotation3::from_euler_angles(roll, pitch, yaw);
    let r = pert.matrix() * base;
    let rows = [
        r[(0, 0)],
        r[(0, 1)],
        r[(0, 2)],
        t[0],
        r[(1, 0)],
        r[(1, 1)],
        r[(1, 2)],
        t[1],
        r[(2, 0)],
        r[(2, 1)],
        r[(2, 2)],
        t[2],
    ];
    let k = [120.0, 0.5, 160.0, 0.0, 110.0, 90.0, 0.0, 0.0, 1.0];
    let cam = Camera::new("odd", k, rigid_from_rows(&rows).unwrap(), 320, 180).unwrap();
    (rows, cam)
}

fn oracle_pixel(rows: &[f64; 12], k: &[f64; 9], p: [f64; 3]) -> (f64, f64, f64) {
    let cam_from_ego = homogeneous(rows).try_inverse().unwrap();
    let pc = cam_from_ego * Vector4::new(p[0], p[1], p[2], 1.0);
    let km = Matrix3::new(k[0], k[1], k[2], k[3], k[4], k[5], k[6], k[7], k[8]);
    let img = km * Vector3::new(pc.x, pc.y, pc.z);
    (img.x / img.z, img.y / img.z, pc.z)
}

#[test]
fn camera_projection_matches_homogeneous_oracle() {
    let (rows, cam) = odd_camera(0.1, -0.2, 0.7, [0.4, -0.3, 1.6]);
    let rig = CameraRig::new(vec![cam.clone()]);
    let mut hits = 0;
    for i in -10..=10 {
        for j in -10..=10 {
            for z in [-2.0, 0.0, 1.0, 3.0] {
                let p = [i as f64 * 1.7, j as f64 * 1.3, z];
                let (u, v, d) = oracle_pixel(&rows, &cam.k, p);
                let got = project_to_camera(p, &rig, 0, 4.0).unwrap();
                assert!((got.depth - d).abs() < 1e-9);
                if d > 0.5 {
                    assert!((got.pixel[0] - u).abs() < 1e-9, "u {} vs {u}", got.pixel[0]);
                    assert!((got.pixel[1] - v).abs() < 1e-9);
                    assert!((got.cell.coords[1] - u / 4.0).abs() < 1e-9);
                }
                // hit iff depth > 0.1 and pixel inside the image
                let expect = d > 0.1 && (0.0..320.0).contains(&u) && (0.0..180.0).contains(&v);
                assert_eq!(got.hit(), expect, "point {p:?}");
                hits += expect as usize;
            }
        }
    }
    assert!(hits > 50, "grid should hit the camera often, got {hits}");
}

#[test]
fn back_projection_round_trip() {
    let (_, cam) = odd_camera(-0.05, 0.3, -1.1, [1.0, 2.0, 1.2]);
    for i in 0..12 {
        for j in 0..12 {
            let p = [
                i as f64 * 3.0 - 18.0,
                j as f64 * 3.0 - 18.0,
                (i + j) as f64 * 0.2 - 2.0,
            ];
            let (px, d) = cam.project(p);
            if d <= 0.1 {
                continue;
            }
            let back = cam.back_project(px[0], px[1], d);
            for k in 0..3 {
                assert!((back[k] - p[k]).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn lidar_projections_match_affine_oracle() {
    let rows = rotation_rows(0.0, 0.0, 0.3, [0.5, -0.2, 1.8]);
    let lidar = LidarFrame::new(
        rigid_from_rows(&rows).unwrap(),
        [-8.0, -6.0, -3.0],
        0.25,
        [16, 64, 48],
    )
    .unwrap();
    let lidar_from_ego = homogeneous(&rows).try_inverse().unwrap();
    for i in -6..=6 {
        for j in -6..=6 {
            let p = [i as f64 * 1.9, j as f64 * 1.1, i as f64 * 0.3];
            let q = lidar_from_ego * Vector4::new(p[0], p[1], p[2], 1.0);
            let expect = [(q.z + 3.0) / 0.25, (q.x + 8.0) / 0.25, (q.y + 6.0) / 0.25];
            let got = project_to_voxel(p, &lidar);
            for d in 0..3 {
                assert!((got.coords[d] - expect[d]).abs() < 1e-9);
            }
            let inside = expect[0] >= 0.0
                && expect[0] < 16.0
                && expect[1] >= 0.0
                && expect[1] < 64.0
                && expect[2] >= 0.0
                && expect[2] < 48.0;
            assert_eq!(got.valid, inside);

            let q2 = lidar_from_ego * Vector4::new(p[0], p[1], 0.0, 1.0);
            let bev = project_to_lidar_bev((p[0], p[1]), &lidar, (32, 24));
            assert!((bev.coords[0] - (q2.x + 8.0) / 0.5).abs() < 1e-9);
            assert!((bev.coords[1] - (q2.y + 6.0) / 0.5).abs() < 1e-9);
        }
    }
}

#[test]
fn pure_translation_shifts_by_translation_over_voxel() {
    let base = LidarFrame::centered(Rigid::identity(), 0.2, 40, (-2.0, 2.0)).unwrap();
    let moved = LidarFrame {
        ego_from_lidar: planar(0.6, -1.0, 0.0, 0.0),
        ..base.clone()
    };
    let a = project_to_lidar_bev((1.0, 1.0), &base, (40, 40));
    let b = project_to_lidar_bev((1.0, 1.0), &moved, (40, 40));
    assert!((a.coords[0] - b.coords[0] - 3.0).abs() < 1e-12);
    assert!((a.coords[1] - b.coords[1] + 5.0).abs() < 1e-12);
}

fn smooth(grid: &BevGrid) -> FeatureMap2D {
    let mut m = FeatureMap2D::zeros(1, grid.h, grid.w);
    for i in 0..grid.h {
        for j in 0..grid.w {
            let (x, y) = grid.bev_cell_center(i, j).unwrap();
            *m.at_mut(0, i, j) = (0.3 * x).sin() + (0.2 * y).cos();
        }
    }
    m
}

#[test]
fn forward_then_backward_alignment_stays_close() {
    let grid = BevGrid::square(24, 12.0, 1).unwrap();
    let m = smooth(&grid);
    let a = EgoPose::planar(0, 0.0, 0.0, 0.0);
    let b = EgoPose::planar(1, 0.37, -0.21, 0.05);
    let there = align_history_bev(&m, &a, &b, &grid).unwrap();
    let back = align_history_bev(&there, &b, &a, &grid).unwrap();
    // bound: largest local second difference of the field
    let mut bound: f64 = 0.0;
    for i in 1..23 {
        for j in 1..23 {
            let c = m.at(0, i, j);
            bound = bound.max((m.at(0, i + 1, j) - 2.0 * c + m.at(0, i - 1, j)).abs());
            bound = bound.max((m.at(0, i, j + 1) - 2.0 * c + m.at(0, i, j - 1)).abs());
            bound = bound
                .max((m.at(0, i + 1, j + 1) - m.at(0, i + 1, j) - m.at(0, i, j + 1) + c).abs());
        }
    }
    for i in 3..21 {
        for j in 3..21 {
            assert!(
                (back.at(0, i, j) - m.at(0, i, j)).abs() <= bound,
                "({i},{j})"
            );
        }
    }
}

proptest! {
    #[test]
    fn cell_roundtrip(h in 1usize..40, w in 1usize..40, cell in 0.05f64..3.0, x0 in -50.0f64..0.0, y0 in -50.0f64..0.0) {
        let grid = BevGrid::new(h, w, [x0, x0 + cell * h as f64, y0, y0 + cell * w as f64], vec![0.0]).unwrap();
        for ix in 0..h {
            for iy in 0..w {
                let (x, y) = grid.bev_cell_center(ix, iy).unwrap();
                prop_assert_eq!(grid.cell_of(x, y), Some((ix, iy)));
            }
        }
    }

    #[test]
    fn identity_alignment(yaw in -3.0f64..3.0, x in -10.0f64..10.0, vals in prop::collection::vec(-5.0f64..5.0, 36)) {
        let grid = BevGrid::square(6, 3.0, 1).unwrap();
        let m = FeatureMap2D::new(1, 6, 6, vals).unwrap();
        let p = EgoPose::planar(0, x, -x, yaw);
        let out = align_history_bev(&m, &p, &p.clone(), &grid).unwrap();
        prop_assert_eq!(out, m);
    }

    #[test]
    fn depth_bin_monotone(d1 in 1.0f64..41.0, d2 in 1.0f64..41.0) {
        let bins = DepthBinSpec::default();
        let (a, b) = (bins.bin_coord(d1).unwrap(), bins.bin_coord(d2).unwrap());
        prop_assert!((a - (d1 - 1.0)).abs() < 1e-12);
        if d1 < d2 { prop_assert!(a < b); }
    }
}
