mod common;

use bevfuse_core::attention::{deform_attn_oracle_2d, deform_attn_oracle_3d, ReferencePoints};
use bevfuse_core::geometry::*;
use bevfuse_core::mmfe::*;
use bevfuse_core::numerics::module::Module;
use bevfuse_core::numerics::ops::LayerNorm;
use bevfuse_core::numerics::tensor::{FeatureGrid3D, FeatureMap2D};
use bevfuse_core::numerics::trilinear_sample_3d;
use common::*;
use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct World {
    grid: BevGrid,
    lidar: LidarFrame,
    rig: CameraRig,
    bins: DepthBinSpec,
}

fn world(n_ref: usize) -> World {
    World {
        grid: BevGrid::new(
            8,
            8,
            [-4.0, 4.0, -4.0, 4.0],
            uniform_anchors(n_ref, 0.0, 1.0),
        )
        .unwrap(),
        lidar: LidarFrame::new(Rigid::identity(), [-4.0, -4.0, -0.5], 1.0, [2, 8, 8]).unwrap(),
        rig: CameraRig::surround(2, 6.0, 16, 12, 0.5).unwrap(),
        bins: DepthBinSpec::uniform(4, 0.5, 4.5).unwrap(),
    }
}

fn cfg(order: Vec<Modality>, form: LidarForm, c: usize) -> MmfeConfig {
    let mut cfg = MmfeConfig::new(c, 3, 3);
    cfg.num_layers = 2;
    cfg.heads = 2;
    cfg.points = 2;
    cfg.depth_channels = 2;
    cfg.modality_order = order;
    cfg.lidar_form = form;
    cfg.ffn_hidden = 4 * c;
    cfg.seed = 7;
    cfg
}

fn inputs(w: &World, form: LidarForm, rng: &mut ChaCha8Rng) -> MmfeInputs {
    let lidar = match form {
        LidarForm::Voxel => ModalField::voxels(
            &FeatureGrid3D::new(3, 2, 8, 8, random_vec(3 * 128, rng)).unwrap(),
            &w.grid,
            &w.lidar,
        ),
        LidarForm::Bev => ModalField::lidar_bev(
            &FeatureMap2D::new(3, 8, 8, random_vec(3 * 64, rng)).unwrap(),
            &w.grid,
            &w.lidar,
        ),
    };
    let image = (0..w.rig.len())
        .map(|j| {
            ModalField::camera(
                &FeatureMap2D::new(3, 6, 8, random_vec(3 * 48, rng)).unwrap(),
                2.0,
                &w.grid,
                &w.rig,
                j,
            )
            .unwrap()
        })
        .collect();
    let depth = (0..w.rig.len())
        .map(|j| {
            let d = FeatureGrid3D::new(2, 4, 6, 8, random_vec(2 * 4 * 48, rng)).unwrap();
            ModalField::frustum(&d, 2.0, &w.bins, &w.grid, &w.rig, j).unwrap()
        })
        .collect();
    MmfeInputs {
        lidar: Some(lidar),
        image,
        depth,
    }
}

#[test]
fn self_attention_matches_oracle_composition() {
    let w = world(2);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut c = cfg(vec![Modality::Points], LidarForm::Bev, 8);
    c.num_layers = 1;
    let mut enc = Mmfe::new(c, &w.grid).unwrap();
    randomize(&mut enc.layers[0].sa, &mut rng, 0.5);
    let x = enc.queries.initial();
    let (y, _) = enc.layers[0].sa_norm.forward(&x);
    let map = FeatureMap2D::from_rows(&y, 8, 8, 8);
    let locs: Vec<f64> = (0..64)
        .flat_map(|n| [(n / 8) as f64, (n % 8) as f64])
        .collect();
    let refs = ReferencePoints::single(2, locs).unwrap();
    let oracle = deform_attn_oracle_2d(&y, &refs, &map, &enc.layers[0].sa);
    let (got, _) = enc.layers[0]
        .sa
        .forward_rows(&y, &refs, &[8, 8], &y)
        .unwrap();
    for (a, b) in got.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn self_attention_init_attends_own_cell() {
    let w = world(1);
    let enc = Mmfe::new(cfg(vec![Modality::Points], LidarForm::Bev, 8), &w.grid).unwrap();
    let sa = &enc.layers[0].sa;
    let x = enc.queries.initial();
    let (y, _) = enc.layers[0].sa_norm.forward(&x);
    let locs: Vec<f64> = (0..64)
        .flat_map(|n| [(n / 8) as f64, (n % 8) as f64])
        .collect();
    let (got, _) = sa
        .forward_rows(&y, &ReferencePoints::single(2, locs).unwrap(), &[8, 8], &y)
        .unwrap();
    for n in 0..64 {
        let own = sa
            .output_proj
            .forward(&sa.value_proj.forward(&y[n * 8..(n + 1) * 8]));
        for ch in 0..8 {
            assert!((got[n * 8 + ch] - own[ch]).abs() < 1e-12);
        }
    }
}

#[test]
fn aligned_lidar_bev_references_hit_own_cell() {
    let w = world(1);
    let refs = lidar_bev_refs(&w.grid, &w.lidar, (8, 8));
    for n in 0..64 {
        assert_eq!(refs.loc(n, 0), &[(n / 8) as f64, (n % 8) as f64]);
    }
}

#[test]
fn points_cross_attention_oracle_and_uniform_field() {
    let w = world(2);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for form in [LidarForm::Bev, LidarForm::Voxel] {
        let mut enc = Mmfe::new(cfg(vec![Modality::Points], form, 8), &w.grid).unwrap();
        let inp = inputs(&w, form, &mut rng);
        let block = &mut enc.layers[0].cross[0];
        randomize(&mut block.attn, &mut rng, 0.7);
        let y = random_vec(64 * 8, &mut rng);
        let (inc, _, _) = block.increment(&y, &inp).unwrap();
        let f = inp.lidar.as_ref().unwrap();
        let oracle = match form {
            LidarForm::Bev => {
                deform_attn_oracle_2d(&y, &f.refs, &f.rows_to_map(&f.rows), &block.attn)
            }
            LidarForm::Voxel => {
                deform_attn_oracle_3d(&y, &f.refs, &f.rows_to_grid(&f.rows), &block.attn)
            }
        };
        for (a, b) in inc.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    // uniform field, offsets pinned to the reference: every query gets the same increment
    let mut c = cfg(vec![Modality::Points], LidarForm::Bev, 8);
    c.offset_ring = 0.0;
    let enc = Mmfe::new(c, &w.grid).unwrap();
    let v = [0.3, -1.2, 0.8];
    let map = FeatureMap2D::from_rows(&v.repeat(64), 3, 8, 8);
    let inp = MmfeInputs {
        lidar: Some(ModalField::lidar_bev(&map, &w.grid, &w.lidar)),
        ..Default::default()
    };
    let y = random_vec(64 * 8, &mut rng);
    let (inc, _, _) = enc.layers[0].cross[0].increment(&y, &inp).unwrap();
    for n in 1..64 {
        for ch in 0..8 {
            assert!((inc[n * 8 + ch] - inc[ch]).abs() < 1e-12);
        }
    }
}

#[test]
fn single_anchor_voxel_path_is_one_trilinear_sample() {
    let w = world(1);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut c = cfg(vec![Modality::Points], LidarForm::Voxel, 8);
    c.offset_ring = 0.0;
    let enc = Mmfe::new(c, &w.grid).unwrap();
    let vox = FeatureGrid3D::new(3, 2, 8, 8, random_vec(3 * 128, &mut rng)).unwrap();
    let inp = MmfeInputs {
        lidar: Some(ModalField::voxels(&vox, &w.grid, &w.lidar)),
        ..Default::default()
    };
    let block = &enc.layers[0].cross[0];
    let y = random_vec(64 * 8, &mut rng);
    let (inc, _, _) = block.increment(&y, &inp).unwrap();
    let refs = &inp.lidar.as_ref().unwrap().refs;
    assert_eq!(refs.per_query, 1);
    for n in 0..64 {
        let l = refs.loc(n, 0);
        assert!(refs.is_valid(n, 0));
        let s = trilinear_sample_3d(&vox, (l[0], l[1], l[2]));
        let expect = block
            .attn
            .output_proj
            .forward(&block.attn.value_proj.forward(&s));
        for ch in 0..8 {
            assert!((inc[n * 8 + ch] - expect[ch]).abs() < 1e-12);
        }
    }
}

#[test]
fn voxel_grid_elsewhere_gives_zero_increment() {
    let w = world(2);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let far = LidarFrame::new(Rigid::identity(), [100.0, 100.0, 0.0], 1.0, [2, 8, 8]).unwrap();
    let enc = Mmfe::new(cfg(vec![Modality::Points], LidarForm::Voxel, 8), &w.grid).unwrap();
    let vox = FeatureGrid3D::new(3, 2, 8, 8, random_vec(3 * 128, &mut rng)).unwrap();
    let inp = MmfeInputs {
        lidar: Some(ModalField::voxels(&vox, &w.grid, &far)),
        ..Default::default()
    };
    let (inc, _, _) = enc.layers[0].cross[0]
        .increment(&random_vec(64 * 8, &mut rng), &inp)
        .unwrap();
    assert!(inc.iter().all(|v| *v == 0.0));
}

/// Hit test for one camera from raw matrices, independent of the projection code.
fn oracle_hits(cam: &Camera, p: [f64; 3]) -> bool {
    let r = rigid_to_rows(&cam.ego_from_cam);
    let t = Matrix4::new(
        r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8], r[9], r[10], r[11], 0.0, 0.0, 0.0,
        1.0,
    );
    let pc = t.try_inverse().unwrap() * Vector4::new(p[0], p[1], p[2], 1.0);
    let k = Matrix3::from_row_slice(&cam.k);
    let img = k * Vector3::new(pc.x, pc.y, pc.z);
    let (u, v) = (img.x / img.z, img.y / img.z);
    pc.z > 0.1 && u >= 0.0 && v >= 0.0 && u < cam.image_width as f64 && v < cam.image_height as f64
}

#[test]
fn hit_counts_match_projection_oracle() {
    let grid = BevGrid::new(8, 8, [-8.0, 8.0, -8.0, 8.0], uniform_anchors(3, 0.0, 2.0)).unwrap();
    let rig = CameraRig::surround(6, 8.0, 24, 16, 1.0).unwrap();
    let fields: Vec<ModalField> = (0..6)
        .map(|j| ModalField::camera(&FeatureMap2D::zeros(2, 4, 6), 4.0, &grid, &rig, j).unwrap())
        .collect();
    let counts = hit_counts(&fields, 64);
    let pts = make_reference_points_3d(&grid);
    let mut saw_two = false;
    for n in 0..64 {
        let expect = rig
            .cameras
            .iter()
            .filter(|c| (0..3).any(|i| oracle_hits(c, pts[n * 3 + i])))
            .count();
        assert_eq!(counts[n], expect, "cell {n}");
        saw_two |= expect == 2;
    }
    assert!(saw_two, "some cell should be seen by exactly two cameras");
}

#[test]
fn duplicated_camera_leaves_increment_unchanged() {
    let w = world(2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let base = inputs(&w, LidarForm::Voxel, &mut rng);
    let dup = MmfeInputs {
        lidar: None,
        image: vec![
            base.image[0].clone(),
            base.image[0].clone(),
            base.image[1].clone(),
        ],
        depth: vec![
            base.depth[0].clone(),
            base.depth[1].clone(),
            base.depth[1].clone(),
        ],
    };
    let enc = Mmfe::new(
        cfg(
            vec![Modality::Points, Modality::Image, Modality::Depth],
            LidarForm::Voxel,
            8,
        ),
        &w.grid,
    )
    .unwrap();
    let y = random_vec(64 * 8, &mut rng);
    let mut nonzero = 0;
    for m in [Modality::Image, Modality::Depth] {
        let mut block = enc.layer_block(0, m).unwrap().clone();
        randomize(&mut block.attn, &mut rng, 0.5);
        let a = block.increment(&y, &base).unwrap().0;
        let b = block.increment(&y, &dup).unwrap().0;
        for (x, z) in a.iter().zip(&b) {
            assert!((x - z).abs() <= 1e-12);
        }
        nonzero += a.iter().filter(|v| **v != 0.0).count();
    }
    assert!(nonzero > 0);
}

#[test]
fn zero_image_features_give_zero_increment_at_init() {
    let w = world(2);
    let enc = Mmfe::new(cfg(vec![Modality::Image], LidarForm::Voxel, 8), &w.grid).unwrap();
    let image = (0..2)
        .map(|j| {
            ModalField::camera(&FeatureMap2D::zeros(3, 6, 8), 2.0, &w.grid, &w.rig, j).unwrap()
        })
        .collect();
    let inp = MmfeInputs {
        image,
        ..Default::default()
    };
    let (inc, _, _) = enc.layers[0].cross[0]
        .increment(&random_vec(512, &mut ChaCha8Rng::seed_from_u64(0)), &inp)
        .unwrap();
    assert!(inc.iter().all(|v| *v == 0.0));
}

#[test]
fn masking_equals_structural_removal() {
    let w = world(2);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let inp = inputs(&w, LidarForm::Voxel, &mut rng);
    let all = vec![Modality::Points, Modality::Image, Modality::Depth];
    for dropped in [Modality::Image, Modality::Points, Modality::Depth] {
        let mut masked_cfg = cfg(all.clone(), LidarForm::Voxel, 8);
        masked_cfg.modality_mask = vec![dropped];
        let masked = Mmfe::new(masked_cfg, &w.grid).unwrap();
        let kept: Vec<Modality> = all.iter().copied().filter(|m| *m != dropped).collect();
        let without = Mmfe::new(cfg(kept, LidarForm::Voxel, 8), &w.grid).unwrap();
        let a = masked.forward(&inp).unwrap().0;
        let b = without.forward(&inp).unwrap().0;
        assert_eq!(a, b, "masking {dropped}");
        // the masked modality's features are not needed at all
        let mut missing = inp.clone();
        match dropped {
            Modality::Points => missing.lidar = None,
            Modality::Image => missing.image.clear(),
            Modality::Depth => missing.depth.clear(),
        }
        assert_eq!(masked.forward(&missing).unwrap().0, a);
        assert!(without.forward(&missing).is_ok());
    }
    // unmasked but missing → input error
    let enc = Mmfe::new(cfg(all, LidarForm::Voxel, 8), &w.grid).unwrap();
    let mut missing = inp;
    missing.image.clear();
    assert!(enc.forward(&missing).is_err());
}

#[test]
fn order_changes_output_and_forward_is_deterministic() {
    let w = world(2);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let inp = inputs(&w, LidarForm::Voxel, &mut rng);
    let lc = Mmfe::new(
        cfg(vec![Modality::Points, Modality::Image], LidarForm::Voxel, 8),
        &w.grid,
    )
    .unwrap();
    let cl = Mmfe::new(
        cfg(vec![Modality::Image, Modality::Points], LidarForm::Voxel, 8),
        &w.grid,
    )
    .unwrap();
    let a = lc.forward(&inp).unwrap().0;
    let b = cl.forward(&inp).unwrap().0;
    assert!(a.data.iter().chain(&b.data).all(|v| v.is_finite()));
    assert_ne!(a, b);
    assert_eq!(lc.forward(&inp).unwrap().0, a);
}

#[test]
fn empty_inputs_stay_finite() {
    let w = world(2);
    let enc = Mmfe::new(
        cfg(
            vec![Modality::Points, Modality::Image, Modality::Depth],
            LidarForm::Voxel,
            8,
        ),
        &w.grid,
    )
    .unwrap();
    let inp = MmfeInputs {
        lidar: Some(ModalField::voxels(
            &FeatureGrid3D::zeros(3, 2, 8, 8),
            &w.grid,
            &w.lidar,
        )),
        image: (0..2)
            .map(|j| {
                ModalField::camera(&FeatureMap2D::zeros(3, 6, 8), 2.0, &w.grid, &w.rig, j).unwrap()
            })
            .collect(),
        depth: (0..2)
            .map(|j| {
                ModalField::frustum(
                    &FeatureGrid3D::zeros(2, 4, 6, 8),
                    2.0,
                    &w.bins,
                    &w.grid,
                    &w.rig,
                    j,
                )
                .unwrap()
            })
            .collect(),
    };
    let out = enc.forward(&inp).unwrap().0;
    assert!(out.data.iter().all(|v| v.is_finite()));
}

#[test]
fn layer_norm_is_pre_norm_identity_at_unit_scale() {
    // sanity on the normaliser used by every sublayer
    let ln = LayerNorm::new(4);
    let (y, _) = ln.forward(&[1.0, 2.0, 3.0, 4.0]);
    assert!((y.iter().sum::<f64>()).abs() < 1e-12);
}

#[test]
fn full_encoder_gradients() {
    for form in [LidarForm::Voxel, LidarForm::Bev] {
        let w = world(2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let inp = inputs(&w, form, &mut rng);
        let enc = Mmfe::new(
            cfg(
                vec![Modality::Points, Modality::Image, Modality::Depth],
                form,
                8,
            ),
            &w.grid,
        )
        .unwrap();
        let mut p = Probe::new(enc)
            .with_input("lidar", inp.lidar.as_ref().unwrap().rows.clone())
            .with_input("image0", inp.image[0].rows.clone())
            .with_input("image1", inp.image[1].rows.clone())
            .with_input("depth0", inp.depth[0].rows.clone())
            .with_input("depth1", inp.depth[1].rows.clone());
        randomize(&mut p.module, &mut rng, 0.3);
        let proj = random_vec(64 * 8, &mut rng);
        let build = |p: &Probe<Mmfe>| {
            let mut i = inp.clone();
            i.lidar.as_mut().unwrap().rows = p.input(0).to_vec();
            i.image[0].rows = p.input(1).to_vec();
            i.image[1].rows = p.input(2).to_vec();
            i.depth[0].rows = p.input(3).to_vec();
            i.depth[1].rows = p.input(4).to_vec();
            i
        };
        let cur = build(&p);
        let (_, cache) = p.module.forward_rows(&cur).unwrap();
        p.zero_grad();
        let g = p.module.backward(&cache, &cur, &proj);
        p.add_input_grad(0, g.lidar.as_ref().unwrap());
        p.add_input_grad(1, &g.image[0]);
        p.add_input_grad(2, &g.image[1]);
        p.add_input_grad(3, &g.depth[0]);
        p.add_input_grad(4, &g.depth[1]);
        let r = gradcheck(&mut p, |p| {
            dot(&p.module.forward_rows(&build(p)).unwrap().0, &proj)
        });
        assert_eq!(r.checked, r.total);
    }
}
