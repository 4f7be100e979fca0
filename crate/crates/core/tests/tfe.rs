mod common;

use bevfuse_core::geometry::{BevGrid, EgoPose};
use bevfuse_core::numerics::module::Module;
use bevfuse_core::numerics::tensor::FeatureMap2D;
use bevfuse_core::tfe::*;
use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const C: usize = 8;

fn grid() -> BevGrid {
    BevGrid::square(8, 4.0, 1).unwrap()
}

fn cfg(layers: usize, frames: usize) -> TfeConfig {
    let mut c = TfeConfig::new(C, frames);
    c.num_layers = layers;
    c.heads = 2;
    c.points = 2;
    c.seed = 3;
    c
}

fn map(rng: &mut ChaCha8Rng) -> FeatureMap2D {
    FeatureMap2D::new(C, 8, 8, random_vec(C * 64, rng)).unwrap()
}

#[test]
fn cold_start_is_finite() {
    let g = grid();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cur = map(&mut rng);
    for fuser in [
        TemporalFusion::attention(cfg(3, 4), &g).unwrap(),
        TemporalFusion::concat(&cfg(3, 4), &g).unwrap(),
    ] {
        let out = tfe_forward(
            &cur,
            &BevHistory::new(3),
            &EgoPose::planar(0, 0.0, 0.0, 0.0),
            &fuser,
            &g,
        )
        .unwrap();
        assert_eq!((out.channels, out.height, out.width), (C, 8, 8));
        assert!(out.data.iter().all(|v| v.is_finite()));
        assert_ne!(out, cur);
    }
}

#[test]
fn identical_frames_scale_the_attention_term() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut tfe = Tfe::new(cfg(2, 8), 8, 8).unwrap();
    randomize(&mut tfe, &mut rng, 0.5);
    let frame = random_vec(C * 64, &mut rng);
    let y = random_vec(C * 64, &mut rng);
    for layer in 0..2 {
        let (single, _) = tfe.attention_term(layer, &y, &[&frame]).unwrap();
        for t in [2usize, 3, 4, 8] {
            let frames = vec![frame.as_slice(); t];
            let (sum, _) = tfe.attention_term(layer, &y, &frames).unwrap();
            let expect: Vec<f64> = single.iter().map(|v| t as f64 * v).collect();
            assert_eq!(sum, expect, "layer {layer}, T = {t}");
        }
    }
}

#[test]
fn mean_toggle_divides_by_frame_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut c = cfg(1, 4);
    c.mean = true;
    let mut tfe = Tfe::new(c, 8, 8).unwrap();
    randomize(&mut tfe, &mut rng, 0.5);
    let a = random_vec(C * 64, &mut rng);
    let b = random_vec(C * 64, &mut rng);
    let y = random_vec(C * 64, &mut rng);
    let (m, _) = tfe.attention_term(0, &y, &[&a, &b]).unwrap();
    tfe.cfg.mean = false;
    let (s, _) = tfe.attention_term(0, &y, &[&a, &b]).unwrap();
    for (x, z) in m.iter().zip(&s) {
        assert!((x - z / 2.0).abs() < 1e-14);
    }
}

#[test]
fn silent_sublayers_pass_the_current_map_through() {
    let g = grid();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut tfe = Tfe::new(cfg(3, 4), 8, 8).unwrap();
    for l in &mut tfe.layers {
        l.attn.output_proj.w.data.fill(0.0);
        l.attn.output_proj.b.data.fill(0.0);
        l.ffn.fc2.w.data.fill(0.0);
        l.ffn.fc2.b.data.fill(0.0);
    }
    let cur = map(&mut rng);
    let out = tfe_forward(
        &cur,
        &BevHistory::new(3),
        &EgoPose::planar(0, 0.0, 0.0, 0.0),
        &TemporalFusion::Attention(tfe),
        &g,
    )
    .unwrap();
    assert_eq!(out, cur);
}

#[test]
fn window_limits_history() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut tfe = Tfe::new(cfg(1, 2), 8, 8).unwrap();
    randomize(&mut tfe, &mut rng, 0.5);
    let cur = random_vec(C * 64, &mut rng);
    let h1 = random_vec(C * 64, &mut rng);
    let h2 = random_vec(C * 64, &mut rng);
    let (a, _) = tfe.forward_rows(&cur, &[h1.clone()]).unwrap();
    let (b, _) = tfe.forward_rows(&cur, &[h1, h2]).unwrap();
    assert_eq!(a, b);
}

#[test]
fn history_is_aligned_before_fusion() {
    // The ego has since moved one cell back along x, so the aligned map
    // reads each row from the historical row before it.
    let g = grid();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut tfe = Tfe::new(cfg(1, 2), 8, 8).unwrap();
    randomize(&mut tfe, &mut rng, 0.5);
    let fuser = TemporalFusion::Attention(tfe);
    let cur = map(&mut rng);
    let hist = map(&mut rng);
    let mut shifted = FeatureMap2D::zeros(C, 8, 8);
    for c in 0..C {
        for i in 1..8 {
            for j in 0..8 {
                *shifted.at_mut(c, i, j) = hist.at(c, i - 1, j);
            }
        }
    }
    let mut moving = BevHistory::new(4);
    moving
        .push(hist, EgoPose::planar(0, 0.0, 0.0, 0.0))
        .unwrap();
    let mut still = BevHistory::new(4);
    still
        .push(shifted, EgoPose::planar(0, 0.0, 0.0, 0.0))
        .unwrap();
    let a = tfe_forward(
        &cur,
        &moving,
        &EgoPose::planar(1, -1.0, 0.0, 0.0),
        &fuser,
        &g,
    )
    .unwrap();
    let b = tfe_forward(&cur, &still, &EgoPose::planar(1, 0.0, 0.0, 0.0), &fuser, &g).unwrap();
    for (x, y) in a.data.iter().zip(&b.data) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn attention_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut tfe = Tfe::new(cfg(1, 3), 8, 8).unwrap();
    randomize(&mut tfe, &mut rng, 0.3);
    let hist = vec![random_vec(C * 64, &mut rng), random_vec(C * 64, &mut rng)];
    let proj = random_vec(C * 64, &mut rng);
    let mut p = Probe::new(tfe).with_input("current", random_vec(C * 64, &mut rng));
    let (_, cache) = p.module.forward_rows(p.input(0), &hist).unwrap();
    p.zero_grad();
    let g = p.module.backward(&cache, &proj);
    p.add_input_grad(0, &g);
    let r = gradcheck(&mut p, |p| {
        dot(&p.module.forward_rows(p.input(0), &hist).unwrap().0, &proj)
    });
    assert_eq!(r.checked, r.total);
}

#[test]
fn mean_attention_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let mut c = cfg(2, 3);
    c.mean = true;
    let mut tfe = Tfe::new(c, 8, 8).unwrap();
    randomize(&mut tfe, &mut rng, 0.3);
    let hist = vec![random_vec(C * 64, &mut rng)];
    let proj = random_vec(C * 64, &mut rng);
    let mut p = Probe::new(tfe).with_input("current", random_vec(C * 64, &mut rng));
    let (_, cache) = p.module.forward_rows(p.input(0), &hist).unwrap();
    p.zero_grad();
    let g = p.module.backward(&cache, &proj);
    p.add_input_grad(0, &g);
    gradcheck(&mut p, |p| {
        dot(&p.module.forward_rows(p.input(0), &hist).unwrap().0, &proj)
    });
}

#[test]
fn concat_gradients() {
    let g = grid();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let fuser = TemporalFusion::concat(&cfg(1, 3), &g).unwrap();
    let hist = vec![random_vec(C * 64, &mut rng)];
    let proj = random_vec(C * 64, &mut rng);
    let mut p = Probe::new(fuser).with_input("current", random_vec(C * 64, &mut rng));
    let (_, cache) = p.module.forward_rows(p.input(0), &hist).unwrap();
    p.zero_grad();
    let gc = p.module.backward(&cache, &proj);
    p.add_input_grad(0, &gc);
    gradcheck(&mut p, |p| {
        dot(&p.module.forward_rows(p.input(0), &hist).unwrap().0, &proj)
    });
}

#[test]
fn fusers_share_output_shape() {
    let g = grid();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cur = random_vec(C * 64, &mut rng);
    let hist = vec![random_vec(C * 64, &mut rng); 3];
    let a = TemporalFusion::attention(cfg(1, 4), &g)
        .unwrap()
        .forward_rows(&cur, &hist)
        .unwrap()
        .0;
    let b = TemporalFusion::concat(&cfg(1, 4), &g)
        .unwrap()
        .forward_rows(&cur, &hist)
        .unwrap()
        .0;
    assert_eq!(a.len(), b.len());
}

#[test]
fn shape_mismatch_is_rejected() {
    let tfe = Tfe::new(cfg(1, 2), 8, 8).unwrap();
    assert!(tfe.forward_rows(&[0.0; 10], &[]).is_err());
}
