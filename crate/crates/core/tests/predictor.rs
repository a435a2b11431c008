use dino4d_core::geometry::{PointmapRole, Vec3};
use dino4d_core::nn::ParamSet;
use dino4d_core::predictor::geometric_loss;
use dino4d_core::scene::{generate, SceneConfig};
use dino4d_core::train::{adamw_step, compute_step, LossWeights, Model, ModelConfig, OptimState, TrainConfig};

fn scene() -> dino4d_core::scene::SceneSample {
    generate(&SceneConfig {
        frames: 6,
        seed: 21,
        ..SceneConfig::default()
    })
    .unwrap()
}

#[test]
fn same_frame_with_zero_heads_is_the_base_surface() {
    let s = scene();
    let model = Model::init(&ModelConfig::default(), 3).unwrap();
    let enc = model.encode_frame(&s.images[2], &s.labels[2], 2).unwrap();
    let intr = s.intrinsics();
    let (pred, _) = model.predict_pair((&s.images[2], &s.images[2]), (&enc, &enc), &intr).unwrap();
    let d0 = model.config.predictor.base_depth;
    for (k, (t, r)) in pred.tracking.points.iter().zip(&pred.reconstruction.points).enumerate() {
        let expect = intr.ray(&dino4d_core::geometry::pixel_center(k % 112, k / 112)) * d0;
        assert_eq!(*t, expect);
        assert_eq!(*r, expect);
        assert_eq!(t.z, d0);
    }
    assert!(pred.confidence.iter().all(|c| *c == 1.0));
}

#[test]
fn forward_is_deterministic_and_role_tagged() {
    let s = scene();
    let model = Model::init(&ModelConfig::default(), 4).unwrap();
    let enc: Vec<_> = (0..6).map(|f| model.encode_frame(&s.images[f], &s.labels[f], f).unwrap()).collect();
    let intr = s.intrinsics();
    for (i, j) in [(0, 1), (0, 5), (2, 4), (3, 3), (4, 1)] {
        let run = || model.predict_pair((&s.images[i], &s.images[j]), (&enc[i], &enc[j]), &intr).unwrap().0;
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        assert_eq!((a.tracking.source_frame, a.tracking.target_time), (i, j));
        assert_eq!((a.reconstruction.source_frame, a.reconstruction.target_time), (j, j));
        assert_eq!(a.reconstruction.role(), PointmapRole::Reconstruction);
        let expect = match i.cmp(&j) {
            std::cmp::Ordering::Less => PointmapRole::Tracking,
            std::cmp::Ordering::Equal => PointmapRole::Reconstruction,
            std::cmp::Ordering::Greater => PointmapRole::Backward,
        };
        assert_eq!(a.tracking.role(), expect);
        assert!(a.confidence.iter().all(|c| *c > 0.0 && c.is_finite()));
    }
}

#[test]
fn geometric_loss_vanishes_only_at_truth() {
    let s = scene();
    let (gt_t, gt_r) = s.pair_ground_truth(0, 3).unwrap();
    let mut pred = dino4d_core::predictor::PairPrediction {
        tracking: gt_t.clone(),
        reconstruction: gt_r.clone(),
        confidence: vec![1.0; gt_t.len()],
    };
    assert_eq!(geometric_loss(&pred, &gt_t, &gt_r).unwrap().value, 0.0);
    pred.tracking.points[500] += Vec3::new(0.3, 0.0, 0.4);
    let l = geometric_loss(&pred, &gt_t, &gt_r).unwrap().value;
    assert!((l - 0.25 / gt_t.num_valid() as f64).abs() < 1e-15);
}

#[test]
fn overfits_a_single_pair() {
    let s = generate(&SceneConfig {
        width: 8,
        height: 8,
        patch_size: 4,
        frames: 6,
        seed: 21,
        ..SceneConfig::default()
    })
    .unwrap();
    let mut cfg = TrainConfig {
        weights: LossWeights {
            lambda_reproj: 0.0,
            lambda_geo: 1.0,
            lambda_sem: 0.0,
            lambda_diff: 0.0,
        },
        ..TrainConfig::default()
    };
    cfg.model.predictor.patch_size = 4;
    cfg.model.features.patch_size = 4;
    let mut model = Model::init(&cfg.model, 0).unwrap();
    let mut state = OptimState::new(model.num_params(), cfg.optimizer);
    let window = [0, 3];
    for step in 0..200 {
        let g = compute_step(&model, &s, &window, &cfg, step).unwrap().grads;
        let mut flat = model.to_flat();
        adamw_step(&mut flat, &g.to_flat(), &mut state).unwrap();
        model.set_flat(&flat);
    }
    let e0 = model.encode_frame(&s.images[0], &s.labels[0], 0).unwrap();
    let e3 = model.encode_frame(&s.images[3], &s.labels[3], 3).unwrap();
    let (pred, _) = model.predict_pair((&s.images[0], &s.images[3]), (&e0, &e3), &s.intrinsics()).unwrap();
    let (gt, _) = s.pair_ground_truth(0, 3).unwrap();
    let errs: Vec<f64> = (0..gt.len())
        .filter(|&k| gt.valid[k])
        .map(|k| (pred.tracking.points[k] - gt.points[k]).norm())
        .collect();
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    assert!(mean < 0.05, "mean tracking error {mean}");
}
