use std::fs;

use dino4d_core::geometry::{pixel_center, Pixel};
use dino4d_core::scene::{generate, sample_window, write_bundle, SceneConfig, SceneSample, SuiteConfig, MAX_STRIDE};
use dino4d_core::Error;
use proptest::prelude::*;

fn small(seed: u64) -> SceneConfig {
    SceneConfig {
        width: 56,
        height: 56,
        frames: 8,
        seed,
        ..SceneConfig::default()
    }
}

#[test]
fn default_suite_is_self_consistent() {
    for cfg in SuiteConfig::default().scene_configs() {
        let scene = generate(&cfg).unwrap();
        let err = scene.max_reprojection_error().unwrap();
        assert!(err <= 1e-6, "scene seed {}: {err:e} px", cfg.seed);
    }
}

/// Where a query is visible, the camera ray through its projection hits the
/// same surface at the same depth; where invisible, something strictly nearer.
fn check_visibility(scene: &SceneSample) {
    let traj = &scene.gt_trajectories;
    for q in 0..traj.num_queries {
        for t in 0..traj.frames {
            let p = traj.position(q, t);
            let cam = &scene.cameras[t];
            let px = cam.project(p).unwrap();
            let (o, d) = cam.world_ray(&px);
            let hit = scene.world.cast(&o, &d, t as f64, 1e-9).unwrap();
            let depth = cam.depth_of(p);
            if traj.is_visible(q, t) {
                let (x, y) = scene.query_pixels[q];
                let surface = scene.surface_at(0, x, y).unwrap().surface;
                assert_eq!(hit.surface, surface, "query {q} frame {t}");
                assert!((hit.s - depth).abs() <= 1e-6, "query {q} frame {t}: {} vs {depth}", hit.s);
                assert!((scene.world.position(&hit, t as f64) - p).norm() <= 1e-6);
            } else {
                assert!(hit.s < depth, "occluded query {q} frame {t} has no nearer surface");
            }
        }
    }
}

#[test]
fn trajectories_agree_with_pointmaps() {
    for seed in 0..3 {
        let scene = generate(&small(seed)).unwrap();
        let traj = &scene.gt_trajectories;
        for (q, &(x, y)) in scene.query_pixels.iter().enumerate() {
            let pm = &scene.gt_pointmaps[0];
            assert!((traj.position(q, 0) - pm.points[pm.index(x, y)]).norm() <= 1e-9);
            let px = scene.cameras[0].project(traj.position(q, 0)).unwrap();
            assert!((px - pixel_center(x, y)).norm() <= 1e-6);
        }
        check_visibility(&scene);
    }
}

#[test]
fn occlusions_happen_and_are_explained() {
    let mut occluded = 0;
    for cfg in SuiteConfig::default().scene_configs().into_iter().take(3) {
        let scene = generate(&cfg).unwrap();
        occluded += scene.gt_trajectories.visible.iter().filter(|v| !**v).count();
        check_visibility(&scene);
    }
    assert!(occluded > 0, "default scenes should contain occlusions");
}

#[test]
fn static_scene_has_constant_trajectories() {
    let cfg = SceneConfig {
        num_objects: 0,
        angular_speed: 0.0,
        ..small(3)
    };
    let scene = generate(&cfg).unwrap();
    let traj = &scene.gt_trajectories;
    for q in 0..traj.num_queries {
        for t in 1..traj.frames {
            assert_eq!(traj.position(q, t), traj.position(q, 0));
            assert!(traj.is_visible(q, t));
        }
    }
    assert_eq!(scene.images[0], scene.images[cfg.frames - 1]);
}

#[test]
fn textureless_band_is_flat_but_labelled() {
    let scene = generate(&small(5)).unwrap();
    let (img, labels) = (&scene.images[0], &scene.labels[0]);
    let band: Vec<usize> = (0..labels.labels.len()).filter(|&k| labels.labels[k] == 1).collect();
    assert!(!band.is_empty());
    assert!(band.iter().all(|&k| img.data[k] == 0.5));
    let others: Vec<f64> = (0..img.data.len()).filter(|&k| labels.labels[k] == 0).map(|k| img.data[k]).collect();
    let spread = others.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - others.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(spread > 0.1, "textured background should vary");
}

#[test]
fn same_seed_gives_identical_bundles() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        write_bundle(&generate(&small(11)).unwrap(), d.path(), true).unwrap();
    }
    let mut names: Vec<_> = fs::read_dir(dirs[0].path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() > 5);
    for n in names {
        let (a, b) = (dirs[0].path().join(&n), dirs[1].path().join(&n));
        if a.is_file() {
            assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap(), "{n:?}");
        }
    }
    let other = generate(&small(12)).unwrap();
    assert_ne!(other.images, generate(&small(11)).unwrap().images);
}

#[test]
fn window_with_stride_four_in_long_sequence() {
    let valid_starts: Vec<usize> = (0..100).filter(|s| s + 23 * 4 < 100).collect();
    for seed in 0..200 {
        let w = sample_window(100, 24, Some(4), seed).unwrap();
        assert_eq!(w.len(), 24);
        assert!(valid_starts.contains(&w[0]));
        assert!(w.windows(2).all(|p| p[1] - p[0] == 4));
        assert!(*w.last().unwrap() < 100);
    }
}

#[test]
fn full_length_window_is_the_whole_sequence() {
    assert_eq!(sample_window(24, 24, Some(1), 9).unwrap(), (0..24).collect::<Vec<_>>());
    assert_eq!(sample_window(24, 24, None, 9).unwrap(), (0..24).collect::<Vec<_>>());
    assert!(matches!(sample_window(24, 25, None, 0), Err(Error::WindowTooLong { window: 25, frames: 24 })));
    assert!(matches!(sample_window(24, 12, Some(3), 0), Err(Error::WindowTooLong { .. })));
}

#[test]
fn invalid_configs_are_rejected() {
    for cfg in [
        SceneConfig { frames: 1, ..small(0) },
        SceneConfig { width: 50, ..small(0) },
        SceneConfig { textureless_fraction: 1.5, ..small(0) },
    ] {
        assert!(matches!(generate(&cfg), Err(Error::ConfigInvalid(_))));
    }
}

proptest! {
    #[test]
    fn sampled_windows_are_uniform_strides(frames in 2usize..120, window in 1usize..30, seed in any::<u64>()) {
        match sample_window(frames, window, None, seed) {
            Ok(w) => {
                prop_assert_eq!(w.len(), window);
                prop_assert!(*w.last().unwrap() < frames);
                if window > 1 {
                    let s = w[1] - w[0];
                    prop_assert!((1..=MAX_STRIDE).contains(&s));
                    prop_assert!(w.windows(2).all(|p| p[1] - p[0] == s));
                }
                prop_assert_eq!(w, sample_window(frames, window, None, seed).unwrap());
            }
            Err(e) => {
                prop_assert!(window > frames, "unexpected error {:?}", e);
            }
        }
    }
}

#[test]
fn pixel_centres_are_half_offsets() {
    assert_eq!(pixel_center(3, 4), Pixel::new(3.5, 4.5));
}
