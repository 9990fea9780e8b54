use gpgs_core::densify::{
    filter_by_variance, generate_samples, merge_clouds, FilterConfig, PointSource, PredictedPoint, PredictedPointSet,
    SamplingConfig,
};
use gpgs_core::gp::{train_gp, KernelConfig, Smoothness, TrainConfig};
use gpgs_core::pipeline::{densify_scene, DensifyConfig, KeyFrameModel};
use gpgs_core::sfm::{build_pixel_dataset, write_ply, PixelSample, TargetVector};
use gpgs_core::synthetic::SceneSpec;
use proptest::prelude::*;

fn predicted(vars: &[f64]) -> PredictedPointSet<f64> {
    let points = vars
        .iter()
        .enumerate()
        .map(|(i, &v)| PredictedPoint {
            pixel: PixelSample::new(0.5, 0.5),
            mean: TargetVector([i as f64, 0.0, 1.0, 0.2, 0.4, 0.6]),
            variance: [0.0, 0.0, 0.0, v, v, v],
            mean_rgb_var: v,
            retained: false,
        })
        .collect();
    PredictedPointSet { points, threshold: None }
}

fn mean(vals: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = vals.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn arb_pixels() -> impl Strategy<Value = (u32, u32, Vec<[f64; 2]>)> {
    (8u32..1500, 8u32..1500).prop_flat_map(|(w, h)| {
        let px = (0.0..w as f64, 0.0..h as f64).prop_map(|(u, v)| [u, v]);
        (Just(w), Just(h), prop::collection::vec(px, 1..40))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn samples_stay_inside_the_image(
        (w, h, pixels) in arb_pixels(),
        beta in 0.01f64..0.99,
        m in 1usize..16,
        on_boundary in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let cfg = SamplingConfig { beta, angular_resolution: m, on_boundary };
        let samples = generate_samples(&pixels, w, h, &cfg, seed);
        prop_assert!(samples.len() <= m * pixels.len());
        for s in &samples {
            prop_assert!((0.0..=1.0).contains(&s.u_norm) && (0.0..=1.0).contains(&s.v_norm));
            let (u, v) = (s.u_norm * w as f64, s.v_norm * h as f64);
            prop_assert!(u >= 0.0 && u < w as f64 && v >= 0.0 && v < h as f64);
        }
    }

    #[test]
    fn boundary_samples_lie_on_the_circle((w, h, pixels) in arb_pixels(), beta in 0.01f64..0.5, m in 1usize..16) {
        let cfg = SamplingConfig { beta, angular_resolution: m, on_boundary: true };
        let r = beta * w.min(h) as f64;
        for s in generate_samples(&pixels, w, h, &cfg, 0) {
            let (u, v) = (s.u_norm * w as f64, s.v_norm * h as f64);
            let hit = pixels.iter().any(|p| ((u - p[0]).hypot(v - p[1]) - r).abs() <= 1e-9);
            prop_assert!(hit, "({u}, {v}) is not at distance {r} from any seed pixel");
        }
    }

    #[test]
    fn filter_keeps_the_least_uncertain_quantile(
        vars in prop::collection::vec(prop_oneof![0.0f64..1.0, (0u8..4).prop_map(|k| k as f64 * 0.25)], 1..120),
        q in 0.01f64..=1.0,
    ) {
        let n = vars.len();
        let out = filter_by_variance(predicted(&vars), &FilterConfig { quantile: q }).unwrap();
        let kept = out.retained_count();
        let floor = FilterConfig { quantile: q }.keep_count(n);
        prop_assert!(kept >= floor && kept <= n);
        let retained = out.points.iter().filter(|p| p.retained).map(|p| p.mean_rgb_var);
        let rejected = out.points.iter().filter(|p| !p.retained).map(|p| p.mean_rgb_var);
        let max_kept = retained.clone().fold(f64::NEG_INFINITY, f64::max);
        let min_rejected = rejected.clone().fold(f64::INFINITY, f64::min);
        prop_assert!(max_kept <= min_rejected);

        let before = mean(out.points.iter().map(|p| p.mean_rgb_var));
        let after = mean(retained);
        prop_assert!(after <= before + 1e-15);
        if rejected.count() > 0 && max_kept < min_rejected {
            prop_assert!(after < before);
        }
    }

    #[test]
    fn merge_keeps_sparse_points_exactly(seed in 0u64..1000, vars in prop::collection::vec(0.0f64..1.0, 0..30)) {
        let scene = SceneSpec { ground_truth_points: 200, sparse_points: 40, noise: 0.01, seed, ..SceneSpec::default() }
            .generate()
            .unwrap();
        let preds = filter_by_variance(predicted(&vars), &FilterConfig { quantile: 0.5 }).unwrap_or(predicted(&[]));
        let cloud = merge_clouds(&scene.model, &preds);
        prop_assert_eq!(cloud.len(), scene.model.points3d.len() + preds.retained_count());
        for (c, p) in cloud.points.iter().zip(&scene.model.points3d) {
            prop_assert_eq!(c.source, PointSource::Sfm);
            prop_assert_eq!(c.position.map(f32::to_bits), p.position.map(|v| (v as f32).to_bits()));
            prop_assert_eq!(c.color, p.color);
        }
        prop_assert_eq!(cloud.count(PointSource::Gp), preds.retained_count());
    }
}

#[test]
fn quantile_one_keeps_everything() {
    let out = filter_by_variance(predicted(&[0.3, 0.1, 0.9, 0.2]), &FilterConfig { quantile: 1.0 }).unwrap();
    assert_eq!(out.retained_count(), 4);
}

#[test]
fn densification_is_byte_deterministic() {
    let scene =
        SceneSpec { ground_truth_points: 600, sparse_points: 80, noise: 0.005, seed: 21, ..SceneSpec::default() }
            .generate()
            .unwrap();
    let ds = build_pixel_dataset::<f64>(&scene.model, 1, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let cfg = TrainConfig { iterations: 40, seed: 2, ..TrainConfig::default() };
        let gp = train_gp(&ds, &KernelConfig::matern(Smoothness::Half), &cfg).unwrap();
        let frames = [KeyFrameModel { model: &gp, depth: None }];
        let out = densify_scene(&scene.model, &frames, &DensifyConfig { seed: 2, ..DensifyConfig::default() }).unwrap();
        assert_eq!(out.cloud.len(), scene.model.points3d.len() + out.report.retained);
        assert!(out.candidates <= 8 * ds.len());
        let path = dir.path().join(name);
        write_ply(&out.cloud, &path, true).unwrap();
        std::fs::read(path).unwrap()
    };
    assert_eq!(run("a.ply"), run("b.ply"));
}

#[test]
fn depth_models_need_a_depth_map() {
    let scene =
        SceneSpec { ground_truth_points: 300, sparse_points: 30, seed: 4, ..SceneSpec::default() }.generate().unwrap();
    let ds = build_pixel_dataset::<f64>(&scene.model, 1, Some(&scene.depth)).unwrap();
    assert_eq!(ds.input_dim().unwrap(), 3);
    let gp = train_gp(
        &ds,
        &KernelConfig::matern(Smoothness::Half),
        &TrainConfig { iterations: 5, ..TrainConfig::default() },
    )
    .unwrap();
    let cfg = DensifyConfig::default();
    assert!(densify_scene(&scene.model, &[KeyFrameModel { model: &gp, depth: None }], &cfg).is_err());
    let out = densify_scene(&scene.model, &[KeyFrameModel { model: &gp, depth: Some(&scene.depth) }], &cfg).unwrap();
    assert!(out.report.retained > 0);
}
