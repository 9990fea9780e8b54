use gpgs_core::gp::{
    gram_matrix, kernel_value, nll, nll_gradient, KernelConfig, KernelFamily, OutputGp, Smoothness, TrainedGp,
    NOISE_FLOOR, OUTPUTS,
};
use gpgs_core::linalg::Matrix;
use gpgs_core::sfm::{PixelSample, PixelToPointDataset, Sample, TargetVector};
use proptest::prelude::*;

const FAMILIES: [KernelFamily; 4] = [
    KernelFamily::Matern(Smoothness::Half),
    KernelFamily::Matern(Smoothness::ThreeHalves),
    KernelFamily::Matern(Smoothness::FiveHalves),
    KernelFamily::Rbf,
];

fn arb_family() -> impl Strategy<Value = KernelFamily> {
    prop::sample::select(FAMILIES.to_vec())
}

fn arb_kernel() -> impl Strategy<Value = KernelConfig<f64>> {
    (arb_family(), 0.2f64..3.0, 0.05f64..0.8, 1e-4f64..1e-1)
        .prop_map(|(family, sf2, ell, sn2)| KernelConfig::with_values(family, sf2, ell, sn2))
}

/// `n` points in the unit square, at least `gap` apart so the Gram matrix stays well
/// conditioned.
fn arb_inputs(n: std::ops::Range<usize>, gap: f64) -> impl Strategy<Value = Matrix<f64>> {
    prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), n).prop_map(move |pts| {
        let mut kept: Vec<(f64, f64)> = Vec::new();
        for p in pts {
            if kept.iter().all(|q| (p.0 - q.0).hypot(p.1 - q.1) >= gap) {
                kept.push(p);
            }
        }
        Matrix::from_fn(kept.len(), 2, |i, j| if j == 0 { kept[i].0 } else { kept[i].1 })
    })
}

fn targets(x: &Matrix<f64>, phase: f64) -> Vec<f64> {
    (0..x.rows()).map(|i| (4.0 * x.get(i, 0) + phase).sin() + 0.5 * (3.0 * x.get(i, 1)).cos()).collect()
}

fn dataset(x: &Matrix<f64>, shift: [f64; OUTPUTS]) -> PixelToPointDataset<f64> {
    let samples = (0..x.rows())
        .map(|i| {
            let (u, v) = (x.get(i, 0), x.get(i, 1));
            let raw = [u + v, u * v, (3.0 * u).sin(), v * v, (2.0 * v).cos(), u - v];
            let t: [f64; OUTPUTS] = std::array::from_fn(|o| raw[o] + shift[o]);
            Sample { input: PixelSample::new(u, v), target: TargetVector(t) }
        })
        .collect();
    PixelToPointDataset { image_id: 1, width: 100, height: 100, samples }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_is_symmetric(cfg in arb_kernel(), a in any::<[i16; 3]>(), b in any::<[i16; 3]>()) {
        let (a, b) = (a.map(|v| v as f64 / 1e4), b.map(|v| v as f64 / 1e4));
        prop_assert_eq!(kernel_value(&cfg, &a, &b).unwrap().to_bits(), kernel_value(&cfg, &b, &a).unwrap().to_bits());
    }

    #[test]
    fn gram_matrix_is_positive_semidefinite(
        cfg in arb_kernel(),
        x in arb_inputs(2..40, 0.0),
        v in prop::collection::vec(-1.0f64..1.0, 40),
    ) {
        let k = gram_matrix(&cfg, &x, 0.0);
        let v = &v[..x.rows()];
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        prop_assume!(norm > 1e-3);
        let v: Vec<f64> = v.iter().map(|a| a / norm).collect();
        let q: f64 = k.mul_vec(&v).iter().zip(&v).map(|(a, b)| a * b).sum();
        prop_assert!(q >= -1e-9, "vᵀKv = {q}");
    }

    #[test]
    fn posterior_variance_is_bounded_by_the_prior(
        cfg in arb_kernel(),
        x in arb_inputs(3..30, 0.02),
        queries in prop::collection::vec((-0.2f64..1.2, -0.2f64..1.2), 1..20),
    ) {
        let gp = OutputGp::fit(cfg, &x, &targets(&x, 0.3), 1e-8).unwrap();
        for (a, b) in queries {
            let (_, var) = gp.predict(&x, &[a, b]);
            prop_assert!(var <= cfg.signal_var() + 1e-9, "{var} > {}", cfg.signal_var());
        }
    }

    #[test]
    fn gradient_matches_central_differences(
        family in arb_family(),
        sf2 in 0.3f64..2.0,
        ell in 0.1f64..0.6,
        sn2 in 1e-3f64..5e-2,
        x in arb_inputs(4..25, 0.05),
        phase in 0.0f64..6.0,
    ) {
        let cfg = KernelConfig::with_values(family, sf2, ell, sn2);
        let y = targets(&x, phase);
        let g = nll_gradient(&cfg, &x, &y, 1e-6, 1e-8).unwrap();
        let h = 1e-5;
        for i in 0..3 {
            let at = |d: f64| {
                let mut p = cfg.params();
                p[i] += d;
                nll(&cfg.with_params(p), &x, &y, 1e-6, 1e-8).unwrap()
            };
            let fd = (at(h) - at(-h)) / (2.0 * h);
            let err = (g[i] - fd).abs() / fd.abs().max(1e-3);
            prop_assert!(err < 1e-4, "parameter {i}: analytic {} vs fd {fd}", g[i]);
        }
    }

    #[test]
    fn noise_free_posterior_interpolates(family in arb_family(), x in arb_inputs(3..25, 0.08), phase in 0.0f64..6.0) {
        let cfg = KernelConfig::with_values(family, 1.0, 0.1, NOISE_FLOOR);
        let y = targets(&x, phase);
        let gp = OutputGp::fit(cfg, &x, &y, 0.0).unwrap();
        for (i, yi) in y.iter().enumerate() {
            let (mean, var) = gp.predict(&x, x.row(i));
            prop_assert!((mean - yi).abs() < 1e-6, "mean {mean} vs {yi}");
            prop_assert!(var.abs() < 1e-8, "variance {var}");
        }
    }

    #[test]
    fn shifting_targets_shifts_means(
        x in arb_inputs(4..30, 0.03),
        shift in prop::array::uniform6(-50.0f64..50.0),
        queries in arb_inputs(1..10, 0.0),
    ) {
        let kernels = [KernelConfig::with_values(KernelFamily::Matern(Smoothness::ThreeHalves), 1.0, 0.2, 1e-3); OUTPUTS];
        let base = TrainedGp::fit_fixed(&dataset(&x, [0.0; OUTPUTS]), kernels, 1e-8).unwrap();
        let moved = TrainedGp::fit_fixed(&dataset(&x, shift), kernels, 1e-8).unwrap();
        let (a, b) = (base.posterior(&queries).unwrap(), moved.posterior(&queries).unwrap());
        for q in 0..queries.rows() {
            for (o, s) in shift.iter().enumerate() {
                let scale = 1.0 + s.abs();
                prop_assert!((b.mean[q][o] - a.mean[q][o] - s).abs() < 1e-10 * scale);
                prop_assert!((b.variance[q][o] - a.variance[q][o]).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn f32_engine_tracks_f64() {
    let x64 = Matrix::from_fn(30, 2, |i, j| ((i * 13 + j * 7) % 30) as f64 / 30.0 + j as f64 * 0.01);
    let x32 = Matrix::from_fn(30, 2, |i, j| x64.get(i, j) as f32);
    let y64 = targets(&x64, 1.0);
    let y32: Vec<f32> = y64.iter().map(|v| *v as f32).collect();
    let c64 = KernelConfig::with_values(KernelFamily::Matern(Smoothness::FiveHalves), 1.0, 0.3, 1e-2);
    let c32 = KernelConfig::with_values(KernelFamily::Matern(Smoothness::FiveHalves), 1.0f32, 0.3, 1e-2);
    let a = nll(&c64, &x64, &y64, 0.0, 1e-8).unwrap();
    let b = nll(&c32, &x32, &y32, 0.0, 1e-6).unwrap() as f64;
    assert!((a - b).abs() < 1e-3 * a.abs().max(1.0), "{a} vs {b}");
}
