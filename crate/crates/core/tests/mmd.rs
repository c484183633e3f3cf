use bmrsw::mmd::*;
use proptest::prelude::*;

/// Textbook V-statistic with the kernel evaluated directly.
fn naive_mmd_sq(xs: &[f64], ys: &[f64], sigma0: f64) -> f64 {
    let k = |a: f64, b: f64| (-(a - b) * (a - b) / (2.0 * sigma0 * sigma0)).exp();
    let mean = |u: &[f64], v: &[f64]| {
        u.iter().map(|&a| v.iter().map(|&b| k(a, b)).sum::<f64>()).sum::<f64>() / (u.len() * v.len()) as f64
    };
    mean(xs, xs) + mean(ys, ys) - 2.0 * mean(xs, ys)
}

proptest! {
    #[test]
    fn matches_direct_kernel_sum(
        xs in prop::collection::vec(-5.0f64..5.0, 1..20),
        ys in prop::collection::vec(-5.0f64..5.0, 1..20),
        sigma0 in 0.2f64..5.0,
    ) {
        let v = gaussian_mmd_sq(&xs, &ys, sigma0).unwrap();
        prop_assert!((v - naive_mmd_sq(&xs, &ys, sigma0)).abs() < 1e-12);
        prop_assert!(v >= -1e-12);
        prop_assert_eq!(v, gaussian_mmd_sq(&ys, &xs, sigma0).unwrap());
    }
}

#[test]
fn scaled_mmd_approaches_mean_gap() {
    let normal = |mu: f64, seed: u64| {
        let clean = bmrsw::simulators::CleanSource::Simulator {
            model: bmrsw::simulators::ModelKind::Normal,
            theta: vec![mu, 1.0],
        };
        bmrsw::simulators::generate_dataset(&clean, &bmrsw::simulators::ContaminationSpec::clean(), 2000, seed)
            .unwrap()
            .coords()
            .to_vec()
    };
    let xs = normal(0.0, 1);
    let ys = normal(2.0, 2);
    let rows = large_bandwidth_limit_check(&xs, &ys, &[10.0, 100.0, 1000.0]).unwrap();
    assert!(rows[0].deviation() > rows[1].deviation() && rows[1].deviation() > rows[2].deviation());
    assert!(rows[2].deviation() <= 0.02 * rows[2].target);
}

#[test]
fn median_heuristic_is_thinned_for_large_inputs() {
    let xs: Vec<f64> = (0..3000).map(|i| i as f64 / 3000.0).collect();
    let m = median_heuristic(&xs, &xs).unwrap();
    // Median |U - V| for independent uniforms is 1 - 1/sqrt(2).
    assert!((m - (1.0 - 0.5f64.sqrt())).abs() < 0.01, "{m}");
}
