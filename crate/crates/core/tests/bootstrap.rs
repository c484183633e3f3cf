use bmrsw::bootstrap::*;
use bmrsw::measures::WeightedDiscreteMeasure;
use bmrsw::rsw::SgaConfig;
use bmrsw::simulators::*;
use proptest::prelude::*;

fn small_config(replicates: usize, lambda: f64, workers: usize) -> BootstrapConfig {
    BootstrapConfig {
        replicates,
        lambda,
        sga: SgaConfig { iterations: 500, ..SgaConfig::default() },
        optimizer: OptimizerSettings { population: 8, rounds: 8, sigma0: 1.0, theta0: Some(vec![0.0, 1.0]) },
        master_seed: 17,
        workers,
    }
}

fn clean_normal(n: usize, seed: u64) -> WeightedDiscreteMeasure {
    let clean = CleanSource::Simulator { model: ModelKind::Normal, theta: vec![0.0, 1.0] };
    generate_dataset(&clean, &ContaminationSpec::clean(), n, seed).unwrap()
}

#[test]
fn percentile_interval_of_one_to_hundred() {
    let samples: Vec<Vec<f64>> = (1..=100).map(|v| vec![v as f64]).collect();
    let s = summarize_samples(&samples, 0.05).unwrap();
    // Position (N - 1) p between order statistics.
    assert!((s.intervals[0].0 - 3.475).abs() < 1e-12);
    assert!((s.intervals[0].1 - 97.525).abs() < 1e-12);
    assert!((s.medians[0] - 50.5).abs() < 1e-12);
    assert!((s.widths[0] - 94.05).abs() < 1e-12);
}

#[test]
fn identical_samples_give_zero_width() {
    let s = summarize_samples(&vec![vec![2.5, -1.0]; 7], 0.1).unwrap();
    assert_eq!(s.medians, vec![2.5, -1.0]);
    assert_eq!(s.widths, vec![0.0, 0.0]);
    assert!(summarize_samples(&[vec![1.0]], 0.05).is_err());
}

proptest! {
    #[test]
    fn median_inside_interval(values in prop::collection::vec(-1e3f64..1e3, 2..60), alpha in 0.01f64..0.5) {
        let samples: Vec<Vec<f64>> = values.iter().map(|v| vec![*v]).collect();
        let s = summarize_samples(&samples, alpha).unwrap();
        prop_assert!(s.intervals[0].0 <= s.medians[0] && s.medians[0] <= s.intervals[0].1);
    }
}

#[test]
fn multiplicity_is_one_on_average() {
    let values: Vec<f64> = (0..50).map(|i| i as f64).collect();
    let data = WeightedDiscreteMeasure::from_values(&values).unwrap();
    let mut count = 0usize;
    let trials = 2000;
    for seed in 0..trials {
        let r = resample_dataset(&data, seed).unwrap();
        count += r.coords().iter().filter(|&&v| v == 7.0).count();
    }
    let mean = count as f64 / trials as f64;
    // Binomial(50, 1/50) multiplicity: sd ≈ 0.99 / sqrt(2000).
    assert!((mean - 1.0).abs() < 0.07, "{mean}");
}

#[test]
fn clean_normal_small_lambda_recovers_truth() {
    let data = clean_normal(1000, 5);
    let spec = SimulatorSpec::normal();
    let config = BootstrapConfig {
        replicates: 1,
        lambda: 1e-3,
        sga: SgaConfig { iterations: 4000, ..SgaConfig::default() },
        ..BootstrapConfig::default()
    };
    let seeds = ReplicateSeeds::derive(3, 0);
    let fit = fit_one_replicate(&data, &spec, &config, &seeds).unwrap();
    assert!(fit.theta[0].abs() <= 0.15, "{:?}", fit.theta);
    assert!((fit.theta[1] - 1.0).abs() <= 0.15, "{:?}", fit.theta);
    assert_eq!(fit.g_final.len(), 1000);
    let again = fit_one_replicate(&data, &spec, &config, &seeds).unwrap();
    assert_eq!(fit, again);
}

#[test]
fn single_replicate_matches_direct_fit() {
    let data = clean_normal(200, 8);
    let spec = SimulatorSpec::normal();
    let config = small_config(1, 1.0, 2);
    let result = run_bootstrap(&data, &spec, &config).unwrap();
    let seeds = ReplicateSeeds::derive(config.master_seed, 0);
    let resampled = resample_dataset(&data, seeds.resample).unwrap();
    let fit = fit_one_replicate(&resampled, &spec, &config, &seeds).unwrap();
    assert_eq!(result.samples, vec![fit.theta]);
    assert_eq!(result.losses, vec![fit.loss]);
    assert_eq!(result.potentials, vec![fit.g_final]);
    assert_eq!(result.seeds, vec![seeds]);
}

#[test]
fn worker_count_does_not_change_results() {
    let data = clean_normal(150, 9);
    let spec = SimulatorSpec::normal();
    let runs: Vec<BootstrapResult> =
        [1, 4, 8].iter().map(|&w| run_bootstrap(&data, &spec, &small_config(4, 2.5, w)).unwrap()).collect();
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0], runs[2]);
    for row in &runs[0].samples {
        assert!(spec.contains(row));
    }
    let mut a = Vec::new();
    let mut b = Vec::new();
    runs[0].write_csv(&mut a).unwrap();
    runs[2].write_csv(&mut b).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("index,theta_0,theta_1,loss\n"));
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn seeds_are_distinct_across_replicates() {
    let seeds: Vec<ReplicateSeeds> = (0..100).map(|j| ReplicateSeeds::derive(1, j)).collect();
    let mut all: Vec<u64> = seeds.iter().flat_map(|s| [s.resample, s.noise_bank, s.optimizer]).collect();
    all.sort_unstable();
    all.dedup();
    assert_eq!(all.len(), 300);
}

#[test]
fn invalid_config_is_rejected() {
    let data = clean_normal(20, 1);
    let spec = SimulatorSpec::normal();
    let mut config = small_config(0, 1.0, 1);
    assert!(run_bootstrap(&data, &spec, &config).is_err());
    config.replicates = 2;
    config.lambda = -1.0;
    assert!(run_bootstrap(&data, &spec, &config).is_err());
}
