use bmrsw::bootstrap::{BootstrapConfig, OptimizerSettings, ReplicateSeeds, resample_dataset};
use bmrsw::lambda_select::*;
use bmrsw::measures::WeightedDiscreteMeasure;
use bmrsw::rsw::{extract_reweighting, sga_estimate, SgaConfig};
use bmrsw::simulators::*;

fn contaminated_normal(n: usize, seed: u64) -> WeightedDiscreteMeasure {
    let contamination = ContaminationSpec::new(0.05, 0.0, Contaminant::Dirac(10.0)).unwrap();
    generate_dataset(&CleanSource::StudentT { nu: 22.0 }, &contamination, n, seed).unwrap()
}

fn small_base(workers: usize) -> BootstrapConfig {
    BootstrapConfig {
        replicates: 1,
        lambda: 1.0,
        sga: SgaConfig { iterations: 400, ..SgaConfig::default() },
        optimizer: OptimizerSettings { population: 6, rounds: 6, sigma0: 0.5, theta0: Some(vec![0.0, 1.0]) },
        master_seed: 4,
        workers,
    }
}

#[test]
fn single_lambda_grid() {
    let data = contaminated_normal(100, 1);
    let spec = SimulatorSpec::normal();
    let grid = LambdaGrid::new(vec![2.5]).unwrap();
    let diag = run_selection(&data, &spec, &grid, 3, &small_base(1), &SelectionRule::default()).unwrap();
    assert_eq!(diag.values.len(), 1);
    assert_eq!(diag.values[0].len(), 3);
    assert_eq!(diag.replicates[0], vec![0, 1, 2]);
    assert!(diag.values[0].iter().all(|v| *v >= 0.0));
    assert_eq!(diag.suggestion, None);
    let s = &diag.summaries[0];
    assert!(s.lower_quartile <= s.median && s.median <= s.upper_quartile);
    assert!(run_selection(&data, &spec, &grid, 1, &small_base(1), &SelectionRule::default()).is_err());
}

#[test]
fn selection_is_worker_invariant() {
    let data = contaminated_normal(80, 2);
    let spec = SimulatorSpec::normal();
    let grid = LambdaGrid::new(vec![0.01, 0.3, 2.5, 30.0]).unwrap();
    let a = run_selection(&data, &spec, &grid, 2, &small_base(1), &SelectionRule::default()).unwrap();
    let b = run_selection(&data, &spec, &grid, 2, &small_base(8), &SelectionRule::default()).unwrap();
    assert_eq!(a, b);
    let mut csv = Vec::new();
    a.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("lambda,replicate,value\n"));
    assert_eq!(text.lines().count(), 1 + 4 * 2);
}

/// Diagnostic and outlier mass at the clean parameter, one SGA run per λ on a
/// shared resample and noise bank.
fn fixed_theta_sweep(data: &WeightedDiscreteMeasure, lambdas: &[f64], seeds: &ReplicateSeeds) -> Vec<(f64, f64)> {
    let spec = SimulatorSpec::normal();
    let theta = [0.0, 1.0];
    let resampled = resample_dataset(data, seeds.resample).unwrap();
    let bank = NoiseBank::for_spec(&spec, seeds.noise_bank, 20_000);
    let samples = simulate_batch(&spec, &theta, &bank).unwrap();
    // Top 1% of atoms by distance from the model mean.
    let mut order: Vec<usize> = (0..resampled.len()).collect();
    order.sort_by(|&a, &b| resampled.atom(b)[0].abs().total_cmp(&resampled.atom(a)[0].abs()));
    let far = &order[..resampled.len() / 100];
    lambdas
        .iter()
        .map(|&lambda| {
            let sga = SgaConfig { iterations: 20_000, lambda, ..SgaConfig::default() };
            let r = sga_estimate(&resampled, &samples, &sga).unwrap();
            let diag = diagnostic_value(&theta, &r.final_potential, lambda, &resampled, &spec, &bank).unwrap();
            let q = extract_reweighting(&r.final_potential, lambda, &resampled).unwrap();
            let mass: f64 = far.iter().map(|&i| q.weights()[i]).sum();
            (diag, mass)
        })
        .collect()
}

#[test]
fn robust_lambda_has_smaller_diagnostic() {
    let data = contaminated_normal(1000, 3);
    let sweep = fixed_theta_sweep(&data, &[0.01, 2.5], &ReplicateSeeds::derive(6, 0));
    assert!(sweep[1].0 < sweep[0].0, "{sweep:?}");
}

#[test]
fn outlier_mass_decreases_along_grid() {
    let data = contaminated_normal(1000, 3);
    let grid = default_grid();
    let reps: Vec<Vec<f64>> = (0..3)
        .map(|j| fixed_theta_sweep(&data, grid.values(), &ReplicateSeeds::derive(6, j)).iter().map(|p| p.1).collect())
        .collect();
    let medians: Vec<f64> = (0..grid.len())
        .map(|k| {
            let mut v: Vec<f64> = reps.iter().map(|r| r[k]).collect();
            v.sort_by(f64::total_cmp);
            v[1]
        })
        .collect();
    let violations = medians.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(violations <= 1, "{medians:?}");
}

#[test]
fn diagnostic_is_exact_in_one_dimension() {
    let spec = SimulatorSpec::normal();
    let bank = NoiseBank::for_spec(&spec, 9, 300);
    let data = WeightedDiscreteMeasure::from_values(&[-1.0, 0.0, 2.0]).unwrap();
    let g = bmrsw::DualPotential::from(vec![0.3, -0.2, 0.1]);
    let v = diagnostic_value(&[0.5, 2.0], &g, 1.5, &data, &spec, &bank).unwrap();
    let model = WeightedDiscreteMeasure::from_values(&simulate_batch(&spec, &[0.5, 2.0], &bank).unwrap()).unwrap();
    let q = extract_reweighting(&g, 1.5, &data).unwrap();
    let exact = bmrsw::measures::w2sq_discrete(&model, &q).unwrap().sqrt();
    assert!((v - exact).abs() < 1e-9, "{v} vs {exact}");
}
