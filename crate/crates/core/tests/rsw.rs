use approx::assert_abs_diff_eq;
use bmrsw::measures::{kl_discrete, w2sq_discrete, DualPotential, WeightedDiscreteMeasure};
use bmrsw::rng::rng_from_seed;
use bmrsw::rsw::{
    exact_dual_maximize, extract_reweighting, h1_eval, h1_subgradient, primal_bruteforce, sga_estimate,
    SgaConfig,
};
use proptest::prelude::*;
use rand::Rng;

fn measure_strategy(max_atoms: usize, dim: usize) -> impl Strategy<Value = WeightedDiscreteMeasure> {
    prop::collection::vec(prop::collection::vec(-2.0f64..2.0, dim), 1..=max_atoms)
        .prop_map(|atoms| WeightedDiscreteMeasure::uniform(atoms).unwrap())
}

proptest! {
    #[test]
    fn subgradient_inequality(
        data in measure_strategy(8, 2),
        x in prop::collection::vec(-3.0f64..3.0, 2),
        gs in prop::collection::vec(-2.0f64..2.0, 16),
        lambda in 0.05f64..20.0,
    ) {
        let n = data.len();
        let g = DualPotential(gs[..n].to_vec());
        let eta = DualPotential(gs[8..8 + n].to_vec());
        let base = h1_eval(&x, &g, lambda, &data).unwrap();
        let sub = h1_subgradient(&x, &g, lambda, &data).unwrap();
        let linear: f64 = sub.iter().zip(eta.0.iter().zip(&g.0)).map(|(s, (e, gv))| s * (e - gv)).sum();
        let at_eta = h1_eval(&x, &eta, lambda, &data).unwrap();
        prop_assert!(at_eta <= base + linear + 1e-9, "{at_eta} > {base} + {linear}");
        prop_assert!(sub.iter().sum::<f64>().abs() < 1e-12);
        prop_assert!(sub.iter().map(|v| v * v).sum::<f64>().sqrt() <= 2.0);
    }

    #[test]
    fn h1_is_lipschitz_in_x(
        data in measure_strategy(8, 2),
        x1 in prop::collection::vec(-2.0f64..2.0, 2),
        x2 in prop::collection::vec(-2.0f64..2.0, 2),
        gs in prop::collection::vec(-1.0f64..1.0, 8),
        lambda in 0.05f64..20.0,
    ) {
        let g = DualPotential(gs[..data.len()].to_vec());
        // Atoms and points lie in the square [-2, 2]^2.
        let d = 32f64.sqrt();
        let a = h1_eval(&x1, &g, lambda, &data).unwrap();
        let b = h1_eval(&x2, &g, lambda, &data).unwrap();
        let dist = ((x1[0] - x2[0]).powi(2) + (x1[1] - x2[1]).powi(2)).sqrt();
        prop_assert!((a - b).abs() <= 3.0 * d * dist + 1e-9);
    }

    #[test]
    fn kl_variational_identity(f in prop::collection::vec(-3.0f64..3.0, 2..4)) {
        let n = f.len();
        let lhs = (f.iter().map(|v| v.exp()).sum::<f64>() / n as f64).ln();
        let kl_uniform = |w: &[f64]| w.iter().filter(|&&x| x > 0.0).map(|&x| x * (x * n as f64).ln()).sum::<f64>();
        let total: f64 = f.iter().map(|v| v.exp()).sum();
        let soft: Vec<f64> = f.iter().map(|v| v.exp() / total).collect();
        let at_soft: f64 = soft.iter().zip(&f).map(|(w, v)| w * v).sum::<f64>() - kl_uniform(&soft);
        prop_assert!((at_soft - lhs).abs() < 1e-10);
        let k = 1000usize;
        let mut best = f64::NEG_INFINITY;
        let mut visit = |w: &[f64]| {
            let v = w.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>() - kl_uniform(w);
            best = best.max(v);
        };
        if n == 2 {
            for a in 0..=k {
                let w0 = a as f64 / k as f64;
                visit(&[w0, 1.0 - w0]);
            }
        } else {
            for a in 0..=k {
                for b in 0..=k - a {
                    visit(&[a as f64 / k as f64, b as f64 / k as f64, (k - a - b) as f64 / k as f64]);
                }
            }
        }
        prop_assert!(best <= lhs + 1e-12);
        prop_assert!(lhs - best < 2e-3);
    }
}

fn random_1d_instance(seed: u64, n: usize, atoms: usize) -> (WeightedDiscreteMeasure, WeightedDiscreteMeasure) {
    let mut rng = rng_from_seed(seed);
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let coords: Vec<f64> = (0..atoms).map(|_| rng.random_range(-1.5..1.5)).collect();
    let mut w: Vec<f64> = (0..atoms).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    (
        WeightedDiscreteMeasure::from_values(&data).unwrap(),
        WeightedDiscreteMeasure::from_flat(1, coords, w).unwrap(),
    )
}

#[test]
fn duality_on_two_atom_instances() {
    for seed in 0..10 {
        let (data, p) = random_1d_instance(seed, 2, 5);
        let dual = exact_dual_maximize(&p, 1.0, &data, 1e-9).unwrap();
        let primal = primal_bruteforce(&p, 1.0, &data, 1e-4).unwrap();
        assert!(dual.value <= primal + 1e-12);
        assert!(primal - dual.value < 1e-4, "seed {seed}: {primal} vs {}", dual.value);
    }
}

#[test]
fn duality_in_two_dimensions() {
    let mut rng = rng_from_seed(77);
    for _ in 0..5 {
        let data = WeightedDiscreteMeasure::uniform(
            (0..3).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect(),
        )
        .unwrap();
        let p = WeightedDiscreteMeasure::uniform(
            (0..6).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect(),
        )
        .unwrap();
        let dual = exact_dual_maximize(&p, 2.0, &data, 1e-9).unwrap();
        let primal = primal_bruteforce(&p, 2.0, &data, 5e-3).unwrap();
        assert!(dual.value <= primal + 1e-12);
        assert!(primal - dual.value < 1e-3, "{primal} vs {}", dual.value);
    }
}

#[test]
fn maximizer_is_bounded_and_nonnegative() {
    for seed in 0..10 {
        let (data, p) = random_1d_instance(100 + seed, 6, 30);
        let sol = exact_dual_maximize(&p, 0.8, &data, 1e-9).unwrap();
        assert!(sol.value >= -1e-9);
        // Diameter of atoms and support is at most 3.
        assert!(sol.g_star.max_abs() <= 9.0 + 1e-9);
        assert_eq!(*sol.g_star.0.last().unwrap(), 0.0);
    }
}

#[test]
fn oracle_weights_solve_the_primal() {
    let (data, p) = random_1d_instance(5, 3, 12);
    let lambda = 1.5;
    let sol = exact_dual_maximize(&p, lambda, &data, 1e-9).unwrap();
    let q = extract_reweighting(&sol.g_star, lambda, &data).unwrap();
    let primal = kl_discrete(&q, &data).unwrap() / lambda + w2sq_discrete(&p, &q).unwrap();
    assert_abs_diff_eq!(primal, sol.value, epsilon = 1e-6);
}

#[test]
fn large_lambda_approaches_nearest_neighbour_cost() {
    let (data, p) = random_1d_instance(11, 4, 40);
    let nn: f64 = p
        .atoms()
        .zip(p.weights())
        .map(|(x, w)| w * data.atoms().map(|y| (x[0] - y[0]).powi(2)).fold(f64::INFINITY, f64::min))
        .sum();
    let sol = exact_dual_maximize(&p, 1000.0, &data, 1e-9).unwrap();
    assert!((sol.value - nn).abs() <= 0.01 * nn, "{} vs {nn}", sol.value);
}

#[test]
fn small_lambda_approaches_w2() {
    let (data, p) = random_1d_instance(12, 2, 4);
    let w2 = w2sq_discrete(&p, &data).unwrap();
    let primal = primal_bruteforce(&p, 1e-3, &data, 1e-3).unwrap();
    assert!((primal - w2).abs() <= 0.02 * w2, "{primal} vs {w2}");
}

#[test]
fn sga_one_atom_uniform_stream() {
    let data = WeightedDiscreteMeasure::from_values(&[0.0]).unwrap();
    let mut rng = rng_from_seed(3);
    let stream: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>()).collect();
    for lambda in [0.01, 1.0, 100.0] {
        let r = sga_estimate(&data, &stream, &SgaConfig::new(100_000, lambda)).unwrap();
        assert!((r.estimate - 1.0 / 3.0).abs() < 0.01, "{}", r.estimate);
    }
}

#[test]
fn sga_tracks_exact_dual() {
    let mut errors = Vec::new();
    let mut data_rng = rng_from_seed(21);
    let data = WeightedDiscreteMeasure::from_values(&(0..10).map(|_| data_rng.random::<f64>()).collect::<Vec<_>>())
        .unwrap();
    let support: Vec<f64> = (0..100).map(|_| data_rng.random::<f64>()).collect();
    let p = WeightedDiscreteMeasure::from_values(&support).unwrap();
    let exact = exact_dual_maximize(&p, 1.0, &data, 1e-9).unwrap().value;
    let s = 100_000;
    for seed in 0..20 {
        let mut rng = rng_from_seed(1000 + seed);
        let stream: Vec<f64> = (0..s).map(|_| support[rng.random_range(0..100)]).collect();
        let r = sga_estimate(&data, &stream, &SgaConfig::new(s, 1.0)).unwrap();
        errors.push((r.estimate - exact).abs());
    }
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    assert!(mean <= 0.05, "mean error {mean}");
}

#[test]
fn contaminant_atoms_lose_their_weight() {
    let mut rng = rng_from_seed(8);
    let mut values: Vec<f64> = (0..475).map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)).collect();
    values.extend(std::iter::repeat_n(10.0, 25));
    let data = WeightedDiscreteMeasure::from_values(&values).unwrap();
    let s = 200_000;
    let stream: Vec<f64> = (0..s).map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)).collect();
    let r = sga_estimate(&data, &stream, &SgaConfig::new(s, 2.5)).unwrap();
    let q = extract_reweighting(&r.final_potential, 2.5, &data).unwrap();
    let outlier_mass: f64 = q.coords().iter().zip(q.weights()).filter(|(x, _)| (*x - 10.0).abs() < 0.5).map(|(_, w)| w).sum();
    assert!(outlier_mass < 0.01, "{outlier_mass}");
}
