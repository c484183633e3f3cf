//! Deterministic reference solvers for a finite reference measure `P`.
//!
//! [`exact_dual_maximize`] maximizes the dual through a smoothed surrogate in
//! which `min_j` is replaced by the soft minimum at temperature `τ`. The
//! surrogate is smooth and concave, so damped Newton steps converge quickly;
//! `τ` is then reduced geometrically. The soft-minimum weights define a
//! transport plan whose second marginal is a feasible reweighting, so every
//! iterate carries a primal value as well. The returned gap between the two is
//! a certificate: the divergence lies in `[value, value + gap]`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::measures::{
    sq_dist, transport_cost, w2sq_sorted_slabs, DualPotential, WeightedDiscreteMeasure,
};

use super::{laguerre_argmin, log_partition};

fn check_pair(p: &WeightedDiscreteMeasure, data: &WeightedDiscreteMeasure, lambda: f64) -> Result<()> {
    if p.dim() != data.dim() {
        return Err(Error::Dimension { expected: data.dim(), found: p.dim() });
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Precondition(format!("lambda must be positive and finite, got {lambda}")));
    }
    Ok(())
}

/// `(sum_i p_i h1(x_i, g), softmax(-λ g) - Laguerre cell masses)`, with cells
/// resolved by lowest index on ties.
pub fn exact_dual_objective(
    p_discrete: &WeightedDiscreteMeasure,
    g: &DualPotential,
    lambda: f64,
    data: &WeightedDiscreteMeasure,
) -> Result<(f64, Vec<f64>)> {
    check_pair(p_discrete, data, lambda)?;
    if g.len() != data.len() {
        return Err(Error::Structure(format!("potential has {} entries for {} atoms", g.len(), data.len())));
    }
    if !data.is_uniform() {
        return Err(Error::Precondition("the dual is defined against a uniformly weighted empirical measure".into()));
    }
    let mut grad = crate::measures::softmax_neg_scaled(&g.0, lambda);
    let mut value = 0.0;
    for (x, &pi) in p_discrete.atoms().zip(p_discrete.weights()) {
        let (best, arg) = laguerre_argmin(x, &g.0, data);
        value += pi * best;
        grad[arg] -= pi;
    }
    Ok((value - log_partition(&g.0, lambda), grad))
}

/// Output of [`exact_dual_maximize`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualSolution {
    /// Dual objective at `g_star` (a lower bound on the divergence).
    pub value: f64,
    /// Maximizer, normalized so its last entry is zero.
    pub g_star: DualPotential,
    /// Primal value of the accompanying plan minus `value`; non-negative.
    pub gap: f64,
    /// Total Newton steps taken.
    pub iterations: usize,
}

struct Problem<'a> {
    cost: Vec<f64>,
    p: &'a [f64],
    n: usize,
    lambda: f64,
}

struct Smoothed {
    value: f64,
    grad: Vec<f64>,
    hessian: Option<DMatrix<f64>>,
}

impl Problem<'_> {
    fn row(&self, i: usize) -> &[f64] {
        &self.cost[i * self.n..(i + 1) * self.n]
    }

    /// Soft-minimum weights of row `i` at temperature `tau`; returns the soft minimum.
    fn soft_row(&self, i: usize, g: &[f64], tau: f64, q: &mut [f64]) -> f64 {
        let row = self.row(i);
        let amin = row.iter().zip(g).map(|(c, gj)| c - gj).fold(f64::INFINITY, f64::min);
        let mut z = 0.0;
        for ((qj, c), gj) in q.iter_mut().zip(row).zip(g) {
            *qj = (-(c - gj - amin) / tau).exp();
            z += *qj;
        }
        for qj in q.iter_mut() {
            *qj /= z;
        }
        amin - tau * z.ln()
    }

    fn smoothed(&self, g: &[f64], tau: f64, with_hessian: bool) -> Smoothed {
        let n = self.n;
        let s = crate::measures::softmax_neg_scaled(g, self.lambda);
        let mut value = -log_partition(g, self.lambda);
        let mut grad = s.clone();
        let mut hessian = with_hessian.then(|| {
            let mut h = DMatrix::zeros(n, n);
            for a in 0..n {
                h[(a, a)] -= self.lambda * s[a];
                for b in 0..n {
                    h[(a, b)] += self.lambda * s[a] * s[b];
                }
            }
            h
        });
        let mut q = vec![0.0; n];
        let mut support = Vec::with_capacity(n);
        for (i, &pi) in self.p.iter().enumerate() {
            value += pi * self.soft_row(i, g, tau, &mut q);
            for (gj, qj) in grad.iter_mut().zip(&q) {
                *gj -= pi * qj;
            }
            if let Some(h) = hessian.as_mut() {
                support.clear();
                support.extend((0..n).filter(|&j| q[j] > 1e-17));
                let w = pi / tau;
                for &a in &support {
                    h[(a, a)] -= w * q[a];
                    for &b in &support {
                        h[(a, b)] += w * q[a] * q[b];
                    }
                }
            }
        }
        Smoothed { value, grad, hessian }
    }

    /// Primal value `(1/λ) KL(Q, uniform) + <π, c>` of the soft-minimum plan.
    fn primal_of_plan(&self, g: &[f64], tau: f64) -> f64 {
        let n = self.n;
        let mut q = vec![0.0; n];
        let mut marginal = vec![0.0; n];
        let mut transport = 0.0;
        for (i, &pi) in self.p.iter().enumerate() {
            self.soft_row(i, g, tau, &mut q);
            for ((mj, qj), c) in marginal.iter_mut().zip(&q).zip(self.row(i)) {
                *mj += pi * qj;
                transport += pi * qj * c;
            }
        }
        let kl: f64 = marginal
            .iter()
            .filter(|&&m| m > 0.0)
            .map(|&m| m * (m * n as f64).ln())
            .sum();
        kl.max(0.0) / self.lambda + transport
    }

    fn dual(&self, g: &[f64]) -> f64 {
        let mut value = 0.0;
        for (i, &pi) in self.p.iter().enumerate() {
            let best = self.row(i).iter().zip(g).map(|(c, gj)| c - gj).fold(f64::INFINITY, f64::min);
            value += pi * best;
        }
        value - log_partition(g, self.lambda)
    }
}

/// Newton ascent on the smoothed objective with the last coordinate pinned to 0.
/// Returns the number of steps taken.
fn newton_stage(problem: &Problem, g: &mut [f64], tau: f64, max_steps: usize) -> usize {
    let r = problem.n - 1;
    let mut trial = g.to_vec();
    for step in 0..max_steps {
        let cur = problem.smoothed(g, tau, true);
        if cur.grad[..r].iter().all(|v| v.abs() <= 1e-16) {
            return step;
        }
        let h = cur.hessian.expect("requested");
        let grad = DVector::from_column_slice(&cur.grad[..r]);
        let neg_h = -h.view((0, 0), (r, r)).into_owned();
        let dir = solve_pd(neg_h, &grad);
        let decrement = grad.dot(&dir);
        if !(decrement > 1e-30) {
            return step;
        }
        // Near the optimum the objective change drops below rounding, so the
        // line search is skipped and the pure Newton step is taken.
        let mut t = 1.0;
        if decrement > 1e-12 * (1.0 + cur.value.abs()) {
            let mut accepted = false;
            for _ in 0..60 {
                for k in 0..r {
                    trial[k] = g[k] + t * dir[k];
                }
                if problem.smoothed(&trial, tau, false).value >= cur.value + 1e-4 * t * decrement {
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                return step;
            }
        }
        for k in 0..r {
            g[k] += t * dir[k];
        }
    }
    max_steps
}

/// Solves `A d = b` for symmetric positive semidefinite `A`, adding a ridge when
/// the factorization fails.
fn solve_pd(a: DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let scale = a.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let mut ridge = 0.0;
    loop {
        let mut m = a.clone();
        for k in 0..m.nrows() {
            m[(k, k)] += ridge;
        }
        if let Some(chol) = m.cholesky() {
            return chol.solve(b);
        }
        ridge = if ridge == 0.0 { 1e-14 * scale } else { ridge * 10.0 };
    }
}

/// Maximizes the dual for a finite reference measure. Stops once the certified
/// primal-dual gap is at most `tol`; fails with [`Error::NonConvergence`]
/// (carrying the best iterate) if the temperature floor is reached first.
pub fn exact_dual_maximize(
    p_discrete: &WeightedDiscreteMeasure,
    lambda: f64,
    data: &WeightedDiscreteMeasure,
    tol: f64,
) -> Result<DualSolution> {
    check_pair(p_discrete, data, lambda)?;
    if !data.is_uniform() {
        return Err(Error::Precondition("the dual is defined against a uniformly weighted empirical measure".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::Precondition(format!("tolerance must be positive, got {tol}")));
    }
    let n = data.len();
    let cost: Vec<f64> = p_discrete
        .atoms()
        .flat_map(|x| data.atoms().map(move |y| sq_dist(x, y)))
        .collect();
    let problem = Problem { cost, p: p_discrete.weights(), n, lambda };
    let mut g = vec![0.0; n];
    if n == 1 {
        let value = problem.dual(&g);
        return Ok(DualSolution { value, g_star: DualPotential(g), gap: 0.0, iterations: 0 });
    }

    let spread = problem.cost.iter().copied().fold(0.0f64, f64::max).max(1e-12);
    let mut tau = spread;
    let tau_floor = 1e-13 * spread;
    let mut iterations = 0;
    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    loop {
        iterations += newton_stage(&problem, &mut g, tau, 200);
        let value = problem.dual(&g);
        let gap = (problem.primal_of_plan(&g, tau) - value).max(0.0);
        if best.as_ref().is_none_or(|(_, b, _)| gap < *b) {
            best = Some((value, gap, g.clone()));
        }
        if gap <= tol {
            return Ok(DualSolution { value, g_star: DualPotential(g).normalized(), gap, iterations });
        }
        if tau <= tau_floor {
            let (value, gap, g) = best.expect("at least one stage ran");
            return Err(Error::NonConvergence {
                iterations,
                residual: gap,
                value,
                best: DualPotential(g).normalized().0,
            });
        }
        tau = (tau * 0.1).max(tau_floor);
    }
}

/// Grid search over reweightings of `data` (at most three atoms): the minimum of
/// `(1/λ) KL(Q_w, data) + W2^2(p_discrete, Q_w)` over simplex points whose
/// coordinates are multiples of `grid_step`.
pub fn primal_bruteforce(
    p_discrete: &WeightedDiscreteMeasure,
    lambda: f64,
    data: &WeightedDiscreteMeasure,
    grid_step: f64,
) -> Result<f64> {
    check_pair(p_discrete, data, lambda)?;
    let n = data.len();
    if n > 3 {
        return Err(Error::Size(format!("brute-force search supports at most 3 atoms, got {n}")));
    }
    if !(grid_step > 0.0 && grid_step <= 1e-2) {
        return Err(Error::Precondition(format!("grid step must lie in (0, 0.01], got {grid_step}")));
    }
    let k = (1.0 / grid_step).round() as usize;
    let reference = data.weights();
    let score = |w: &[f64]| -> Result<f64> {
        let mut kl = 0.0;
        for (&wj, &rj) in w.iter().zip(reference) {
            if wj > 0.0 {
                if rj == 0.0 {
                    return Ok(f64::INFINITY);
                }
                kl += wj * (wj / rj).ln();
            }
        }
        let w2 = if data.dim() == 1 {
            w2sq_sorted_slabs(p_discrete.coords(), p_discrete.weights(), data.coords(), w)
        } else {
            transport_cost(p_discrete.weights(), w, |i, j| sq_dist(p_discrete.atom(i), data.atom(j)))?
        };
        Ok(kl.max(0.0) / lambda + w2)
    };

    let mut best = f64::INFINITY;
    match n {
        1 => best = score(&[1.0])?,
        2 => {
            for a in 0..=k {
                let w0 = a as f64 / k as f64;
                best = best.min(score(&[w0, 1.0 - w0])?);
            }
        }
        _ => {
            for a in 0..=k {
                for b in 0..=k - a {
                    let w0 = a as f64 / k as f64;
                    let w1 = b as f64 / k as f64;
                    let w2 = ((k - a - b) as f64 / k as f64).max(0.0);
                    best = best.min(score(&[w0, w1, w2])?);
                }
            }
        }
    }
    Ok(best)
}
