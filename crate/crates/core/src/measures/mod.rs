//! Discrete measures and the exact transport / information primitives built on them.
//!
//! A [`WeightedDiscreteMeasure`] stores its atoms as one flat coordinate buffer
//! (`len * dim` values, row-major). Duplicate atoms are kept as separate atoms,
//! which is what bootstrap resampling produces.

mod io;
mod network_simplex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use network_simplex::transport_cost;

/// Default cap on the combined atom count accepted by [`w2sq_discrete`].
pub const DEFAULT_ATOM_CAP: usize = 4096;

const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Atoms in `R^dim` with a probability weight vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "io::MeasureJson", into = "io::MeasureJson")]
pub struct WeightedDiscreteMeasure {
    dim: usize,
    coords: Vec<f64>,
    weights: Vec<f64>,
}

impl WeightedDiscreteMeasure {
    /// Builds a measure from a list of atoms and matching weights.
    pub fn new(atoms: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        let dim = atoms
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::Structure("measure has no atoms".into()))?;
        let mut coords = Vec::with_capacity(atoms.len() * dim);
        for atom in &atoms {
            if atom.len() != dim {
                return Err(Error::Dimension { expected: dim, found: atom.len() });
            }
            coords.extend_from_slice(atom);
        }
        Self::from_flat(dim, coords, weights)
    }

    /// Builds a measure from a row-major coordinate buffer.
    pub fn from_flat(dim: usize, coords: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Structure("atoms must have dimension >= 1".into()));
        }
        if coords.is_empty() {
            return Err(Error::Structure("measure has no atoms".into()));
        }
        if !coords.len().is_multiple_of(dim) {
            return Err(Error::Structure(format!(
                "coordinate buffer of length {} is not a multiple of dimension {dim}",
                coords.len()
            )));
        }
        let n = coords.len() / dim;
        if weights.len() != n {
            return Err(Error::Structure(format!(
                "{n} atoms but {} weights",
                weights.len()
            )));
        }
        if let Some(bad) = coords.iter().find(|c| !c.is_finite()) {
            return Err(Error::Precondition(format!("non-finite atom coordinate {bad}")));
        }
        if let Some((i, w)) = weights.iter().enumerate().find(|(_, w)| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::Precondition(format!("weight {i} is {w}, expected a finite non-negative value")));
        }
        let total = compensated_sum(&weights);
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::Precondition(format!(
                "weights sum to {total}, expected 1 within {WEIGHT_SUM_TOL:e}"
            )));
        }
        Ok(Self { dim, coords, weights })
    }

    /// Uniform empirical measure on the given atoms.
    pub fn uniform(atoms: Vec<Vec<f64>>) -> Result<Self> {
        let n = atoms.len();
        Self::new(atoms, uniform_weights(n))
    }

    /// Uniform empirical measure from a row-major coordinate buffer.
    pub fn uniform_flat(dim: usize, coords: Vec<f64>) -> Result<Self> {
        let n = coords.len().checked_div(dim).unwrap_or(0);
        Self::from_flat(dim, coords, uniform_weights(n))
    }

    /// Uniform empirical measure on scalar values.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        Self::uniform_flat(1, values.to_vec())
    }

    /// The same atoms carrying a different weight vector.
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        Self::from_flat(self.dim, self.coords.clone(), weights)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atom(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn atoms(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    /// Row-major coordinates of all atoms.
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// True when every weight equals `1/n` up to rounding.
    pub fn is_uniform(&self) -> bool {
        let target = 1.0 / self.len() as f64;
        self.weights.iter().all(|w| (w - target).abs() <= 1e-12 * target.max(1e-300) + 1e-15)
    }

    /// Weighted mean of the atoms.
    pub fn mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for (atom, w) in self.atoms().zip(&self.weights) {
            for (m, x) in mean.iter_mut().zip(atom) {
                *m += w * x;
            }
        }
        mean
    }

    /// Largest pairwise distance between atoms (brute force).
    pub fn diameter(&self) -> f64 {
        let n = self.len();
        let mut best = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                best = best.max(sq_dist(self.atom(i), self.atom(j)));
            }
        }
        best.sqrt()
    }

    fn same_atoms(&self, other: &Self) -> bool {
        self.dim == other.dim && self.coords == other.coords
    }
}

/// Per-atom potential vector `g` of the semi-discrete dual, in units of squared distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DualPotential(pub Vec<f64>);

impl DualPotential {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Copy shifted so that the last coordinate is zero.
    pub fn normalized(&self) -> Self {
        let last = self.0.last().copied().unwrap_or(0.0);
        Self(self.0.iter().map(|g| g - last).collect())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, g| m.max(g.abs()))
    }
}

impl From<Vec<f64>> for DualPotential {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

pub(crate) fn uniform_weights(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Neumaier-compensated sum.
pub(crate) fn compensated_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// `KL(q, p) = sum_j q_j log(q_j / p_j)` for two measures on the same atom list.
pub fn kl_discrete(q: &WeightedDiscreteMeasure, p: &WeightedDiscreteMeasure) -> Result<f64> {
    if !q.same_atoms(p) {
        return Err(Error::Structure("KL requires identical atom lists".into()));
    }
    let mut total = 0.0;
    for (index, (&qj, &pj)) in q.weights.iter().zip(&p.weights).enumerate() {
        if qj == 0.0 {
            continue;
        }
        if pj == 0.0 {
            return Err(Error::AbsoluteContinuity { index, q: qj });
        }
        total += qj * (qj / pj).ln();
    }
    // Rounding can leave a tiny negative value for q == p.
    Ok(total.max(0.0))
}

/// Exact squared 2-Wasserstein distance between two measures on the real line,
/// via the monotone (quantile) coupling.
pub fn w2sq_1d(a: &WeightedDiscreteMeasure, b: &WeightedDiscreteMeasure) -> Result<f64> {
    for m in [a, b] {
        if m.dim != 1 {
            return Err(Error::Dimension { expected: 1, found: m.dim });
        }
    }
    Ok(w2sq_sorted_slabs(&a.coords, &a.weights, &b.coords, &b.weights))
}

/// Quantile-coupling cost for weighted scalar samples. Inputs need not be sorted.
pub(crate) fn w2sq_sorted_slabs(xa: &[f64], wa: &[f64], xb: &[f64], wb: &[f64]) -> f64 {
    let order = |x: &[f64]| {
        let mut idx: Vec<usize> = (0..x.len()).collect();
        // Stable sort: ties keep input order.
        idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
        idx
    };
    let ia = order(xa);
    let ib = order(xb);

    let (mut i, mut j) = (0usize, 0usize);
    let mut rem_a = wa[ia[0]];
    let mut rem_b = wb[ib[0]];
    let mut cost = 0.0;
    loop {
        let mass = rem_a.min(rem_b);
        let d = xa[ia[i]] - xb[ib[j]];
        cost += mass * d * d;
        rem_a -= mass;
        rem_b -= mass;
        let a_done = rem_a <= 0.0;
        let b_done = rem_b <= 0.0;
        if a_done {
            i += 1;
            if i == ia.len() {
                break;
            }
            rem_a = wa[ia[i]];
        }
        if b_done {
            j += 1;
            if j == ib.len() {
                break;
            }
            rem_b = wb[ib[j]];
        }
    }
    cost.max(0.0)
}

/// Exact squared 2-Wasserstein distance in any dimension, using the default atom cap.
pub fn w2sq_discrete(a: &WeightedDiscreteMeasure, b: &WeightedDiscreteMeasure) -> Result<f64> {
    w2sq_discrete_capped(a, b, DEFAULT_ATOM_CAP)
}

/// Exact squared 2-Wasserstein distance, solved as a transportation problem.
/// Fails with [`Error::Size`] when `a.len() + b.len()` exceeds `atom_cap`.
pub fn w2sq_discrete_capped(
    a: &WeightedDiscreteMeasure,
    b: &WeightedDiscreteMeasure,
    atom_cap: usize,
) -> Result<f64> {
    if a.dim != b.dim {
        return Err(Error::Dimension { expected: a.dim, found: b.dim });
    }
    let total = a.len() + b.len();
    if total > atom_cap {
        return Err(Error::Size(format!(
            "{total} combined atoms exceed the exact-solver cap of {atom_cap}; subsample the inputs first"
        )));
    }
    let cost = transport_cost(&a.weights, &b.weights, |i, j| sq_dist(a.atom(i), b.atom(j)))?;
    Ok(cost.max(0.0))
}

/// `log sum_t exp(v_t)` with a max shift.
pub fn log_sum_exp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::Structure("log_sum_exp of an empty vector".into()));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Precondition("log_sum_exp requires finite entries".into()));
    }
    let sum: f64 = v.iter().map(|x| (x - max).exp()).sum();
    Ok(max + sum.ln())
}

/// Weights `exp(-lambda g_j) / sum_t exp(-lambda g_t)`.
pub fn softmax_weights(g: &DualPotential, lambda: f64) -> Result<Vec<f64>> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Precondition(format!("lambda must be positive and finite, got {lambda}")));
    }
    if g.is_empty() {
        return Err(Error::Structure("softmax of an empty potential".into()));
    }
    if g.0.iter().any(|x| !x.is_finite()) {
        return Err(Error::Precondition("potential has non-finite entries".into()));
    }
    Ok(softmax_neg_scaled(&g.0, lambda))
}

/// Unchecked softmax of `-lambda * g`.
pub(crate) fn softmax_neg_scaled(g: &[f64], lambda: f64) -> Vec<f64> {
    let gmin = g.iter().copied().fold(f64::INFINITY, f64::min);
    let mut w: Vec<f64> = g.iter().map(|x| (-lambda * (x - gmin)).exp()).collect();
    let total: f64 = w.iter().sum();
    for x in &mut w {
        *x /= total;
    }
    w
}
