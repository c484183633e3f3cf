//! Semi-discrete λ-RSW divergence between a uniform empirical measure `P_n` on
//! atoms `Y_1..Y_n` and a sampleable measure `P`.
//!
//! The dual objective is `E_{X~P} h1(X, g)` with
//!
//! ```text
//! h1(x, g) = min_j (|x - Y_j|^2 - g_j) - (1/λ) log( (1/n) sum_t exp(-λ g_t) )
//! ```
//!
//! [`sga_estimate`] maximizes it by averaged stochastic subgradient ascent;
//! the [`oracle`] module holds deterministic solvers for finite `P` used as test
//! references.

pub mod oracle;
mod sga;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{log_sum_exp, softmax_neg_scaled, sq_dist, DualPotential, WeightedDiscreteMeasure};

pub use oracle::{exact_dual_maximize, exact_dual_objective, primal_bruteforce, DualSolution};
pub use sga::sga_estimate;

/// Settings for [`sga_estimate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgaConfig {
    /// Number of iterations `s`; must equal the number of stream points.
    pub iterations: usize,
    /// Step scale `B` in `γ_i = B sqrt(n / i)`.
    pub learning_rate_scale: f64,
    pub lambda: f64,
    /// Starting potential; `None` means the zero vector.
    pub g0: Option<DualPotential>,
    /// Fraction of leading iterations excluded from the running average.
    pub burn_in_fraction: f64,
    pub seed: u64,
    /// Keep per-iteration h1 values in [`SgaResult::trace`].
    pub record_trace: bool,
}

impl Default for SgaConfig {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            learning_rate_scale: 1.0,
            lambda: 1.0,
            g0: None,
            burn_in_fraction: 0.6,
            seed: 0,
            record_trace: false,
        }
    }
}

impl SgaConfig {
    pub fn new(iterations: usize, lambda: f64) -> Self {
        Self { iterations, lambda, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Precondition("SGA needs at least one iteration".into()));
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::Precondition(format!("lambda must be positive and finite, got {}", self.lambda)));
        }
        if !(self.learning_rate_scale > 0.0) || !self.learning_rate_scale.is_finite() {
            return Err(Error::Precondition(format!(
                "learning-rate scale must be positive, got {}",
                self.learning_rate_scale
            )));
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return Err(Error::Precondition(format!(
                "burn-in fraction must lie in [0, 1), got {}",
                self.burn_in_fraction
            )));
        }
        Ok(())
    }

    /// Number of leading iterations that update `g` without entering the average.
    pub fn burn_in_iterations(&self) -> usize {
        (self.burn_in_fraction * self.iterations as f64).floor() as usize
    }
}

/// One row of an SGA trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub h1_value: f64,
    /// Normalized running average so far; `None` during burn-in.
    pub running_estimate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgaResult {
    pub estimate: f64,
    pub final_potential: DualPotential,
    #[serde(skip)]
    pub trace: Option<Vec<TraceRow>>,
}

impl SgaResult {
    /// Writes `iteration,h1_value,running_estimate`; fails when no trace was recorded.
    pub fn write_trace_csv<W: Write>(&self, writer: W) -> Result<()> {
        let rows = self
            .trace
            .as_ref()
            .ok_or_else(|| Error::Precondition("no trace recorded; set record_trace".into()))?;
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["iteration", "h1_value", "running_estimate"])?;
        for row in rows {
            out.write_record([
                row.iteration.to_string(),
                row.h1_value.to_string(),
                row.running_estimate.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn check_inputs(x: &[f64], g: &DualPotential, lambda: f64, data: &WeightedDiscreteMeasure) -> Result<()> {
    if g.len() != data.len() {
        return Err(Error::Structure(format!("potential has {} entries for {} atoms", g.len(), data.len())));
    }
    if x.len() != data.dim() {
        return Err(Error::Dimension { expected: data.dim(), found: x.len() });
    }
    if !data.is_uniform() {
        return Err(Error::Precondition("h1 is defined against a uniformly weighted empirical measure".into()));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Precondition(format!("lambda must be positive and finite, got {lambda}")));
    }
    Ok(())
}

/// `(min_j |x - Y_j|^2 - g_j, lowest index attaining it)`.
pub(crate) fn laguerre_argmin(x: &[f64], g: &[f64], data: &WeightedDiscreteMeasure) -> (f64, usize) {
    let mut best = f64::INFINITY;
    let mut arg = 0;
    for (j, (y, gj)) in data.atoms().zip(g).enumerate() {
        let v = sq_dist(x, y) - gj;
        if v < best {
            best = v;
            arg = j;
        }
    }
    (best, arg)
}

/// `(1/λ) log( (1/n) sum_t exp(-λ g_t) )`.
pub(crate) fn log_partition(g: &[f64], lambda: f64) -> f64 {
    let scaled: Vec<f64> = g.iter().map(|v| -lambda * v).collect();
    let lse = log_sum_exp(&scaled).expect("non-empty finite potential");
    (lse - (g.len() as f64).ln()) / lambda
}

pub fn h1_eval(x: &[f64], g: &DualPotential, lambda: f64, data: &WeightedDiscreteMeasure) -> Result<f64> {
    check_inputs(x, g, lambda, data)?;
    let (best, _) = laguerre_argmin(x, &g.0, data);
    Ok(best - log_partition(&g.0, lambda))
}

/// `softmax(-λ g) - e_{j*}` where `j*` is the lowest index attaining the Laguerre minimum.
pub fn h1_subgradient(
    x: &[f64],
    g: &DualPotential,
    lambda: f64,
    data: &WeightedDiscreteMeasure,
) -> Result<Vec<f64>> {
    check_inputs(x, g, lambda, data)?;
    let (_, arg) = laguerre_argmin(x, &g.0, data);
    let mut grad = softmax_neg_scaled(&g.0, lambda);
    grad[arg] -= 1.0;
    Ok(grad)
}

/// The reweighted data measure with weights `softmax(-λ g_final)`.
pub fn extract_reweighting(
    g_final: &DualPotential,
    lambda: f64,
    data: &WeightedDiscreteMeasure,
) -> Result<WeightedDiscreteMeasure> {
    if g_final.len() != data.len() {
        return Err(Error::Structure(format!(
            "potential has {} entries for {} atoms",
            g_final.len(),
            data.len()
        )));
    }
    let w = crate::measures::softmax_weights(g_final, lambda)?;
    data.with_weights(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn two_atoms() -> WeightedDiscreteMeasure {
        WeightedDiscreteMeasure::from_values(&[0.0, 2.0]).unwrap()
    }

    #[test]
    fn h1_examples() {
        let data = two_atoms();
        assert_abs_diff_eq!(h1_eval(&[0.5], &DualPotential::zeros(2), 1.0, &data).unwrap(), 0.25, epsilon = 1e-15);
        let g = DualPotential(vec![1.0, 0.0]);
        let expected = -0.75 - ((f64::exp(-1.0) + 1.0) / 2.0).ln();
        assert_abs_diff_eq!(h1_eval(&[0.5], &g, 1.0, &data).unwrap(), expected, epsilon = 1e-14);
        assert_abs_diff_eq!(expected, -0.370115, epsilon = 1e-6);
    }

    #[test]
    fn subgradient_examples() {
        let data = two_atoms();
        let s = h1_subgradient(&[0.5], &DualPotential::zeros(2), 3.0, &data).unwrap();
        assert_eq!(s, vec![-0.5, 0.5]);
        let s = h1_subgradient(&[0.5], &DualPotential(vec![1.0, 0.0]), 1.0, &data).unwrap();
        assert_abs_diff_eq!(s[0], -0.731059, epsilon = 1e-6);
        assert_abs_diff_eq!(s[1], 0.731059, epsilon = 1e-6);
        assert_abs_diff_eq!(s[0] + s[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn ties_pick_lowest_index() {
        let data = two_atoms();
        let s = h1_subgradient(&[1.0], &DualPotential::zeros(2), 1.0, &data).unwrap();
        assert_eq!(s, vec![-0.5, 0.5]);
    }

    #[test]
    fn input_errors() {
        let data = two_atoms();
        assert!(matches!(h1_eval(&[0.0], &DualPotential::zeros(3), 1.0, &data), Err(Error::Structure(_))));
        assert!(matches!(h1_eval(&[0.0, 1.0], &DualPotential::zeros(2), 1.0, &data), Err(Error::Dimension { .. })));
        let weighted = data.with_weights(vec![0.3, 0.7]).unwrap();
        assert!(h1_eval(&[0.0], &DualPotential::zeros(2), 1.0, &weighted).is_err());
    }

    #[test]
    fn reweighting_limits() {
        let data = WeightedDiscreteMeasure::from_values(&[0.0, 1.0, 2.0]).unwrap();
        let q = extract_reweighting(&DualPotential::zeros(3), 2.0, &data).unwrap();
        assert!(q.weights().iter().all(|&w| (w - 1.0 / 3.0).abs() < 1e-15));
        let q = extract_reweighting(&DualPotential(vec![0.3, -0.2, 0.5]), 1e4, &data).unwrap();
        assert_abs_diff_eq!(q.weights()[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn trace_csv() {
        let result = SgaResult {
            estimate: 1.0,
            final_potential: DualPotential::zeros(1),
            trace: Some(vec![
                TraceRow { iteration: 1, h1_value: 0.5, running_estimate: None },
                TraceRow { iteration: 2, h1_value: 0.25, running_estimate: Some(0.25) },
            ]),
        };
        let mut buf = Vec::new();
        result.write_trace_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "iteration,h1_value,running_estimate\n1,0.5,\n2,0.25,0.25\n");
        let json = serde_json::to_string(&result).unwrap();
        assert_eq!(json, r#"{"estimate":1.0,"final_potential":[0.0]}"#);
    }
}
