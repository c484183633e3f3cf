//! Averaged stochastic subgradient ascent on the semi-discrete dual.
//!
//! Each iteration costs two passes over the atoms. The first pass applies the
//! previous update to `g`, tracks `min g` and finds the Laguerre argmin for the
//! new sample; the second refreshes `exp(-λ (g_t - min g))` and its sum, which
//! give both the softmax weights and the log-partition term of `h1`.

use crate::error::{Error, Result};
use crate::measures::{DualPotential, WeightedDiscreteMeasure};

use super::{SgaConfig, SgaResult, TraceRow};

const LANES: usize = 4;

/// Runs the ascent on the first `config.iterations` points of `stream`
/// (row-major, `data.dim()` coordinates per point) and returns the
/// step-weighted average of `h1(X_i, g_{i-1})` over the post-burn-in
/// iterations, together with the final potential.
pub fn sga_estimate(data: &WeightedDiscreteMeasure, stream: &[f64], config: &SgaConfig) -> Result<SgaResult> {
    config.validate()?;
    let m = data.dim();
    let n = data.len();
    if stream.is_empty() {
        return Err(Error::Structure("empty sample stream".into()));
    }
    if !stream.len().is_multiple_of(m) {
        return Err(Error::Dimension { expected: m, found: stream.len() % m });
    }
    let s = config.iterations;
    if stream.len() / m != s {
        return Err(Error::Structure(format!(
            "sample stream has {} points but {s} iterations were requested",
            stream.len() / m
        )));
    }
    if !data.is_uniform() {
        return Err(Error::Precondition("SGA requires a uniformly weighted empirical measure".into()));
    }
    let mut g = match &config.g0 {
        Some(g0) if g0.len() != n => {
            return Err(Error::Structure(format!("initial potential has {} entries for {n} atoms", g0.len())))
        }
        Some(g0) => g0.0.clone(),
        None => vec![0.0; n],
    };

    let mut trace = config.record_trace.then(|| Vec::with_capacity(s));
    let run = Run {
        stream,
        m,
        data,
        lambda: config.lambda,
        burn_in: config.burn_in_iterations(),
        scale: config.learning_rate_scale * (n as f64).sqrt(),
    };
    let (acc, weight_total) = run.dispatch(&mut g, trace.as_mut());

    let estimate = acc / weight_total;
    if !estimate.is_finite() {
        return Err(Error::Precondition(format!("SGA produced a non-finite estimate ({estimate})")));
    }
    Ok(SgaResult { estimate, final_potential: DualPotential(g), trace })
}

struct Run<'a> {
    stream: &'a [f64],
    m: usize,
    data: &'a WeightedDiscreteMeasure,
    lambda: f64,
    burn_in: usize,
    scale: f64,
}

impl Run<'_> {
    fn dispatch(&self, g: &mut [f64], trace: Option<&mut Vec<TraceRow>>) -> (f64, f64) {
        #[cfg(target_arch = "x86_64")]
        {
            if std::is_x86_feature_detected!("avx2") {
                // SAFETY: the feature was detected at runtime.
                return unsafe { self.ascend_avx2(g, trace) };
            }
        }
        self.ascend(g, trace)
    }

    /// Same arithmetic as the portable path (no fused multiply-add), so results
    /// are bit-identical; only the vector width differs.
    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn ascend_avx2(&self, g: &mut [f64], trace: Option<&mut Vec<TraceRow>>) -> (f64, f64) {
        self.ascend(g, trace)
    }

    /// Returns the step-weighted sum of accumulated h1 values and the sum of
    /// their steps; `g` holds `g_s` on return.
    #[inline(always)]
    fn ascend(&self, g: &mut [f64], mut trace: Option<&mut Vec<TraceRow>>) -> (f64, f64) {
        let n = g.len();
        let m = self.m;
        let ln_n = (n as f64).ln();
        let mut e = vec![0.0; n];
        let mut scores = vec![0.0; n];
        let mut pending_scale = 0.0;
        let mut pending_index: Option<(usize, f64)> = None;
        let mut acc = 0.0;
        let mut weight_total = 0.0;

        for (i0, x) in self.stream.chunks_exact(m).enumerate() {
            let i = i0 + 1;
            if let Some((j, gamma)) = pending_index.take() {
                g[j] -= gamma;
            }
            let gmin = update_and_score(g, &e, pending_scale, x, self.data, &mut scores);
            let (best, arg) = argmin_lowest(&scores);
            let sum = refresh_exponentials(g, gmin, self.lambda, &mut e);

            let h1 = best + gmin - ((sum.ln() - ln_n) / self.lambda);
            let gamma = self.scale / (i as f64).sqrt();
            if i > self.burn_in {
                acc += gamma * h1;
                weight_total += gamma;
            }
            if let Some(t) = trace.as_mut() {
                t.push(TraceRow {
                    iteration: i,
                    h1_value: h1,
                    running_estimate: (i > self.burn_in).then(|| acc / weight_total),
                });
            }
            pending_scale = gamma / sum;
            pending_index = Some((arg, gamma));
        }
        if let Some((j, gamma)) = pending_index {
            g[j] -= gamma;
        }
        for (gt, et) in g.iter_mut().zip(&e) {
            *gt += pending_scale * et;
        }
        (acc, weight_total)
    }
}

/// Adds `c e_t` to every `g_t`, writes `|x - Y_t|^2 - g_t` into `scores` and
/// returns the new `min g`.
#[inline(always)]
fn update_and_score(
    g: &mut [f64],
    e: &[f64],
    c: f64,
    x: &[f64],
    data: &WeightedDiscreteMeasure,
    scores: &mut [f64],
) -> f64 {
    let coords = data.coords();
    let mut mins = [f64::INFINITY; LANES];
    if x.len() == 1 {
        let x0 = x[0];
        let mut gc = g.chunks_exact_mut(LANES);
        let mut ec = e.chunks_exact(LANES);
        let mut yc = coords.chunks_exact(LANES);
        let mut sc = scores.chunks_exact_mut(LANES);
        for (((gl, el), yl), sl) in (&mut gc).zip(&mut ec).zip(&mut yc).zip(&mut sc) {
            for k in 0..LANES {
                let gv = gl[k] + c * el[k];
                gl[k] = gv;
                mins[k] = if gv < mins[k] { gv } else { mins[k] };
                let d = x0 - yl[k];
                sl[k] = d * d - gv;
            }
        }
        for (((gv, ev), y), sv) in gc
            .into_remainder()
            .iter_mut()
            .zip(ec.remainder())
            .zip(yc.remainder())
            .zip(sc.into_remainder())
        {
            *gv += c * ev;
            mins[0] = mins[0].min(*gv);
            let d = x0 - y;
            *sv = d * d - *gv;
        }
    } else {
        let m = x.len();
        for (t, (gv, ev)) in g.iter_mut().zip(e).enumerate() {
            *gv += c * ev;
            mins[0] = mins[0].min(*gv);
            let y = &coords[t * m..(t + 1) * m];
            let d: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
            scores[t] = d - *gv;
        }
    }
    mins.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Minimum of `scores` and the lowest index attaining it.
#[inline(always)]
fn argmin_lowest(scores: &[f64]) -> (f64, usize) {
    let mut vals = [f64::INFINITY; LANES];
    let mut idx = [usize::MAX; LANES];
    let chunks = scores.chunks_exact(LANES);
    let tail = chunks.remainder();
    for (c, chunk) in chunks.enumerate() {
        for k in 0..LANES {
            if chunk[k] < vals[k] {
                vals[k] = chunk[k];
                idx[k] = c * LANES + k;
            }
        }
    }
    let base = scores.len() - tail.len();
    for (k, &v) in tail.iter().enumerate() {
        if v < vals[0] || (v == vals[0] && base + k < idx[0]) {
            vals[0] = v;
            idx[0] = base + k;
        }
    }
    let mut best = (vals[0], idx[0]);
    for k in 1..LANES {
        if vals[k] < best.0 || (vals[k] == best.0 && idx[k] < best.1) {
            best = (vals[k], idx[k]);
        }
    }
    best
}

/// Fills `e_t = exp(-λ (g_t - gmin))` and returns their sum (always >= 1).
#[inline(always)]
fn refresh_exponentials(g: &[f64], gmin: f64, lambda: f64, e: &mut [f64]) -> f64 {
    for (ev, gv) in e.iter_mut().zip(g) {
        *ev = exp_nonpositive(-lambda * (gv - gmin));
    }
    let mut sums = [0.0; LANES];
    let chunks = e.chunks_exact(LANES);
    let tail: f64 = chunks.remainder().iter().sum();
    for chunk in chunks {
        for k in 0..LANES {
            sums[k] += chunk[k];
        }
    }
    ((sums[0] + sums[1]) + (sums[2] + sums[3])) + tail
}

/// `exp(x)` for `x <= 0`, branch-free so the calling loops vectorize.
/// Arguments below -700 are clamped, which only matters at the 1e-304 level.
/// Relative error is a few ulp.
#[inline(always)]
pub(crate) fn exp_nonpositive(x: f64) -> f64 {
    const LOG2E: f64 = std::f64::consts::LOG2_E;
    const LN2_HI: f64 = 6.931_471_803_691_238_164_90e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
    // 2^52 + 2^51: adding it rounds to the nearest integer in the low mantissa bits.
    const SHIFTER: f64 = 6_755_399_441_055_744.0;
    let x = if x < -700.0 { -700.0 } else { x };
    let t = x * LOG2E + SHIFTER;
    let k = t - SHIFTER;
    let r = (x - k * LN2_HI) - k * LN2_LO;
    // Taylor series to degree 12 on |r| <= ln2 / 2, evaluated by Estrin's
    // scheme to keep the dependency chain short.
    const C: [f64; 13] = [
        1.0,
        1.0,
        0.5,
        1.0 / 6.0,
        1.0 / 24.0,
        1.0 / 120.0,
        1.0 / 720.0,
        1.0 / 5_040.0,
        1.0 / 40_320.0,
        1.0 / 362_880.0,
        1.0 / 3_628_800.0,
        1.0 / 39_916_800.0,
        1.0 / 479_001_600.0,
    ];
    let r2 = r * r;
    let r4 = r2 * r2;
    let r8 = r4 * r4;
    let b0 = (C[0] + C[1] * r) + (C[2] + C[3] * r) * r2;
    let b1 = (C[4] + C[5] * r) + (C[6] + C[7] * r) * r2;
    let b2 = (C[8] + C[9] * r) + (C[10] + C[11] * r) * r2;
    let p = (b0 + b1 * r4) + (b2 + C[12] * r4) * r8;
    let scale = f64::from_bits(
        t.to_bits()
            .wrapping_sub(SHIFTER.to_bits())
            .wrapping_add(1023)
            << 52,
    );
    p * scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rsw::{h1_eval, h1_subgradient};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    #[test]
    fn fast_exp_matches_std() {
        let mut worst: f64 = 0.0;
        for i in 0..=2_000_000 {
            let x = -700.0 * i as f64 / 2_000_000.0;
            let rel = (exp_nonpositive(x) - x.exp()).abs() / x.exp();
            worst = worst.max(rel);
        }
        assert!(worst < 1e-15, "worst relative error {worst}");
        assert_eq!(exp_nonpositive(0.0), 1.0);
        assert!(exp_nonpositive(-1e6) < 1e-300);
    }

    #[test]
    fn argmin_prefers_lowest_index() {
        for n in 1..20 {
            let scores = vec![1.0; n];
            assert_eq!(argmin_lowest(&scores), (1.0, 0));
            let mut s2 = vec![2.0; n];
            s2[n - 1] = 0.5;
            if n > 2 {
                s2[n / 2] = 0.5;
            }
            let expect = if n > 2 { n / 2 } else { n - 1 };
            assert_eq!(argmin_lowest(&s2), (0.5, expect));
        }
    }

    /// Straight transcription of the ascent, one h1/subgradient call per step.
    fn reference(data: &WeightedDiscreteMeasure, stream: &[f64], config: &SgaConfig) -> (f64, Vec<f64>) {
        let m = data.dim();
        let n = data.len() as f64;
        let mut g = DualPotential::zeros(data.len());
        let burn = config.burn_in_iterations();
        let (mut acc, mut tot) = (0.0, 0.0);
        for i in 1..=config.iterations {
            let x = &stream[(i - 1) * m..i * m];
            let gamma = config.learning_rate_scale * (n / i as f64).sqrt();
            let h = h1_eval(x, &g, config.lambda, data).unwrap();
            if i > burn {
                acc += gamma * h;
                tot += gamma;
            }
            let sub = h1_subgradient(x, &g, config.lambda, data).unwrap();
            for (gj, dj) in g.0.iter_mut().zip(sub) {
                *gj += gamma * dj;
            }
        }
        (acc / tot, g.0)
    }

    #[test]
    fn matches_reference_transcription() {
        let mut rng = crate::rng::rng_from_seed(9);
        for (m, n, lambda) in [(1usize, 7usize, 1.0), (1, 13, 0.3), (2, 5, 4.0), (3, 9, 1e-2)] {
            let coords: Vec<f64> = (0..n * m).map(|_| rng.random::<f64>()).collect();
            let data = WeightedDiscreteMeasure::uniform_flat(m, coords).unwrap();
            let s = 500;
            let stream: Vec<f64> = (0..s * m).map(|_| rng.random::<f64>() * 1.2 - 0.1).collect();
            for burn in [0.0, 0.6] {
                let config = SgaConfig { iterations: s, lambda, burn_in_fraction: burn, ..SgaConfig::default() };
                let got = sga_estimate(&data, &stream, &config).unwrap();
                let (est, g) = reference(&data, &stream, &config);
                assert_abs_diff_eq!(got.estimate, est, epsilon = 1e-10);
                for (a, b) in got.final_potential.0.iter().zip(&g) {
                    assert_abs_diff_eq!(a, b, epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn single_atom_is_exactly_zero_on_itself() {
        let data = WeightedDiscreteMeasure::from_values(&[1.5]).unwrap();
        let stream = vec![1.5; 100];
        for lambda in [1e-3, 1.0, 1e3] {
            let r = sga_estimate(&data, &stream, &SgaConfig::new(100, lambda)).unwrap();
            assert_eq!(r.estimate, 0.0);
        }
    }

    #[test]
    fn stream_errors() {
        let data = WeightedDiscreteMeasure::from_values(&[0.0, 1.0]).unwrap();
        assert!(sga_estimate(&data, &[], &SgaConfig::new(1, 1.0)).is_err());
        assert!(sga_estimate(&data, &[0.5; 3], &SgaConfig::new(4, 1.0)).is_err());
        let planar = WeightedDiscreteMeasure::uniform_flat(2, vec![0.0; 4]).unwrap();
        assert!(matches!(sga_estimate(&planar, &[0.5; 3], &SgaConfig::new(1, 1.0)), Err(Error::Dimension { .. })));
    }

    #[test]
    fn trace_is_consistent() {
        let data = WeightedDiscreteMeasure::from_values(&[0.0, 1.0, 3.0]).unwrap();
        let stream: Vec<f64> = (0..50).map(|i| (i % 7) as f64 * 0.5).collect();
        let config = SgaConfig { iterations: 50, record_trace: true, ..SgaConfig::default() };
        let r = sga_estimate(&data, &stream, &config).unwrap();
        let trace = r.trace.as_ref().unwrap();
        assert_eq!(trace.len(), 50);
        assert!(trace[..30].iter().all(|t| t.running_estimate.is_none()));
        assert_eq!(trace[49].running_estimate, Some(r.estimate));
    }
}
