//! Generalized Pickands constant
//! `H = lim_{a↓0} a⁻¹ P(max_{k≥1} Z(ak) ≤ 0)` with
//! `Z(t) = minᵢ (√2 Bᵢ(√Cᵢ t) − Cᵢ t² + Eᵢ)`.
//!
//! On `t ≥ 0` the covariance `|ts|` has rank one, so `Bᵢ(t) = t ξᵢ` exactly and
//! each `fᵢ(t) = √(2Cᵢ) ξᵢ t − Cᵢ t² + Eᵢ` is a concave quadratic with
//! `fᵢ(0) = Eᵢ > 0`. Past its larger root `fᵢ` stays negative, so only the
//! lattice points up to the smallest larger root need to be checked.

use serde::Serialize;

use super::{run_chunked, McRun};
use crate::error::{Error, Result};
use crate::rng::{self, Lane};

/// Largest accepted lattice spacing.
pub const MAX_LATTICE_SPACING: f64 = 0.2;
/// Minimum replications per estimate.
pub const MIN_PICKANDS_REPS: u64 = 10_000;
/// Standard errors allowed between an estimate and a candidate value.
const VERDICT_SIGMAS: f64 = 3.0;

/// The two closed forms under test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PickandsCandidates {
    /// `Σ √Cᵢ / √(2π)`.
    pub paper_literal: f64,
    /// `Σ √(2Cᵢ) / √(2π)`.
    pub derivative_consistent: f64,
}

impl PickandsCandidates {
    pub fn new(c: &[f64]) -> Self {
        let s: f64 = c.iter().map(|c| c.sqrt()).sum();
        let k = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        Self {
            paper_literal: s * k,
            derivative_consistent: s * std::f64::consts::SQRT_2 * k,
        }
    }

    /// The candidate within `3·stderr` of `value`, if exactly one is.
    pub fn verdict(&self, value: f64, stderr: f64) -> Verdict {
        let near = |c: f64| (value - c).abs() < VERDICT_SIGMAS * stderr;
        match (near(self.paper_literal), near(self.derivative_consistent)) {
            (true, false) => Verdict::PaperLiteral,
            (false, true) => Verdict::DerivativeConsistent,
            _ => Verdict::Inconclusive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    PaperLiteral,
    DerivativeConsistent,
    Inconclusive,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::PaperLiteral => "paper_literal",
            Verdict::DerivativeConsistent => "derivative_consistent",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

/// Estimate at a single lattice spacing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PickandsEstimate {
    pub c: Vec<f64>,
    pub a: f64,
    pub reps: u64,
    pub seed: u64,
    pub successes: u64,
    /// Success fraction divided by `a`.
    pub h_hat: f64,
    pub stderr: f64,
    pub candidates: PickandsCandidates,
    pub verdict: Verdict,
}

/// Joint estimate over several spacings from common random numbers, with the
/// least-squares line in `a` extrapolated to `a = 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PickandsExtrapolation {
    pub c: Vec<f64>,
    pub estimates: Vec<PickandsEstimate>,
    pub h_extrapolated: f64,
    pub stderr: f64,
    /// `h(a_{j+1}) − h(a_j)` in the order the spacings were given.
    pub differences: Vec<f64>,
    pub difference_stderr: Vec<f64>,
    pub candidates: PickandsCandidates,
    pub verdict: Verdict,
    /// Joint success-pattern histogram, bit `j` set when spacing `j` succeeded.
    #[serde(skip)]
    patterns: Vec<u64>,
}

impl PickandsExtrapolation {
    /// Mean and standard error of `Σ wⱼ h(aⱼ)`, using the per-replication
    /// joint law of the success indicators.
    pub fn combination(&self, weights: &[f64]) -> (f64, f64) {
        assert_eq!(weights.len(), self.estimates.len());
        let a: Vec<f64> = self.estimates.iter().map(|e| e.a).collect();
        combine(&self.patterns, &a, weights)
    }

    /// Whether `|h(a_{j+1}) − h(a_j)|` is nonincreasing along the spacings,
    /// with `slack` standard errors of each pairwise comparison.
    pub fn differences_shrink(&self, slack: f64) -> bool {
        let m = self.estimates.len();
        (1..m.saturating_sub(1)).all(|j| {
            let mut w = vec![0.0; m];
            // |d_j| − |d_{j−1}| with signs taken from the point estimates.
            let (s_prev, s_next) = (self.differences[j - 1].signum(), self.differences[j].signum());
            w[j + 1] += s_next;
            w[j] -= s_next;
            w[j] -= s_prev;
            w[j - 1] += s_prev;
            let (value, se) = self.combination(&w);
            value <= slack * se
        })
    }
}

fn combine(patterns: &[u64], a: &[f64], weights: &[f64]) -> (f64, f64) {
    let reps: u64 = patterns.iter().sum();
    let n = reps as f64;
    let (mut s, mut s2) = (0.0, 0.0);
    for (mask, &count) in patterns.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let y: f64 = (0..a.len())
            .filter(|j| mask >> j & 1 == 1)
            .map(|j| weights[j] / a[j])
            .sum();
        s += count as f64 * y;
        s2 += count as f64 * y * y;
    }
    let mean = s / n;
    let var = ((s2 - n * mean * mean) / (n - 1.0)).max(0.0);
    (mean, (var / n).sqrt())
}

fn validate(c: &[f64], spacings: &[f64], run: &McRun) -> Result<()> {
    if c.is_empty() {
        return Err(Error::invalid("need at least one C value"));
    }
    if let Some(x) = c.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
        return Err(Error::invalid(format!("C values must be positive and finite, got {x}")));
    }
    if spacings.is_empty() || spacings.len() > 16 {
        return Err(Error::invalid("need between 1 and 16 lattice spacings"));
    }
    if let Some(a) = spacings.iter().find(|a| !(**a > 0.0 && **a <= MAX_LATTICE_SPACING)) {
        return Err(Error::invalid(format!(
            "lattice spacing must lie in (0, {MAX_LATTICE_SPACING}], got {a}"
        )));
    }
    run.validate(MIN_PICKANDS_REPS)
}

/// Larger root of `√(2C) ξ t − C t² + E`.
#[inline]
fn larger_root(c: f64, xi: f64, e: f64) -> f64 {
    let b = (2.0 * c).sqrt() * xi;
    (b + (b * b + 4.0 * c * e).sqrt()) / (2.0 * c)
}

/// Whether `minᵢ fᵢ(ak) ≤ 0` for every `k ≥ 1`, given the draws `ξᵢ`, `Eᵢ`.
pub fn lattice_success(c: &[f64], xi: &[f64], e: &[f64], a: f64) -> bool {
    let root = c
        .iter()
        .zip(xi)
        .zip(e)
        .map(|((&c, &x), &e)| larger_root(c, x, e))
        .fold(f64::INFINITY, f64::min);
    let k_max = (root / a).ceil() as u64;
    let slopes: Vec<f64> = c.iter().zip(xi).map(|(&c, &x)| (2.0 * c).sqrt() * x).collect();
    (1..=k_max).all(|k| {
        let t = a * k as f64;
        c.iter()
            .zip(&slopes)
            .zip(e)
            .any(|((&c, &s), &e)| s * t - c * t * t + e <= 0.0)
    })
}

/// Estimates at every spacing in `spacings` from one shared set of draws,
/// extrapolated linearly to `a = 0`.
pub fn extrapolate_pickands(c: &[f64], spacings: &[f64], run: &McRun) -> Result<PickandsExtrapolation> {
    validate(c, spacings, run)?;
    let n = c.len();
    let m = spacings.len();
    let seed = run.seed;
    let patterns = run_chunked(
        run.reps,
        run.threads,
        || (vec![0.0; n], vec![0.0; n]),
        || vec![0u64; 1 << m],
        |(xi, e), hist, rep| {
            for i in 0..n {
                xi[i] = rng::standard_normal(&mut rng::stream(seed, rep, i, Lane::Normal));
                e[i] = rng::unit_exponential(&mut rng::stream(seed, rep, i, Lane::Exponential));
            }
            let mask = spacings.iter().enumerate().fold(0usize, |mask, (j, &a)| {
                mask | ((lattice_success(c, xi, e, a) as usize) << j)
            });
            hist[mask] += 1;
        },
        |a, b| {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        },
    )?;

    let candidates = PickandsCandidates::new(c);
    let estimates: Vec<PickandsEstimate> = spacings
        .iter()
        .enumerate()
        .map(|(j, &a)| {
            let successes: u64 = patterns
                .iter()
                .enumerate()
                .filter(|(mask, _)| mask >> j & 1 == 1)
                .map(|(_, k)| k)
                .sum();
            let p = successes as f64 / run.reps as f64;
            let h_hat = p / a;
            let stderr = (p * (1.0 - p) / run.reps as f64).sqrt() / a;
            PickandsEstimate {
                c: c.to_vec(),
                a,
                reps: run.reps,
                seed,
                successes,
                h_hat,
                stderr,
                candidates,
                verdict: candidates.verdict(h_hat, stderr),
            }
        })
        .collect();

    let weights = intercept_weights(spacings);
    let (h_extrapolated, stderr) = if m == 1 {
        (estimates[0].h_hat, estimates[0].stderr)
    } else {
        combine(&patterns, spacings, &weights)
    };
    let mut differences = Vec::new();
    let mut difference_stderr = Vec::new();
    for j in 1..m {
        let mut w = vec![0.0; m];
        w[j] = 1.0;
        w[j - 1] = -1.0;
        let (d, se) = combine(&patterns, spacings, &w);
        differences.push(d);
        difference_stderr.push(se);
    }
    Ok(PickandsExtrapolation {
        c: c.to_vec(),
        estimates,
        h_extrapolated,
        stderr,
        differences,
        difference_stderr,
        candidates,
        verdict: candidates.verdict(h_extrapolated, stderr),
        patterns,
    })
}

/// Weights `wⱼ` with `Σ wⱼ hⱼ` the least-squares intercept of `h` against `a`.
fn intercept_weights(a: &[f64]) -> Vec<f64> {
    let m = a.len() as f64;
    if a.len() == 1 {
        return vec![1.0];
    }
    let s1: f64 = a.iter().sum();
    let s2: f64 = a.iter().map(|a| a * a).sum();
    let d = m * s2 - s1 * s1;
    a.iter().map(|aj| (s2 - aj * s1) / d).collect()
}

/// Estimate at one lattice spacing.
pub fn estimate_pickands(c: &[f64], a: f64, run: &McRun) -> Result<PickandsEstimate> {
    Ok(extrapolate_pickands(c, &[a], run)?.estimates.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar_stats::{integrate_adaptive, phi_raw, QuadratureSpec};

    #[test]
    fn candidate_values() {
        let k = PickandsCandidates::new(&[1.0]);
        assert!((k.paper_literal - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert!((k.derivative_consistent - 0.564_189_583_547_756_3).abs() < 1e-15);
        let k2 = PickandsCandidates::new(&[1.0, 1.0]);
        assert!((k2.derivative_consistent - 2.0 * k.derivative_consistent).abs() < 1e-15);
        assert_eq!(k.verdict(0.40, 0.002), Verdict::PaperLiteral);
        assert_eq!(k.verdict(0.563, 0.002), Verdict::DerivativeConsistent);
        assert_eq!(k.verdict(0.48, 0.002), Verdict::Inconclusive);
        assert_eq!(k.verdict(0.48, 1.0), Verdict::Inconclusive);
    }

    #[test]
    fn steep_descent_succeeds_immediately() {
        assert!(lattice_success(&[1.0], &[-50.0], &[1e-3], 0.01));
        assert!(!lattice_success(&[1.0], &[0.0], &[1.0], 0.01));
        // The minimum is what matters: one process going negative is enough.
        assert!(lattice_success(&[1.0, 1.0], &[-50.0, 3.0], &[1e-3, 1e-3], 0.01));
    }

    #[test]
    fn root_cut_matches_long_scan() {
        let c = [1.0_f64, 2.5];
        for (xi, e) in [
            ([0.3, -0.7], [0.2, 1.4]),
            ([-1.0, 0.5], [0.05, 0.01]),
            ([2.0, 2.0], [0.5, 0.5]),
        ] {
            for a in [0.2, 0.05, 0.01] {
                let scan = (1..20_000).all(|k| {
                    let t = a * k as f64;
                    (0..2).any(|i| (2.0 * c[i]).sqrt() * xi[i] * t - c[i] * t * t + e[i] <= 0.0)
                });
                assert_eq!(lattice_success(&c, &xi, &e, a), scan);
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let run = McRun::new(10_000, 1);
        assert!(estimate_pickands(&[1.0], 0.3, &run).is_err());
        assert!(estimate_pickands(&[1.0], 0.0, &run).is_err());
        assert!(estimate_pickands(&[-1.0], 0.1, &run).is_err());
        assert!(estimate_pickands(&[1.0], 0.1, &McRun::new(9_999, 1)).is_err());
    }

    #[test]
    fn intercept_weights_fit_lines_exactly() {
        let a = [0.05, 0.02, 0.01];
        let w = intercept_weights(&a);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let line: f64 = w.iter().zip(&a).map(|(w, a)| w * (0.7 + 3.0 * a)).sum();
        assert!((line - 0.7).abs() < 1e-12);
    }

    #[test]
    fn single_process_matches_quadrature_at_finite_spacing() {
        // For n = 1 success means E ≤ C a² − √(2C) a ξ, so
        // h(a) = a⁻¹ ∫ φ(x) (1 − exp(−max(0, C a² − √(2C) a x))) dx.
        let a = 0.1;
        let spec = QuadratureSpec::default();
        let exact = integrate_adaptive(
            |x: f64| phi_raw(x) * -(-(a * a - std::f64::consts::SQRT_2 * a * x).max(0.0)).exp_m1(),
            -40.0,
            a / std::f64::consts::SQRT_2,
            &spec,
        )
        .unwrap()
        .value
            / a;
        let est = estimate_pickands(&[1.0], a, &McRun::new(200_000, 11)).unwrap();
        assert!((est.h_hat - exact).abs() < 4.0 * est.stderr, "{} vs {exact}", est.h_hat);
    }

    #[test]
    fn joint_run_reproduces_single_spacing_runs() {
        let run = McRun::new(20_000, 4);
        let joint = extrapolate_pickands(&[1.0, 0.5], &[0.1, 0.05], &run).unwrap();
        for e in &joint.estimates {
            assert_eq!(e, &estimate_pickands(&[1.0, 0.5], e.a, &run).unwrap());
        }
        let (d, _) = joint.combination(&[-1.0, 1.0]);
        assert!((d - joint.differences[0]).abs() < 1e-12);
        assert!((d - (joint.estimates[1].h_hat - joint.estimates[0].h_hat)).abs() < 1e-9);
    }
}
