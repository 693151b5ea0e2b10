//! Closed-form upper bounds and the Euler-characteristic approximation for
//! `P(sup_{[0,T]} min_i X_i(t) >= u)`.
//!
//! Every bound splits into a point term (all processes above `u` at `t = 0`)
//! and a crossing term (expected number of boundary-touching up-crossings,
//! from the Rice formula).

use serde::Serialize;

use crate::error::{ensure_finite, Error, Result};
use crate::kernels::{Dependence, ProcessSet};
use crate::scalar_stats::{integrate_adaptive, orthant_prob_with, phi_bar_raw, phi_raw, QuadratureSpec};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundMethod {
    Theorem1,
    EcMatrix,
    Correlated,
}

/// Inputs that determined a bound, kept for reproducibility.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundInputs<T> {
    /// `∫_0^T √Var(X_i'(t)) dt` for each process.
    DerivStdIntegrals(Vec<T>),
    /// Stationary parameters `C_i`.
    Stationary(Vec<T>),
    Correlated {
        rho: T,
        deriv_std: T,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport<T> {
    pub u: T,
    pub horizon: T,
    pub n: usize,
    pub point_term: T,
    pub crossing_term: T,
    pub total: T,
    pub method: BoundMethod,
    pub inputs: BoundInputs<T>,
}

/// `√Var(X_i'(t))` for one process: a constant, or a time profile.
#[derive(Clone, Copy)]
pub enum DerivStd<'a, T> {
    Constant(T),
    Profile(&'a dyn Fn(T) -> T),
}

impl<T: std::fmt::Debug> std::fmt::Debug for DerivStd<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DerivStd::Constant(v) => f.debug_tuple("Constant").field(v).finish(),
            DerivStd::Profile(_) => f.write_str("Profile(..)"),
        }
    }
}

fn check_level<T: Real>(u: T, horizon: T) -> Result<()> {
    ensure_finite("u", u)?;
    ensure_finite("horizon", horizon)?;
    if !(u > T::zero()) {
        return Err(Error::invalid(format!(
            "bounds hold for positive levels only, got u = {u}"
        )));
    }
    if !(horizon >= T::zero()) {
        return Err(Error::invalid("horizon must be nonnegative"));
    }
    Ok(())
}

fn inv_sqrt_2pi<T: Real>() -> T {
    (T::lit(2.0) * T::PI()).sqrt().recip()
}

fn integrate_profile<T: Real>(s: &DerivStd<'_, T>, horizon: T, spec: &QuadratureSpec<T>) -> Result<T> {
    match *s {
        DerivStd::Constant(c) => {
            ensure_finite("deriv_std", c)?;
            if !(c > T::zero()) {
                return Err(Error::invalid("derivative standard deviation must be positive"));
            }
            Ok(c * horizon)
        }
        DerivStd::Profile(f) => {
            let mut bad = false;
            let q = integrate_adaptive(
                |t| {
                    let v = f(t);
                    if !(v > T::zero()) || !v.is_finite() {
                        bad = true;
                    }
                    v
                },
                T::zero(),
                horizon,
                spec,
            )?
            .require_converged()?;
            if bad {
                return Err(Error::invalid(
                    "derivative standard deviation profile must be positive on [0, T]",
                ));
            }
            Ok(q.value)
        }
    }
}

/// `Φ̄ⁿ(u) + Φ̄ⁿ⁻¹(u) φ(u) / √(2π) · ∫_0^T Σ_i √Var(X_i'(t)) dt`.
pub fn theorem1_bound<T: Real>(
    s: &[DerivStd<'_, T>],
    horizon: T,
    u: T,
    spec: &QuadratureSpec<T>,
) -> Result<BoundReport<T>> {
    check_level(u, horizon)?;
    if s.is_empty() {
        return Err(Error::invalid("need at least one process"));
    }
    let integrals = s
        .iter()
        .map(|si| integrate_profile(si, horizon, spec))
        .collect::<Result<Vec<T>>>()?;
    let sum = integrals.iter().fold(T::zero(), |a, &b| a + b);
    let n = s.len();
    let tail = phi_bar_raw(u);
    let point_term = tail.powi(n as i32);
    let crossing_term = tail.powi(n as i32 - 1) * phi_raw(u) * inv_sqrt_2pi::<T>() * sum;
    Ok(BoundReport {
        u,
        horizon,
        n,
        point_term,
        crossing_term,
        total: point_term + crossing_term,
        method: BoundMethod::Theorem1,
        inputs: BoundInputs::DerivStdIntegrals(integrals),
    })
}

/// [`theorem1_bound`] with the derivative profiles of independent kernels.
pub fn theorem1_bound_for<T: Real>(ps: &ProcessSet<T>, u: T, spec: &QuadratureSpec<T>) -> Result<BoundReport<T>> {
    ps.validate()?;
    let kernels = match &ps.dependence {
        Dependence::Independent { kernels } => kernels,
        Dependence::CorrelatedPair { .. } => {
            return Err(Error::invalid(
                "theorem1 bound needs independent processes; use correlated_bound",
            ))
        }
    };
    let profiles: Vec<Box<dyn Fn(T) -> T + '_>> = kernels
        .iter()
        .map(|k| Box::new(move |t| k.deriv_std(t)) as Box<dyn Fn(T) -> T>)
        .collect();
    let s: Vec<DerivStd<'_, T>> = kernels
        .iter()
        .zip(&profiles)
        .map(|(k, p)| {
            if k.is_stationary() {
                DerivStd::Constant(k.deriv_std(T::zero()))
            } else {
                DerivStd::Profile(p.as_ref())
            }
        })
        .collect();
    theorem1_bound(&s, ps.horizon, u, spec)
}

fn check_c<T: Real>(c: &[T]) -> Result<()> {
    if c.is_empty() {
        return Err(Error::invalid("need at least one stationary parameter"));
    }
    for &ci in c {
        ensure_finite("C", ci)?;
        if !(ci > T::zero()) {
            return Err(Error::invalid(format!(
                "stationary parameters must be positive, got {ci}"
            )));
        }
    }
    Ok(())
}

/// Stationary form `Φ̄ⁿ(u) + Φ̄ⁿ⁻¹(u) φ(u) T / √(2π) · Σ √C_i`.
pub fn corollary1_bound<T: Real>(c: &[T], horizon: T, u: T) -> Result<BoundReport<T>> {
    check_c(c)?;
    let s: Vec<DerivStd<'_, T>> = c.iter().map(|&ci| DerivStd::Constant(ci.sqrt())).collect();
    let mut report = theorem1_bound(&s, horizon, u, &QuadratureSpec::default())?;
    report.inputs = BoundInputs::Stationary(c.to_vec());
    Ok(report)
}

/// Upper-triangular Toeplitz 2×2 matrix `[[diag, upper], [0, diag]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpperToeplitz2<T> {
    pub diag: T,
    pub upper: T,
}

impl<T: Real> UpperToeplitz2<T> {
    pub fn identity() -> Self {
        Self {
            diag: T::one(),
            upper: T::zero(),
        }
    }
}

impl<T: Real> std::ops::Mul for UpperToeplitz2<T> {
    type Output = Self;

    fn mul(self, rhs: Self) -> Self {
        Self {
            diag: self.diag * rhs.diag,
            upper: self.diag * rhs.upper + self.upper * rhs.diag,
        }
    }
}

/// `R_i = [[Φ̄(u), √C_i φ(u)/√2], [0, Φ̄(u)]]` for each process.
pub fn ec_matrices<T: Real>(c: &[T], u: T) -> Vec<UpperToeplitz2<T>> {
    let tail = phi_bar_raw(u);
    let dens = phi_raw(u) * T::FRAC_1_SQRT_2();
    c.iter()
        .map(|&ci| UpperToeplitz2 {
            diag: tail,
            upper: ci.sqrt() * dens,
        })
        .collect()
}

/// Euler-characteristic approximation `(1, 0) (Π R_i) (1, T/√π)ᵗ`, multiplied
/// out in the given order.
pub fn ec_heuristic<T: Real>(c: &[T], horizon: T, u: T) -> Result<BoundReport<T>> {
    check_c(c)?;
    check_level(u, horizon)?;
    let prod = ec_matrices(c, u)
        .into_iter()
        .fold(UpperToeplitz2::identity(), |a, b| a * b);
    let point_term = prod.diag;
    let crossing_term = prod.upper * horizon / T::PI().sqrt();
    Ok(BoundReport {
        u,
        horizon,
        n: c.len(),
        point_term,
        crossing_term,
        total: point_term + crossing_term,
        method: BoundMethod::EcMatrix,
        inputs: BoundInputs::Stationary(c.to_vec()),
    })
}

/// `Σ √C_i / √(2π)`.
pub fn pickands_constant<T: Real>(c: &[T]) -> Result<T> {
    check_c(c)?;
    Ok(c.iter().fold(T::zero(), |a, &ci| a + ci.sqrt()) * inv_sqrt_2pi::<T>())
}

/// Bound for `X1 = X`, `X2 = ρX + √(1-ρ²)Y`:
/// `2∫_u^∞ φ(x) Φ̄(κx) dx + 2T φ(u) s / √(2π) · Φ̄(κu)` with
/// `κ = √((1-ρ)/(1+ρ))` and `s = √Var(X'(0))`.
pub fn correlated_bound<T: Real>(
    u: T,
    rho: T,
    horizon: T,
    deriv_std: T,
    spec: &QuadratureSpec<T>,
) -> Result<BoundReport<T>> {
    check_level(u, horizon)?;
    ensure_finite("rho", rho)?;
    ensure_finite("deriv_std", deriv_std)?;
    if !(rho.abs() < T::one()) {
        return Err(Error::invalid(format!("rho must lie in (-1, 1), got {rho}")));
    }
    if !(deriv_std > T::zero()) {
        return Err(Error::invalid("derivative standard deviation must be positive"));
    }
    let kappa = ((T::one() - rho) / (T::one() + rho)).sqrt();
    let point_term = orthant_prob_with(u, rho, spec)?;
    let crossing_term = T::lit(2.0) * horizon * phi_raw(u) * deriv_std * inv_sqrt_2pi::<T>() * phi_bar_raw(kappa * u);
    Ok(BoundReport {
        u,
        horizon,
        n: 2,
        point_term,
        crossing_term,
        total: point_term + crossing_term,
        method: BoundMethod::Correlated,
        inputs: BoundInputs::Correlated { rho, deriv_std },
    })
}

/// [`correlated_bound`] for a correlated-pair process set.
pub fn correlated_bound_for<T: Real>(ps: &ProcessSet<T>, u: T, spec: &QuadratureSpec<T>) -> Result<BoundReport<T>> {
    match &ps.dependence {
        Dependence::CorrelatedPair { base, rho } => {
            if !base.is_stationary() {
                return Err(Error::invalid("correlated bound needs a stationary base kernel"));
            }
            correlated_bound(u, *rho, ps.horizon, base.deriv_std(T::zero()), spec)
        }
        Dependence::Independent { .. } => Err(Error::invalid("correlated bound needs a correlated pair")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::Kernel;
    use crate::scalar_stats::{phi, phi_bar};
    use proptest::prelude::*;

    fn spec() -> QuadratureSpec<f64> {
        QuadratureSpec::default()
    }

    #[test]
    fn theorem1_examples() {
        let r = theorem1_bound(&[DerivStd::Constant(1.0)], 1.0, 2.0, &spec()).unwrap();
        assert!((r.point_term - 0.022_750).abs() < 1e-6);
        assert!((r.crossing_term - 0.021_539).abs() < 1e-6);
        assert!((r.total - 0.044_289).abs() < 1e-6);
        assert_eq!(r.total, r.point_term + r.crossing_term);

        let r = theorem1_bound(&[DerivStd::Constant(1.0), DerivStd::Constant(1.0)], 0.0, 1.3, &spec()).unwrap();
        assert_eq!(r.total, phi_bar(1.3_f64).unwrap().powi(2));
    }

    #[test]
    fn warped_profile_integrates() {
        let horizon = 1.0;
        let ps = ProcessSet::independent(horizon, vec![Kernel::warped_se(1.0, 0.5)]).unwrap();
        let warped = theorem1_bound_for(&ps, 2.0, &spec()).unwrap();
        let flat = theorem1_bound(&[DerivStd::Constant(1.0)], horizon, 2.0, &spec()).unwrap();
        assert!((warped.crossing_term / flat.crossing_term - 1.5).abs() < 1e-12);
        assert_eq!(warped.point_term, flat.point_term);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(theorem1_bound(&[DerivStd::Constant(1.0)], 1.0, 0.0, &spec()).is_err());
        assert!(theorem1_bound(&[DerivStd::Constant(1.0)], 1.0, -1.0, &spec()).is_err());
        assert!(theorem1_bound::<f64>(&[], 1.0, 1.0, &spec()).is_err());
        assert!(theorem1_bound(&[DerivStd::Constant(0.0)], 1.0, 1.0, &spec()).is_err());
        let neg = |t: f64| t - 0.5;
        assert!(theorem1_bound(&[DerivStd::Profile(&neg)], 1.0, 1.0, &spec()).is_err());
        assert!(corollary1_bound(&[1.0, -1.0], 1.0, 1.0).is_err());
        assert!(correlated_bound(2.0, 1.0, 1.0, 1.0, &spec()).is_err());
        assert!(pickands_constant::<f64>(&[]).is_err());
    }

    #[test]
    fn corollary1_examples() {
        let a = corollary1_bound(&[1.0], 1.0, 2.0).unwrap();
        let b = theorem1_bound(&[DerivStd::Constant(1.0)], 1.0, 2.0, &spec()).unwrap();
        assert_eq!(a.total, b.total);

        let r = corollary1_bound(&[1.0, 4.0], 1.0, 2.0).unwrap();
        let unit = phi_bar(2.0).unwrap() * phi(2.0).unwrap() / (2.0 * std::f64::consts::PI).sqrt();
        assert!((r.crossing_term / unit - 3.0).abs() < 1e-14);

        // Φ̄²(2) = 5.1757e-4 and 2·Φ̄(2)φ(2)/√(2π) = 9.8004e-4 (mpmath).
        let r = corollary1_bound(&[1.0_f64, 1.0], 1.0, 2.0).unwrap();
        assert!((r.point_term - 5.175_685_036_595_64e-4).abs() < 1e-15);
        assert!((r.crossing_term - 9.800_428_923_714_833e-4).abs() < 1e-15);
        assert!((r.total - 1.497_611_396_031_047_5e-3).abs() < 1e-15);
    }

    #[test]
    fn ec_examples() {
        let ec = ec_heuristic(&[1.0], 0.7, 2.0).unwrap();
        let direct = phi_bar(2.0).unwrap() + phi(2.0).unwrap() * 0.7 / (2.0 * std::f64::consts::PI).sqrt();
        assert!((ec.total - direct).abs() < 1e-16);
        let z = ec_heuristic(&[1.0, 2.0, 3.0], 0.0, 1.5).unwrap();
        assert_eq!(z.total, phi_bar(1.5_f64).unwrap().powi(3));
        assert_eq!(z.method, BoundMethod::EcMatrix);
    }

    #[test]
    fn pickands_examples() {
        assert!((pickands_constant(&[1.0_f64]).unwrap() - 0.398_942_280_4).abs() < 1e-10);
        assert!((pickands_constant(&[1.0_f64, 1.0]).unwrap() - 0.797_884_560_8).abs() < 1e-10);
        assert!((pickands_constant(&[4.0_f64]).unwrap() - 0.797_884_560_8).abs() < 1e-10);
    }

    #[test]
    fn correlated_examples() {
        let s = spec();
        for u in [0.5, 2.0, 3.0] {
            let c = correlated_bound(u, 0.0, 1.0, 1.0, &s).unwrap();
            let t = theorem1_bound(&[DerivStd::Constant(1.0), DerivStd::Constant(1.0)], 1.0, u, &s).unwrap();
            assert!((c.total - t.total).abs() < 1e-12, "u={u}");
        }
        let near = correlated_bound(2.0, 1.0 - 1e-9, 1.0, 1.0, &s).unwrap();
        let single = theorem1_bound(&[DerivStd::Constant(1.0)], 1.0, 2.0, &s).unwrap();
        assert!((near.total - single.total).abs() < 1e-5);

        let r = correlated_bound(2.0, 0.5, 1.0, 1.0, &s).unwrap();
        assert_eq!(r.point_term, orthant_prob_with(2.0, 0.5, &s).unwrap());
        let expect =
            2.0 * phi(2.0).unwrap() * phi_bar(2.0 / 3f64.sqrt()).unwrap() / (2.0 * std::f64::consts::PI).sqrt();
        assert!((r.crossing_term - expect).abs() < 1e-16);
    }

    #[test]
    fn correlated_nondecreasing_in_rho() {
        let s = spec();
        let rhos = [-0.9, -0.5, 0.0, 0.3, 0.6, 0.9, 0.99];
        for u in [1.0, 2.0, 3.0] {
            let totals: Vec<f64> = rhos
                .iter()
                .map(|&r| correlated_bound(u, r, 1.0, 1.0, &s).unwrap().total)
                .collect();
            for w in totals.windows(2) {
                assert!(w[1] >= w[0], "u={u}: {totals:?}");
            }
        }
    }

    #[test]
    fn crossing_to_point_ratio_grows() {
        let ratio = |u: f64| {
            let r = corollary1_bound(&[1.0, 2.0], 1.0, u).unwrap();
            r.crossing_term / r.point_term
        };
        assert!(ratio(6.0) > ratio(3.0));
    }

    proptest! {
        #[test]
        fn ec_matches_corollary1(
            c in prop::collection::vec(0.1f64..10.0, 1..7),
            horizon in 0.1f64..5.0,
            u in 0.5f64..6.0,
        ) {
            let ec = ec_heuristic(&c, horizon, u).unwrap().total;
            let cor = corollary1_bound(&c, horizon, u).unwrap().total;
            prop_assert!(((ec - cor) / cor).abs() < 1e-12);
        }

        #[test]
        fn theorem1_monotone(s1 in 0.1f64..3.0, s2 in 0.1f64..3.0, horizon in 0.1f64..3.0, u in 0.3f64..5.0) {
            let b = |s1: f64, s2: f64, h: f64, u: f64| {
                theorem1_bound(&[DerivStd::Constant(s1), DerivStd::Constant(s2)], h, u, &spec()).unwrap().total
            };
            let base = b(s1, s2, horizon, u);
            prop_assert!(b(s1, s2, horizon, u + 0.1) < base);
            prop_assert!(b(s1, s2, horizon + 0.1, u) > base);
            prop_assert!(b(s1 + 0.1, s2, horizon, u) > base);
            prop_assert!(b(s1, s2 + 0.1, horizon, u) > base);
        }
    }
}
