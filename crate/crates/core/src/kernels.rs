//! Unit-variance covariance models with closed-form derivative variance.
//!
//! Every kernel here satisfies `r(t, t) = 1`. The quantity the bounds need is
//! `Var(X'(t)) = ∂²r/∂s∂t |_{s=t}`, which each variant supplies analytically.
//!
//! For stationary kernels the small-lag expansion `r(t) = 1 - C t² + o(t²)`
//! gives `Var(X') = 2C`. The stationary-bound formulas in [`crate::bounds`]
//! take a user-facing parameter `C` with the mapping `√C = √Var(X')`, so the
//! value to pass for a kernel is [`Kernel::bound_c`], not
//! [`Kernel::taylor_c`].

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::sampler::Grid;
use crate::Real;

/// Off-diagonal correlations must stay below `1 - SEPARATION_EPS`.
pub const SEPARATION_EPS: f64 = 1e-10;

/// Strictly increasing time change `τ` with `τ(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Warp<T> {
    /// `τ(t) = t + β t²`, increasing on `[0, T]` when `β > -1/(2T)`.
    Quadratic { beta: T },
}

impl<T: Real> Warp<T> {
    pub fn apply(&self, t: T) -> T {
        match *self {
            Warp::Quadratic { beta } => t + beta * t * t,
        }
    }

    pub fn derivative(&self, t: T) -> T {
        match *self {
            Warp::Quadratic { beta } => T::one() + T::lit(2.0) * beta * t,
        }
    }

    fn validate(&self, horizon: T) -> Result<()> {
        match *self {
            Warp::Quadratic { beta } => {
                ensure_finite("beta", beta)?;
                if !(self.derivative(horizon) > T::zero()) {
                    return Err(Error::invalid(format!(
                        "quadratic warp with beta {beta} is not increasing on [0, {horizon}]"
                    )));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
pub enum Kernel<T> {
    /// `exp(-(s-t)² / (2ℓ²))`
    #[serde(rename = "se")]
    SquaredExponential { lengthscale: T },
    /// `(1 + √5 d/ℓ + 5d²/(3ℓ²)) exp(-√5 d/ℓ)`, `d = |s - t|`.
    ///
    /// Fourth-order smoothness at the diagonal is borderline for the
    /// sharpness results; use it for bound-validity runs only.
    #[serde(rename = "matern52")]
    Matern52 { lengthscale: T },
    /// Squared exponential in warped time, `exp(-(τ(s)-τ(t))² / (2ℓ²))`.
    #[serde(rename = "warped_se")]
    TimeWarpedSe { lengthscale: T, warp: Warp<T> },
}

impl<T: Real> Kernel<T> {
    pub fn se(lengthscale: T) -> Self {
        Kernel::SquaredExponential { lengthscale }
    }

    pub fn matern52(lengthscale: T) -> Self {
        Kernel::Matern52 { lengthscale }
    }

    pub fn warped_se(lengthscale: T, beta: T) -> Self {
        Kernel::TimeWarpedSe {
            lengthscale,
            warp: Warp::Quadratic { beta },
        }
    }

    pub fn lengthscale(&self) -> T {
        match *self {
            Kernel::SquaredExponential { lengthscale }
            | Kernel::Matern52 { lengthscale }
            | Kernel::TimeWarpedSe { lengthscale, .. } => lengthscale,
        }
    }

    pub fn is_stationary(&self) -> bool {
        !matches!(self, Kernel::TimeWarpedSe { .. })
    }

    /// Checks parameters against a horizon `[0, T]`.
    pub fn validate(&self, horizon: T) -> Result<()> {
        let l = self.lengthscale();
        ensure_finite("lengthscale", l)?;
        if !(l > T::zero()) {
            return Err(Error::invalid(format!("lengthscale must be positive, got {l}")));
        }
        if let Kernel::TimeWarpedSe { warp, .. } = self {
            warp.validate(horizon)?;
        }
        Ok(())
    }

    /// Correlation `r(s, t)` without range checks.
    #[inline]
    pub fn correlation(&self, s: T, t: T) -> T {
        match *self {
            Kernel::SquaredExponential { lengthscale } => {
                let d = (s - t) / lengthscale;
                (-(d * d) * T::lit(0.5)).exp()
            }
            Kernel::Matern52 { lengthscale } => {
                let x = T::lit(5.0).sqrt() * (s - t).abs() / lengthscale;
                (T::one() + x + x * x / T::lit(3.0)) * (-x).exp()
            }
            Kernel::TimeWarpedSe { lengthscale, warp } => {
                let d = (warp.apply(s) - warp.apply(t)) / lengthscale;
                (-(d * d) * T::lit(0.5)).exp()
            }
        }
    }

    /// `Var(X'(t))`, the mixed second derivative of `r` on the diagonal.
    pub fn deriv_variance(&self, t: T) -> T {
        match *self {
            Kernel::SquaredExponential { lengthscale } => (lengthscale * lengthscale).recip(),
            Kernel::Matern52 { lengthscale } => T::lit(5.0) / (T::lit(3.0) * lengthscale * lengthscale),
            Kernel::TimeWarpedSe { lengthscale, warp } => {
                let v = warp.derivative(t) / lengthscale;
                v * v
            }
        }
    }

    /// `√Var(X'(t))`.
    pub fn deriv_std(&self, t: T) -> T {
        self.deriv_variance(t).sqrt()
    }

    /// Coefficient `C` of the lag expansion `r(t) = 1 - C t² + o(t²)`.
    pub fn taylor_c(&self) -> Option<T> {
        self.is_stationary()
            .then(|| self.deriv_variance(T::zero()) * T::lit(0.5))
    }

    /// Stationary parameter to feed the `C`-based bound formulas so that
    /// `√C` equals this kernel's `√Var(X')`.
    pub fn bound_c(&self) -> Option<T> {
        self.is_stationary().then(|| self.deriv_variance(T::zero()))
    }
}

/// Range-checked `r(s, t)` for `s, t ∈ [0, horizon]`.
pub fn kernel_eval<T: Real>(k: &Kernel<T>, horizon: T, s: T, t: T) -> Result<T> {
    ensure_finite("s", s)?;
    ensure_finite("t", t)?;
    for x in [s, t] {
        if x < T::zero() || x > horizon {
            return Err(Error::invalid(format!("time {x} outside [0, {horizon}]")));
        }
    }
    Ok(k.correlation(s, t))
}

/// Covariance matrix of the kernel restricted to the grid points.
pub fn cov_matrix<T: Real>(k: &Kernel<T>, grid: &Grid<T>) -> DMatrix<T> {
    let pts = grid.points();
    let n = pts.len();
    let mut m = DMatrix::from_element(n, n, T::one());
    for i in 0..n {
        for j in 0..i {
            let r = k.correlation(pts[i], pts[j]);
            m[(i, j)] = r;
            m[(j, i)] = r;
        }
    }
    m
}

/// Summary of the hypothesis checks run by [`validate_kernel`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelReport<T> {
    pub kernel: Kernel<T>,
    pub horizon: T,
    pub grid_points: usize,
    pub max_offdiag_abs_corr: T,
    pub min_deriv_variance: T,
    pub max_deriv_variance: T,
    /// Numerically fitted `Ĉ` in `r(t) ≈ 1 - Ĉ t²` (stationary kernels only).
    pub fitted_c: Option<T>,
}

/// Checks the smooth-process hypotheses on a `grid_n`-point grid of `[0, T]`:
/// `|r(s, t)| < 1 - ε` off the diagonal and `Var(X'(t)) > 0`.
pub fn validate_kernel<T: Real>(k: &Kernel<T>, horizon: T, grid_n: usize) -> Result<KernelReport<T>> {
    ensure_finite("horizon", horizon)?;
    if !(horizon > T::zero()) {
        return Err(Error::invalid("horizon must be positive (empty interior)"));
    }
    if grid_n < 2 {
        return Err(Error::invalid("validation grid needs at least 2 points"));
    }
    k.validate(horizon)?;
    let grid = Grid::new(horizon, grid_n)?;
    let pts = grid.points();
    let limit = T::one() - T::lit(SEPARATION_EPS);

    let mut violations = Vec::new();
    let mut max_corr = T::zero();
    for i in 0..pts.len() {
        for j in 0..i {
            let r = k.correlation(pts[i], pts[j]).abs();
            max_corr = max_corr.max(r);
            if !(r < limit) {
                violations.push((pts[j].to_f64_lossy(), pts[i].to_f64_lossy()));
            }
        }
    }
    let mut min_dv = T::infinity();
    let mut max_dv = T::zero();
    for &t in &pts {
        let dv = k.deriv_variance(t);
        min_dv = min_dv.min(dv);
        max_dv = max_dv.max(dv);
        if !(dv > T::zero()) {
            violations.push((t.to_f64_lossy(), t.to_f64_lossy()));
        }
    }
    if !violations.is_empty() {
        return Err(Error::KernelHypothesis { pairs: violations });
    }

    Ok(KernelReport {
        kernel: *k,
        horizon,
        grid_points: grid_n,
        max_offdiag_abs_corr: max_corr,
        min_deriv_variance: min_dv,
        max_deriv_variance: max_dv,
        fitted_c: k.is_stationary().then(|| fit_lag_coefficient(k, horizon)),
    })
}

/// Least-squares fit of `(1 - r(t)) / t² ≈ c0 + c1 t + c2 t²` on small lags;
/// returns the intercept `c0`.
fn fit_lag_coefficient<T: Real>(k: &Kernel<T>, horizon: T) -> T {
    const SAMPLES: usize = 8;
    let h = T::lit(0.02).min(horizon);
    // Normal equations for the 3-parameter polynomial fit, in f64.
    let mut ata = [[0.0f64; 3]; 3];
    let mut aty = [0.0f64; 3];
    for j in 1..=SAMPLES {
        let t = h * T::lit(j as f64 / SAMPLES as f64);
        let y = ((T::one() - k.correlation(T::zero(), t)) / (t * t)).to_f64_lossy();
        let tf = t.to_f64_lossy() / h.to_f64_lossy();
        let row = [1.0, tf, tf * tf];
        for a in 0..3 {
            aty[a] += row[a] * y;
            for b in 0..3 {
                ata[a][b] += row[a] * row[b];
            }
        }
    }
    let m = nalgebra::Matrix3::from_fn(|a, b| ata[a][b]);
    let v = nalgebra::Vector3::new(aty[0], aty[1], aty[2]);
    let sol = m.lu().solve(&v).expect("Vandermonde normal equations are nonsingular");
    T::lit(sol[0])
}

/// The `n` processes whose conjunction is studied, on a common horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessSet<T> {
    pub horizon: T,
    pub dependence: Dependence<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Dependence<T> {
    Independent {
        kernels: Vec<Kernel<T>>,
    },
    /// `X1 = X`, `X2 = ρX + √(1-ρ²) Y` with `X, Y` independent copies of `base`.
    CorrelatedPair {
        base: Kernel<T>,
        rho: T,
    },
}

impl<T: Real> ProcessSet<T> {
    pub fn independent(horizon: T, kernels: Vec<Kernel<T>>) -> Result<Self> {
        let ps = Self {
            horizon,
            dependence: Dependence::Independent { kernels },
        };
        ps.validate()?;
        Ok(ps)
    }

    pub fn correlated_pair(horizon: T, base: Kernel<T>, rho: T) -> Result<Self> {
        let ps = Self {
            horizon,
            dependence: Dependence::CorrelatedPair { base, rho },
        };
        ps.validate()?;
        Ok(ps)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("horizon", self.horizon)?;
        if !(self.horizon >= T::zero()) {
            return Err(Error::invalid("horizon must be nonnegative"));
        }
        match &self.dependence {
            Dependence::Independent { kernels } => {
                if kernels.is_empty() {
                    return Err(Error::invalid("need at least one process"));
                }
                kernels.iter().try_for_each(|k| k.validate(self.horizon))
            }
            Dependence::CorrelatedPair { base, rho } => {
                ensure_finite("rho", *rho)?;
                if !(rho.abs() < T::one()) {
                    return Err(Error::invalid(format!("rho must lie in (-1, 1), got {rho}")));
                }
                base.validate(self.horizon)
            }
        }
    }

    pub fn n(&self) -> usize {
        match &self.dependence {
            Dependence::Independent { kernels } => kernels.len(),
            Dependence::CorrelatedPair { .. } => 2,
        }
    }

    /// Marginal kernel of process `i`. Both members of a correlated pair share
    /// the base kernel's law.
    pub fn marginal(&self, i: usize) -> &Kernel<T> {
        match &self.dependence {
            Dependence::Independent { kernels } => &kernels[i],
            Dependence::CorrelatedPair { base, .. } => base,
        }
    }

    pub fn rho(&self) -> Option<T> {
        match self.dependence {
            Dependence::CorrelatedPair { rho, .. } => Some(rho),
            Dependence::Independent { .. } => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn variants() -> Vec<Kernel<f64>> {
        vec![
            Kernel::se(1.0),
            Kernel::se(0.3),
            Kernel::matern52(1.0),
            Kernel::matern52(0.5),
            Kernel::warped_se(1.0, 0.5),
            Kernel::warped_se(0.7, -0.3),
        ]
    }

    #[test]
    fn eval_examples() {
        let se = Kernel::se(1.0_f64);
        assert_eq!(kernel_eval(&se, 1.0, 0.3, 0.3).unwrap(), 1.0);
        assert!((kernel_eval(&se, 1.0, 0.0, 1.0).unwrap() - 0.606_530_659_712_633_4).abs() < 1e-15);
        assert_eq!(kernel_eval(&Kernel::matern52(1.0), 1.0, 0.0, 0.0).unwrap(), 1.0);
        assert!(kernel_eval(&se, 1.0, 0.0, 1.5).is_err());
        assert!(kernel_eval(&se, 1.0, -0.1, 0.5).is_err());
    }

    #[test]
    fn symmetric_unit_diagonal() {
        for k in variants() {
            for &(s, t) in &[(0.1, 0.7), (0.0, 1.0), (0.45, 0.2)] {
                assert_eq!(k.correlation(s, t), k.correlation(t, s));
                assert_eq!(k.correlation(t, t), 1.0);
            }
        }
    }

    #[test]
    fn deriv_variance_closed_forms() {
        assert_eq!(Kernel::se(1.0).deriv_variance(0.3), 1.0);
        assert!((Kernel::matern52(1.0_f64).deriv_variance(0.9) - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(Kernel::warped_se(1.0, 0.0).deriv_variance(0.4), 1.0);
        assert!((Kernel::warped_se(1.0_f64, 0.5).deriv_std(0.5) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn deriv_variance_matches_finite_differences() {
        let horizon = 1.0;
        let h = 1e-4;
        for k in variants() {
            for frac in [0.1, 0.5, 0.9] {
                let t = frac * horizon;
                let fd = (k.correlation(t + h, t + h) - k.correlation(t + h, t - h) - k.correlation(t - h, t + h)
                    + k.correlation(t - h, t - h))
                    / (4.0 * h * h);
                let dv = k.deriv_variance(t);
                assert!(((fd - dv) / dv).abs() < 1e-5, "{k:?} t={t}: fd={fd} dv={dv}");
            }
        }
    }

    #[test]
    fn validate_fits_lag_coefficient() {
        let r = validate_kernel(&Kernel::se(1.0_f64), 1.0, 65).unwrap();
        assert!((r.fitted_c.unwrap() - 0.5).abs() < 1e-6);
        let r = validate_kernel(&Kernel::matern52(1.0_f64), 1.0, 65).unwrap();
        assert!((r.fitted_c.unwrap() - 5.0 / 6.0).abs() < 1e-4);
        let r = validate_kernel(&Kernel::warped_se(1.0_f64, 0.5), 1.0, 33).unwrap();
        assert!(r.fitted_c.is_none());
        assert!((r.max_deriv_variance - 4.0).abs() < 1e-12);
    }

    #[test]
    fn fitted_coefficient_is_half_derivative_variance() {
        for k in [
            Kernel::se(1.0_f64),
            Kernel::se(0.4),
            Kernel::matern52(1.0),
            Kernel::matern52(2.0),
        ] {
            let c = validate_kernel(&k, 1.0, 17).unwrap().fitted_c.unwrap();
            let dv = k.deriv_variance(0.0);
            assert!((dv - 2.0 * c).abs() / dv < 2e-4, "{k:?}");
            assert_eq!(k.taylor_c().unwrap() * 2.0, dv);
        }
    }

    #[test]
    fn validate_rejects_degenerate_inputs() {
        assert!(validate_kernel(&Kernel::se(1.0), 0.0, 10).is_err());
        assert!(validate_kernel(&Kernel::se(1.0), 1.0, 1).is_err());
        assert!(validate_kernel(&Kernel::se(-1.0), 1.0, 10).is_err());
        assert!(validate_kernel(&Kernel::warped_se(1.0, -0.6), 1.0, 10).is_err());
        // Near-perfect correlation between neighbours violates |r| < 1 - ε.
        match validate_kernel(&Kernel::se(1e4), 1.0, 200) {
            Err(Error::KernelHypothesis { pairs }) => assert!(!pairs.is_empty()),
            other => panic!("expected hypothesis violation, got {other:?}"),
        }
    }

    #[test]
    fn cov_matrix_examples() {
        let k = Kernel::se(1.0);
        let one = cov_matrix(&k, &Grid::new(1.0, 1).unwrap());
        assert_eq!(one.nrows(), 1);
        assert_eq!(one[(0, 0)], 1.0);
        let m = cov_matrix(&k, &Grid::new(1.0, 2).unwrap());
        assert_eq!(m[(0, 1)], (-0.5f64).exp());
        assert_eq!(m[(1, 0)], (-0.5f64).exp());
        for k in variants() {
            let m = cov_matrix(&k, &Grid::new(1.0, 17).unwrap());
            assert_eq!(m, m.transpose());
        }
    }

    #[test]
    fn cov_matrices_are_psd() {
        for k in variants() {
            for n in [2, 9, 33, 64] {
                let m = cov_matrix(&k, &Grid::new(1.0, n).unwrap());
                let min = m.symmetric_eigenvalues().min();
                assert!(min >= -1e-9, "{k:?} n={n} min eig {min}");
            }
        }
    }

    #[test]
    fn kernel_json_shape() {
        let k: Kernel<f64> = serde_json::from_str(r#"{"type": "se", "lengthscale": 1.0}"#).unwrap();
        assert_eq!(k, Kernel::se(1.0));
        let k: Kernel<f64> = serde_json::from_str(
            r#"{"type": "warped_se", "lengthscale": 2.0, "warp": {"family": "quadratic", "beta": 0.5}}"#,
        )
        .unwrap();
        assert_eq!(k, Kernel::warped_se(2.0, 0.5));
        assert!(serde_json::from_str::<Kernel<f64>>(r#"{"type": "se", "lengthscale": 1, "x": 2}"#).is_err());
    }

    #[test]
    fn process_set_validation() {
        assert!(ProcessSet::independent(1.0, vec![]).is_err());
        assert!(ProcessSet::correlated_pair(1.0, Kernel::se(1.0), 1.0).is_err());
        let ps = ProcessSet::correlated_pair(1.0, Kernel::se(1.0), 0.6).unwrap();
        assert_eq!(ps.n(), 2);
        assert_eq!(ps.rho(), Some(0.6));
    }
}
