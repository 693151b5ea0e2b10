//! Standard normal density and tail, the bivariate orthant integral, and the
//! adaptive Gauss–Kronrod quadrature the other modules build on.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::Real;

/// Tolerances and budget for [`integrate_adaptive`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureSpec<T> {
    pub abs_tol: T,
    pub rel_tol: T,
    pub max_subdivisions: usize,
}

impl<T: Real> QuadratureSpec<T> {
    pub fn new(abs_tol: T, rel_tol: T, max_subdivisions: usize) -> Result<Self> {
        let spec = Self {
            abs_tol,
            rel_tol,
            max_subdivisions,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > T::zero()) || !self.abs_tol.is_finite() {
            return Err(Error::invalid("quadrature abs_tol must be positive"));
        }
        if !(self.rel_tol >= T::zero()) || !self.rel_tol.is_finite() {
            return Err(Error::invalid("quadrature rel_tol must be nonnegative"));
        }
        if self.max_subdivisions == 0 {
            return Err(Error::invalid("quadrature max_subdivisions must be at least 1"));
        }
        Ok(())
    }
}

impl<T: Real> Default for QuadratureSpec<T> {
    fn default() -> Self {
        Self {
            abs_tol: T::lit(1e-12),
            rel_tol: T::lit(1e-10),
            max_subdivisions: 500,
        }
    }
}

/// Outcome of an adaptive integration. `converged == false` means the
/// subdivision budget ran out; `value` is then the best available estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature<T> {
    pub value: T,
    pub err_estimate: T,
    pub subdivisions: usize,
    pub converged: bool,
}

impl<T: Real> Quadrature<T> {
    /// Turns a budget exhaustion into [`Error::Quadrature`].
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::Quadrature {
                value: self.value.to_f64_lossy(),
                err_estimate: self.err_estimate.to_f64_lossy(),
            })
        }
    }
}

/// Distance from the upper truncation point to the start of the tail mass.
/// The standard normal density is below 1e-340 there.
pub const TAIL_TRUNCATION: f64 = 40.0;

#[inline]
pub(crate) fn phi_raw<T: Real>(x: T) -> T {
    let inv_sqrt_2pi = T::FRAC_2_SQRT_PI() * T::FRAC_1_SQRT_2() * T::lit(0.5);
    inv_sqrt_2pi * (-(x * x) * T::lit(0.5)).exp()
}

#[inline]
pub(crate) fn phi_bar_raw<T: Real>(x: T) -> T {
    T::lit(0.5) * (x * T::FRAC_1_SQRT_2()).erfc()
}

/// Standard normal density.
pub fn phi<T: Real>(x: T) -> Result<T> {
    ensure_finite("phi", x)?;
    Ok(phi_raw(x))
}

/// Standard normal tail `P(Z >= x)`, evaluated through `erfc` so it keeps
/// full relative accuracy far into the upper tail.
pub fn phi_bar<T: Real>(x: T) -> Result<T> {
    ensure_finite("phi_bar", x)?;
    Ok(phi_bar_raw(x))
}

/// `P(X1 >= u, X2 >= u)` for a standard bivariate normal pair with
/// correlation `rho`, as `2 ∫_u^∞ φ(x) Φ̄(√((1-ρ)/(1+ρ)) x) dx`.
pub fn orthant_prob<T: Real>(u: T, rho: T) -> Result<T> {
    orthant_prob_with(u, rho, &QuadratureSpec::default())
}

pub fn orthant_prob_with<T: Real>(u: T, rho: T, spec: &QuadratureSpec<T>) -> Result<T> {
    ensure_finite("u", u)?;
    ensure_finite("rho", rho)?;
    if !(rho.abs() < T::one()) {
        return Err(Error::invalid(format!("correlation must lie in (-1, 1), got {rho}")));
    }
    let slope = ((T::one() - rho) / (T::one() + rho)).sqrt();
    let upper = u.max(T::zero()) + T::lit(TAIL_TRUNCATION);
    let two = T::lit(2.0);
    let q = integrate_adaptive(|x| two * phi_raw(x) * phi_bar_raw(slope * x), u, upper, spec)?.require_converged()?;
    Ok(q.value.max(T::zero()).min(T::one()))
}

/// Inverse of the standard normal CDF, `p ∈ (0, 1)`.
///
/// Acklam's rational approximation followed by one Halley step against the
/// erfc-based tail.
pub fn normal_quantile(p: f64) -> Result<f64> {
    ensure_finite("p", p)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("quantile level must lie in (0, 1), got {p}")));
    }
    #[allow(clippy::excessive_precision)]
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    #[allow(clippy::excessive_precision)]
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549671083416000e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    // Halley refinement on F(x) - p with F(x) = 1 - Φ̄(x).
    let e = (1.0 - phi_bar_raw(x)) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (x * x / 2.0).exp();
    Ok(x - u / (1.0 + x * u / 2.0))
}

// 15-point Kronrod rule with its embedded 7-point Gauss rule.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_225,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
struct Panel<T> {
    a: T,
    b: T,
    value: T,
    err: T,
}

fn gauss_kronrod<T: Real, F: FnMut(T) -> T>(f: &mut F, a: T, b: T) -> Panel<T> {
    let half = T::lit(0.5);
    let center = half * (a + b);
    let hl = half * (b - a);
    let fc = f(center);
    let mut res_g = fc * T::lit(WG[3]);
    let mut res_k = fc * T::lit(WGK[7]);
    let mut res_abs = res_k.abs();
    let mut fv1 = [T::zero(); 7];
    let mut fv2 = [T::zero(); 7];
    for j in 0..7 {
        let dx = hl * T::lit(XGK[j]);
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        let w = T::lit(WGK[j]);
        res_k = res_k + w * (f1 + f2);
        res_abs = res_abs + w * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g = res_g + T::lit(WG[j / 2]) * (f1 + f2);
        }
    }
    let mean = res_k * half;
    let mut res_asc = T::lit(WGK[7]) * (fc - mean).abs();
    for j in 0..7 {
        res_asc = res_asc + T::lit(WGK[j]) * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let value = res_k * hl;
    let res_abs = res_abs * hl.abs();
    let res_asc = res_asc * hl.abs();
    let mut err = ((res_k - res_g) * hl).abs();
    if res_asc != T::zero() && err != T::zero() {
        err = res_asc * T::one().min((T::lit(200.0) * err / res_asc).powf(T::lit(1.5)));
    }
    let roundoff = T::lit(50.0) * T::epsilon() * res_abs;
    if res_abs > T::min_positive_value() / (T::lit(50.0) * T::epsilon()) {
        err = err.max(roundoff);
    }
    Panel { a, b, value, err }
}

/// Adaptive Gauss–Kronrod (7/15) integration of `f` over `[a, b]`.
///
/// Panels are bisected in order of largest local error until the summed
/// error estimate drops below `max(abs_tol, rel_tol·|value|)` or the
/// subdivision budget is spent.
pub fn integrate_adaptive<T: Real, F: FnMut(T) -> T>(
    mut f: F,
    a: T,
    b: T,
    spec: &QuadratureSpec<T>,
) -> Result<Quadrature<T>> {
    ensure_finite("a", a)?;
    ensure_finite("b", b)?;
    spec.validate()?;
    if a > b {
        return Err(Error::invalid("integration bounds must satisfy a <= b"));
    }
    if a == b {
        return Ok(Quadrature {
            value: T::zero(),
            err_estimate: T::zero(),
            subdivisions: 0,
            converged: true,
        });
    }

    let mut panels = vec![gauss_kronrod(&mut f, a, b)];
    let mut subdivisions = 1;
    loop {
        let (value, err) = panels
            .iter()
            .fold((T::zero(), T::zero()), |(v, e), p| (v + p.value, e + p.err));
        if !value.is_finite() || !err.is_finite() {
            return Err(Error::invalid("integrand produced a non-finite value"));
        }
        let target = spec.abs_tol.max(spec.rel_tol * value.abs());
        if err <= target || subdivisions >= spec.max_subdivisions {
            return Ok(Quadrature {
                value,
                err_estimate: err,
                subdivisions,
                converged: err <= target,
            });
        }
        let worst = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.err.partial_cmp(&y.1.err).unwrap_or(std::cmp::Ordering::Equal))
            .map(|(i, _)| i)
            .expect("at least one panel");
        let p = panels.swap_remove(worst);
        let mid = T::lit(0.5) * (p.a + p.b);
        if !(mid > p.a && mid < p.b) {
            // Panel cannot be split further in this precision.
            return Ok(Quadrature {
                value,
                err_estimate: err,
                subdivisions,
                converged: false,
            });
        }
        panels.push(gauss_kronrod(&mut f, p.a, mid));
        panels.push(gauss_kronrod(&mut f, mid, p.b));
        subdivisions += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phi_values() {
        assert_eq!(phi(0.0).unwrap(), 0.398_942_280_401_432_7);
        // exp(-2)/sqrt(2π) evaluated in extended precision (mpmath, 30 digits).
        assert!((phi(2.0).unwrap() - 0.053_990_966_513_188_06_f64).abs() < 1e-17);
        for x in [0.5, 1.0, 3.0] {
            assert_eq!(phi(x).unwrap(), phi(-x).unwrap());
        }
    }

    #[test]
    fn phi_bar_values() {
        assert_eq!(phi_bar(0.0).unwrap(), 0.5);
        // erfc(sqrt(2))/2 from an mpmath oracle.
        assert!((phi_bar(2.0).unwrap() - 0.022_750_131_948_179_2_f64).abs() < 1e-16);
        let p = phi(8.0_f64).unwrap();
        let t = phi_bar(8.0).unwrap();
        assert!(t < p / 8.0_f64 && t > p / 8.0 - p / 512.0);
        // mpmath: ncdf(-8)
        assert!((t / 6.220_960_574_271_784e-16 - 1.0).abs() < 1e-13);
    }

    #[test]
    fn non_finite_rejected() {
        assert!(matches!(phi(f64::NAN), Err(Error::NonFinite { .. })));
        assert!(phi_bar(f64::INFINITY).is_err());
        assert!(orthant_prob(f64::NEG_INFINITY, 0.0).is_err());
    }

    #[test]
    fn phi_bar_symmetry() {
        let mut x = -8.0_f64;
        while x <= 8.0 {
            let s = phi_bar(x).unwrap() + phi_bar(-x).unwrap();
            assert!((s - 1.0).abs() <= 1e-14, "x={x} sum={s}");
            x += 0.125;
        }
    }

    #[test]
    fn mills_sandwich() {
        for k in 1..=20 {
            let u = 0.5 * k as f64;
            let p = phi(u).unwrap();
            let t = phi_bar(u).unwrap();
            assert!(p / u > t, "upper fails at {u}");
            assert!(t > p / u - p / (u * u * u), "lower fails at {u}");
        }
    }

    #[test]
    fn f32_path_matches_f64() {
        let a = phi_bar(1.5f32).unwrap() as f64;
        let b = phi_bar(1.5f64).unwrap();
        assert!((a - b).abs() < 1e-7);
    }

    #[test]
    fn quadrature_basics() {
        let spec = QuadratureSpec::default();
        let q = integrate_adaptive(|_| 1.0_f64, 0.0, 1.0, &spec).unwrap();
        assert!((q.value - 1.0_f64).abs() < 1e-15 && q.converged);
        let q = integrate_adaptive(|x: f64| x, 0.0, 2.0, &spec).unwrap();
        assert!((q.value - 2.0_f64).abs() < 1e-14);
        let q = integrate_adaptive(phi_raw, 0.0_f64, 40.0, &spec).unwrap();
        assert!((q.value - 0.5).abs() < 1e-12, "{}", q.value);
        let q = integrate_adaptive(|x: f64| x.sin(), 3.0, 3.0, &spec).unwrap();
        assert_eq!(q.value, 0.0);
    }

    #[test]
    fn quadrature_budget_exhaustion_flags() {
        let spec = QuadratureSpec {
            abs_tol: 1e-15,
            rel_tol: 0.0,
            max_subdivisions: 2,
        };
        let q = integrate_adaptive(|x: f64| (1.0 / (x + 1e-3)).sin(), 0.0, 1.0, &spec).unwrap();
        assert!(!q.converged);
        assert!(matches!(q.require_converged(), Err(Error::Quadrature { .. })));
    }

    #[test]
    fn quadrature_rejects_bad_specs() {
        assert!(QuadratureSpec::new(0.0, 1e-10, 10).is_err());
        assert!(QuadratureSpec::new(1e-12, -1.0, 10).is_err());
        assert!(QuadratureSpec::new(1e-12, 1e-10, 0).is_err());
        assert!(integrate_adaptive(|x| x, 1.0, 0.0, &QuadratureSpec::default()).is_err());
    }

    #[test]
    fn orthant_examples() {
        assert!((orthant_prob(0.0_f64, 0.0).unwrap() - 0.25).abs() < 1e-12);
        let t = phi_bar(2.0_f64).unwrap();
        assert!((orthant_prob(2.0_f64, 0.0).unwrap() - t * t).abs() < 1e-12);
        assert!((orthant_prob(0.0_f64, 0.5).unwrap() - 1.0 / 3.0).abs() < 1e-10);
        assert!(orthant_prob(1.0, 1.0).is_err());
        assert!(orthant_prob(1.0, -1.2).is_err());
    }

    #[test]
    fn orthant_sheppard_and_independence() {
        for rho in [-0.9, -0.5, 0.0, 0.5, 0.9f64] {
            let sheppard = 0.25 + rho.asin() / (2.0 * std::f64::consts::PI);
            assert!((orthant_prob(0.0, rho).unwrap() - sheppard).abs() < 1e-10, "rho={rho}");
        }
        for u in [0.0_f64, 1.0, 2.0, 3.0] {
            let t = phi_bar(u).unwrap();
            assert!((orthant_prob(u, 0.0).unwrap() - t * t).abs() < 1e-10);
        }
    }

    #[test]
    fn orthant_monotone() {
        let rhos = [-0.8, -0.4, 0.0, 0.4, 0.8];
        let us = [-1.0, 0.0, 0.5, 1.0, 2.0, 3.0];
        for &rho in &rhos {
            for w in us.windows(2) {
                assert!(orthant_prob(w[1], rho).unwrap() <= orthant_prob(w[0], rho).unwrap());
            }
        }
        for &u in &us {
            for w in rhos.windows(2) {
                assert!(orthant_prob(u, w[1]).unwrap() >= orthant_prob(u, w[0]).unwrap());
            }
        }
    }

    #[test]
    fn quantile_inverts_tail() {
        for p in [1e-10, 0.001, 0.025, 0.3, 0.5, 0.9, 0.975, 0.999] {
            let x = normal_quantile(p).unwrap();
            let back = 1.0 - phi_bar(x).unwrap();
            assert!((back - p).abs() < 1e-12 * p.max(1e-3), "p={p}");
        }
        assert!((normal_quantile(0.975).unwrap() - 1.959_963_984_540_054).abs() < 1e-12);
        assert!(normal_quantile(0.0).is_err());
    }
}
