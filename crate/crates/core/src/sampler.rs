//! Exact finite-dimensional sampling of the processes on a uniform grid.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::kernels::{Dependence, Kernel, ProcessSet};
use crate::rng::{self, Lane};
use crate::Real;

/// Uniform grid `t_k = k·T/(n_points - 1)` on `[0, T]`. A single-point grid
/// sits at `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    pub horizon: T,
    pub n_points: usize,
}

impl<T: Real> Grid<T> {
    pub fn new(horizon: T, n_points: usize) -> Result<Self> {
        ensure_finite("horizon", horizon)?;
        if n_points == 0 {
            return Err(Error::invalid("grid needs at least one point"));
        }
        if !(horizon >= T::zero()) || (n_points >= 2 && horizon == T::zero()) {
            return Err(Error::invalid(format!(
                "grid horizon {horizon} invalid for {n_points} points"
            )));
        }
        Ok(Self { horizon, n_points })
    }

    pub fn spacing(&self) -> T {
        if self.n_points < 2 {
            T::zero()
        } else {
            self.horizon / T::lit((self.n_points - 1) as f64)
        }
    }

    pub fn point(&self, k: usize) -> T {
        if k + 1 == self.n_points && self.n_points >= 2 {
            self.horizon
        } else {
            self.spacing() * T::lit(k as f64)
        }
    }

    pub fn points(&self) -> Vec<T> {
        (0..self.n_points).map(|k| self.point(k)).collect()
    }
}

/// One replication of the process values on the grid, row-major by process.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample<T = f64> {
    values: Vec<T>,
    n_processes: usize,
    pub grid: Grid<T>,
    pub seed: u64,
    pub rep_index: u64,
}

impl<T: Real> PathSample<T> {
    /// Builds a sample from explicit rows (one per process, equal lengths).
    pub fn from_rows(grid: Grid<T>, rows: &[Vec<T>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("path sample needs at least one process"));
        }
        if rows.iter().any(|r| r.len() != grid.n_points) {
            return Err(Error::invalid("every row must have one value per grid point"));
        }
        Ok(Self {
            values: rows.concat(),
            n_processes: rows.len(),
            grid,
            seed: 0,
            rep_index: 0,
        })
    }

    pub fn zeros(grid: Grid<T>, n_processes: usize) -> Self {
        Self {
            values: vec![T::zero(); grid.n_points * n_processes],
            n_processes,
            grid,
            seed: 0,
            rep_index: 0,
        }
    }

    pub fn n_processes(&self) -> usize {
        self.n_processes
    }

    pub fn n_points(&self) -> usize {
        self.grid.n_points
    }

    pub fn row(&self, i: usize) -> &[T] {
        let n = self.grid.n_points;
        &self.values[i * n..(i + 1) * n]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let n = self.grid.n_points;
        &mut self.values[i * n..(i + 1) * n]
    }

    #[inline]
    pub fn value(&self, i: usize, k: usize) -> T {
        self.values[i * self.grid.n_points + k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.values.chunks_exact(self.grid.n_points)
    }
}

/// Cholesky factor of `m + jitter·I`.
#[derive(Debug, Clone)]
pub struct JitteredCholesky {
    pub lower: DMatrix<f64>,
    pub jitter: f64,
}

pub const JITTER_START: f64 = 1e-12;
pub const JITTER_CAP: f64 = 1e-6;

/// Cholesky factorization, retrying with diagonal jitter 1e-12, 1e-11, …,
/// 1e-6 until it succeeds.
pub fn chol_with_jitter(m: &DMatrix<f64>) -> Result<JitteredCholesky> {
    if !m.is_square() {
        return Err(Error::invalid("cholesky needs a square matrix"));
    }
    if let Some(c) = m.clone().cholesky() {
        return Ok(JitteredCholesky {
            lower: c.unpack(),
            jitter: 0.0,
        });
    }
    let n = m.nrows();
    let mut jitter = JITTER_START;
    while jitter <= JITTER_CAP * (1.0 + 1e-9) {
        let shifted = m + DMatrix::<f64>::identity(n, n) * jitter;
        if let Some(c) = shifted.cholesky() {
            return Ok(JitteredCholesky {
                lower: c.unpack(),
                jitter,
            });
        }
        jitter *= 10.0;
    }
    Err(Error::Cholesky { max_jitter: JITTER_CAP })
}

/// How the grid covariance is factored for sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum FactorMethod {
    /// Diagonally pivoted Cholesky stopped once every residual variance is
    /// below `tol`. Smooth kernels reach machine-level residuals at low rank.
    Pivoted { tol: f64 },
    /// Full Cholesky with escalating jitter.
    Jittered,
}

impl Default for FactorMethod {
    fn default() -> Self {
        FactorMethod::Pivoted { tol: 1e-12 }
    }
}

/// `F` with `F Fᵀ ≈ Σ`, stored as `rank` columns of length `n`.
#[derive(Debug, Clone)]
pub struct CovFactor {
    n: usize,
    rank: usize,
    cols: Vec<f64>,
    /// Largest diagonal entry of `Σ - F Fᵀ` (pivoted), or the jitter added.
    pub residual: f64,
}

impl CovFactor {
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn column(&self, k: usize) -> &[f64] {
        &self.cols[k * self.n..(k + 1) * self.n]
    }

    /// `out = F z`, with `z.len() == rank`.
    pub fn apply(&self, z: &[f64], out: &mut [f64]) {
        debug_assert_eq!(z.len(), self.rank);
        out.fill(0.0);
        for (k, &zk) in z.iter().enumerate() {
            for (o, &c) in out.iter_mut().zip(self.column(k)) {
                *o += zk * c;
            }
        }
    }

    pub fn from_lower(chol: &JitteredCholesky) -> Self {
        let n = chol.lower.nrows();
        Self {
            n,
            rank: n,
            // nalgebra storage is column-major already.
            cols: chol.lower.as_slice().to_vec(),
            residual: chol.jitter,
        }
    }

    /// Pivoted (incomplete) Cholesky of the PSD matrix given entrywise.
    pub fn pivoted(n: usize, entry: impl Fn(usize, usize) -> f64, tol: f64) -> Self {
        let mut diag: Vec<f64> = (0..n).map(|i| entry(i, i)).collect();
        let mut done = vec![false; n];
        let mut cols: Vec<f64> = Vec::new();
        let mut rank = 0;
        loop {
            let (p, dmax) = diag.iter().enumerate().filter(|(i, _)| !done[*i]).fold(
                (usize::MAX, f64::NEG_INFINITY),
                |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc },
            );
            if p == usize::MAX || dmax <= tol {
                let residual = if p == usize::MAX { 0.0 } else { dmax.max(0.0) };
                return Self {
                    n,
                    rank,
                    cols,
                    residual,
                };
            }
            let piv = dmax.sqrt();
            let mut col = vec![0.0; n];
            for j in 0..n {
                if done[j] || j == p {
                    continue;
                }
                let mut s = entry(j, p);
                for q in 0..rank {
                    let c = &cols[q * n..(q + 1) * n];
                    s -= c[j] * c[p];
                }
                col[j] = s / piv;
                diag[j] -= col[j] * col[j];
            }
            col[p] = piv;
            diag[p] = 0.0;
            done[p] = true;
            cols.extend_from_slice(&col);
            rank += 1;
        }
    }

    pub fn for_kernel(k: &Kernel<f64>, grid: &Grid<f64>, method: FactorMethod) -> Result<Self> {
        let pts = grid.points();
        match method {
            FactorMethod::Pivoted { tol } => {
                if !(tol > 0.0 && tol.is_finite()) {
                    return Err(Error::invalid("pivoted factor tolerance must be positive"));
                }
                Ok(Self::pivoted(pts.len(), |i, j| k.correlation(pts[i], pts[j]), tol))
            }
            FactorMethod::Jittered => {
                let m = crate::kernels::cov_matrix(k, grid);
                Ok(Self::from_lower(&chol_with_jitter(&m)?))
            }
        }
    }
}

/// Reusable sampler for one `(ProcessSet, Grid)`; factors are computed once
/// and shared read-only.
#[derive(Debug, Clone)]
pub struct PathSampler {
    ps: ProcessSet<f64>,
    grid: Grid<f64>,
    /// Factor used by each independent source path.
    factors: Vec<Arc<CovFactor>>,
}

impl PathSampler {
    pub fn new(ps: &ProcessSet<f64>, grid: Grid<f64>) -> Result<Self> {
        Self::with_method(ps, grid, FactorMethod::default())
    }

    pub fn with_method(ps: &ProcessSet<f64>, grid: Grid<f64>, method: FactorMethod) -> Result<Self> {
        ps.validate()?;
        if grid.n_points >= 2 && grid.horizon != ps.horizon {
            return Err(Error::invalid(format!(
                "grid horizon {} differs from process horizon {}",
                grid.horizon, ps.horizon
            )));
        }
        if ps.n() > rng::MAX_PROCESSES {
            return Err(Error::invalid("too many processes"));
        }
        let sources: Vec<Kernel<f64>> = match &ps.dependence {
            Dependence::Independent { kernels } => kernels.clone(),
            Dependence::CorrelatedPair { base, .. } => vec![*base, *base],
        };
        let mut cache: Vec<(Kernel<f64>, Arc<CovFactor>)> = Vec::new();
        let mut factors = Vec::with_capacity(sources.len());
        for k in sources {
            let f = match cache.iter().find(|(c, _)| *c == k) {
                Some((_, f)) => f.clone(),
                None => {
                    let f = Arc::new(CovFactor::for_kernel(&k, &grid, method)?);
                    cache.push((k, f.clone()));
                    f
                }
            };
            factors.push(f);
        }
        Ok(Self {
            ps: ps.clone(),
            grid,
            factors,
        })
    }

    pub fn grid(&self) -> &Grid<f64> {
        &self.grid
    }

    pub fn process_set(&self) -> &ProcessSet<f64> {
        &self.ps
    }

    pub fn n_processes(&self) -> usize {
        self.ps.n()
    }

    pub fn factors(&self) -> &[Arc<CovFactor>] {
        &self.factors
    }

    /// Largest factorization residual/jitter over all processes.
    pub fn max_residual(&self) -> f64 {
        self.factors.iter().map(|f| f.residual).fold(0.0, f64::max)
    }

    pub fn max_rank(&self) -> usize {
        self.factors.iter().map(|f| f.rank()).max().unwrap_or(0)
    }

    pub fn new_sample(&self) -> PathSample<f64> {
        PathSample::zeros(self.grid, self.n_processes())
    }

    /// Fills `out` with replication `rep_index` of seed `seed`.
    pub fn sample_into(&self, seed: u64, rep_index: u64, out: &mut PathSample<f64>, z: &mut Vec<f64>) {
        debug_assert_eq!(out.n_processes(), self.n_processes());
        out.seed = seed;
        out.rep_index = rep_index;
        for (i, f) in self.factors.iter().enumerate() {
            let mut r = rng::stream(seed, rep_index, i, Lane::Normal);
            z.clear();
            z.extend((0..f.rank()).map(|_| rng::standard_normal(&mut r)));
            f.apply(z, out.row_mut(i));
        }
        if let Dependence::CorrelatedPair { rho, .. } = self.ps.dependence {
            let c = (1.0 - rho * rho).sqrt();
            let n = self.grid.n_points;
            let (x, y) = out.values.split_at_mut(n);
            for (yk, &xk) in y.iter_mut().zip(x.iter()) {
                *yk = rho * xk + c * *yk;
            }
        }
    }

    pub fn sample(&self, seed: u64, rep_index: u64) -> PathSample<f64> {
        let mut out = self.new_sample();
        self.sample_into(seed, rep_index, &mut out, &mut Vec::new());
        out
    }
}

/// One-shot convenience around [`PathSampler`].
pub fn sample_paths(ps: &ProcessSet<f64>, grid: Grid<f64>, seed: u64, rep_index: u64) -> Result<PathSample<f64>> {
    Ok(PathSampler::new(ps, grid)?.sample(seed, rep_index))
}
