//! Monte Carlo estimators for the conjunction probability, crossing moments,
//! the Euler characteristic of the excursion set, and the generalized Pickands
//! constant.
//!
//! Replications are keyed by index and drawn from counter-based streams, and
//! every per-replication statistic is an integer. Accumulation is therefore
//! exact integer addition and the results are bit-identical for any worker
//! count or chunk order.

use serde::Serialize;

use crate::crossings::{crossing_cells, crossing_counts_ranged, row_ranges, CrossingCounts};
use crate::error::{Error, Result};
use crate::kernels::{Dependence, ProcessSet};
use crate::sampler::{Grid, PathSampler};
use crate::scalar_stats::{normal_quantile, phi_bar_raw, phi_raw};

mod pickands;

pub use pickands::{
    estimate_pickands, extrapolate_pickands, lattice_success, PickandsCandidates, PickandsEstimate,
    PickandsExtrapolation, Verdict, MAX_LATTICE_SPACING, MIN_PICKANDS_REPS,
};

/// Replications per work item. Fixed so chunk boundaries never depend on the
/// thread count.
const CHUNK: u64 = 512;

/// Minimum replications for the path-based estimators.
pub const MIN_REPS: u64 = 100;

/// Replication budget and execution settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McRun {
    pub reps: u64,
    pub seed: u64,
    /// Worker threads; `None` uses the global pool.
    #[serde(skip)]
    pub threads: Option<usize>,
    /// Two-sided confidence level of reported intervals.
    pub level: f64,
}

impl McRun {
    pub fn new(reps: u64, seed: u64) -> Self {
        Self {
            reps,
            seed,
            threads: None,
            level: 0.95,
        }
    }

    pub fn with_threads(mut self, threads: Option<usize>) -> Self {
        self.threads = threads;
        self
    }

    fn validate(&self, min_reps: u64) -> Result<()> {
        if self.reps < min_reps {
            return Err(Error::invalid(format!(
                "need at least {min_reps} replications, got {}",
                self.reps
            )));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::invalid("confidence level must lie in (0, 1)"));
        }
        if self.threads == Some(0) {
            return Err(Error::invalid("thread count must be positive"));
        }
        Ok(())
    }

    fn z(&self) -> f64 {
        normal_quantile(0.5 + self.level / 2.0).expect("level validated")
    }
}

/// Point estimate with standard error and confidence interval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McEstimate {
    pub quantity: String,
    pub estimate: f64,
    pub stderr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
    pub reps: u64,
    pub grid_points: usize,
    pub seed: u64,
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_ci(successes: u64, trials: u64, level: f64) -> Result<(f64, f64)> {
    if trials == 0 || successes > trials {
        return Err(Error::invalid(
            "wilson interval needs 0 <= successes <= trials, trials > 0",
        ));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid("confidence level must lie in (0, 1)"));
    }
    let z = normal_quantile(0.5 + level / 2.0)?;
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = p + z2 / (2.0 * n);
    let rad = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let low = if successes == 0 {
        0.0
    } else {
        ((center - rad) / denom).max(0.0)
    };
    let high = if successes == trials {
        1.0
    } else {
        ((center + rad) / denom).min(1.0)
    };
    Ok((low, high))
}

fn proportion(quantity: &str, successes: u64, run: &McRun, grid_points: usize) -> McEstimate {
    let n = run.reps as f64;
    let p = successes as f64 / n;
    let (ci_low, ci_high) = wilson_ci(successes, run.reps, run.level).expect("validated counts");
    McEstimate {
        quantity: quantity.to_string(),
        estimate: p,
        stderr: (p * (1.0 - p) / n).sqrt(),
        ci_low: ci_low.min(p),
        ci_high: ci_high.max(p),
        level: run.level,
        reps: run.reps,
        grid_points,
        seed: run.seed,
    }
}

/// Integer first and second moments of a per-replication count.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Moments {
    pub sum: u64,
    pub sum_sq: u64,
}

impl Moments {
    #[inline]
    pub fn push(&mut self, x: u64) {
        self.sum += x;
        self.sum_sq += x * x;
    }

    fn merge(&mut self, o: &Self) {
        self.sum += o.sum;
        self.sum_sq += o.sum_sq;
    }

    fn estimate(&self, quantity: &str, run: &McRun, z: f64, grid_points: usize) -> McEstimate {
        let n = run.reps as f64;
        let mean = self.sum as f64 / n;
        let var = if run.reps > 1 {
            ((self.sum_sq as f64 - n * mean * mean) / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        let stderr = (var / n).sqrt();
        McEstimate {
            quantity: quantity.to_string(),
            estimate: mean,
            stderr,
            ci_low: mean - z * stderr,
            ci_high: mean + z * stderr,
            level: run.level,
            reps: run.reps,
            grid_points,
            seed: run.seed,
        }
    }
}

/// Runs `body` for every replication index, folding into per-chunk
/// accumulators that are merged afterwards.
pub(crate) fn run_chunked<S, A>(
    reps: u64,
    threads: Option<usize>,
    make_scratch: impl Fn() -> S + Sync,
    make_acc: impl Fn() -> A + Sync,
    body: impl Fn(&mut S, &mut A, u64) + Sync,
    merge: impl Fn(&mut A, A) + Sync,
) -> Result<A>
where
    A: Send,
{
    use rayon::prelude::*;
    let n_chunks = reps.div_ceil(CHUNK);
    let work = || {
        (0..n_chunks)
            .into_par_iter()
            .map(|c| {
                let mut scratch = make_scratch();
                let mut acc = make_acc();
                for rep in c * CHUNK..((c + 1) * CHUNK).min(reps) {
                    body(&mut scratch, &mut acc, rep);
                }
                acc
            })
            .reduce(&make_acc, |mut a, b| {
                merge(&mut a, b);
                a
            })
    };
    match threads {
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
            Ok(pool.install(work))
        }
        None => Ok(work()),
    }
}

#[derive(Debug, Clone, Default)]
struct ProcessAcc {
    up: Moments,
    up_factorial2: Moments,
    down: Moments,
    conj_up: Moments,
}

#[derive(Debug, Clone, Default)]
struct LevelAcc {
    exceed: u64,
    chi: Moments,
    chi_minus_exceed: Moments,
    simultaneous: Moments,
    touch_violations: u64,
    sub_cell_excursions: u64,
    processes: Vec<ProcessAcc>,
}

impl LevelAcc {
    fn new(n: usize) -> Self {
        Self {
            processes: vec![ProcessAcc::default(); n],
            ..Default::default()
        }
    }

    fn merge(&mut self, o: &Self) {
        self.exceed += o.exceed;
        self.chi.merge(&o.chi);
        self.chi_minus_exceed.merge(&o.chi_minus_exceed);
        self.simultaneous.merge(&o.simultaneous);
        self.touch_violations += o.touch_violations;
        self.sub_cell_excursions += o.sub_cell_excursions;
        for (a, b) in self.processes.iter_mut().zip(&o.processes) {
            a.up.merge(&b.up);
            a.up_factorial2.merge(&b.up_factorial2);
            a.down.merge(&b.down);
            a.conj_up.merge(&b.conj_up);
        }
    }
}

/// Per-process crossing moment estimates at one level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProcessMoments {
    pub process: usize,
    /// `E[U_u]`, up-crossings of `u`.
    pub mean_up: McEstimate,
    /// `E[U_u (U_u - 1)]`.
    pub mean_up_factorial2: McEstimate,
    pub mean_down: McEstimate,
    /// `E[U_{i,u}]`, conjunction up-crossings.
    pub mean_conj_up: McEstimate,
}

/// Everything measured at one level in a [`simulate`] run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelSummary {
    pub u: f64,
    pub conjunction: McEstimate,
    pub euler_char: McEstimate,
    /// Per-replication `χ - 1{exceeds}`; estimates `E[χ] - P(conjunction)`.
    pub euler_minus_conjunction: McEstimate,
    pub simultaneous_cells: McEstimate,
    pub processes: Vec<ProcessMoments>,
    /// Replications that exceed from outside without any conjunction
    /// up-crossing. Must be zero.
    pub touch_violations: u64,
    /// Replications with a conjunction up-crossing but no grid point in the
    /// conjunction set (excursion shorter than one cell).
    pub sub_cell_excursions: u64,
}

/// Output of [`simulate`]: one [`LevelSummary`] per requested level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Simulation {
    pub run: McRun,
    pub grid_points: usize,
    pub n_processes: usize,
    pub factor_rank: usize,
    pub factor_residual: f64,
    pub levels: Vec<LevelSummary>,
}

/// Samples `run.reps` replications once and evaluates every statistic at each
/// level in `levels`.
pub fn simulate(ps: &ProcessSet<f64>, levels: &[f64], grid: Grid<f64>, run: &McRun) -> Result<Simulation> {
    let sampler = PathSampler::new(ps, grid)?;
    simulate_with(&sampler, levels, run)
}

pub fn simulate_with(sampler: &PathSampler, levels: &[f64], run: &McRun) -> Result<Simulation> {
    run.validate(MIN_REPS)?;
    if levels.is_empty() {
        return Err(Error::invalid("need at least one level"));
    }
    if let Some(u) = levels.iter().find(|u| !u.is_finite()) {
        return Err(Error::NonFinite { name: "u", value: *u });
    }
    let n = sampler.n_processes();
    let seed = run.seed;
    let accs = run_chunked(
        run.reps,
        run.threads,
        || (sampler.new_sample(), Vec::new(), CrossingCounts::default(), Vec::new()),
        || levels.iter().map(|_| LevelAcc::new(n)).collect::<Vec<_>>(),
        |(paths, z, counts, ranges), accs, rep| {
            sampler.sample_into(seed, rep, paths, z);
            row_ranges(paths, ranges);
            for (acc, &u) in accs.iter_mut().zip(levels) {
                let summary = crossing_counts_ranged(paths, u, ranges, counts);
                let exceed = summary.exceeds as u64;
                let chi = summary.euler_char as u64;
                acc.exceed += exceed;
                acc.chi.push(chi);
                acc.chi_minus_exceed.push(chi - exceed);
                acc.simultaneous.push(counts.simultaneous_cells as u64);
                let touched = counts.total_conj_up() > 0;
                if summary.exceeds && !summary.starts_inside && !touched {
                    acc.touch_violations += 1;
                }
                if !summary.exceeds && touched {
                    acc.sub_cell_excursions += 1;
                }
                for (i, p) in acc.processes.iter_mut().enumerate() {
                    let up = counts.up[i] as u64;
                    p.up.push(up);
                    p.up_factorial2.push(up * up.saturating_sub(1));
                    p.down.push(counts.down[i] as u64);
                    p.conj_up.push(counts.conj_up[i] as u64);
                }
            }
        },
        |a, b| {
            for (x, y) in a.iter_mut().zip(&b) {
                x.merge(y);
            }
        },
    )?;

    let gp = sampler.grid().n_points;
    let z = run.z();
    let levels = levels
        .iter()
        .zip(accs)
        .map(|(&u, acc)| LevelSummary {
            u,
            conjunction: proportion("conjunction_prob", acc.exceed, run, gp),
            euler_char: acc.chi.estimate("euler_char", run, z, gp),
            euler_minus_conjunction: acc.chi_minus_exceed.estimate("euler_minus_conjunction", run, z, gp),
            simultaneous_cells: acc.simultaneous.estimate("simultaneous_cells", run, z, gp),
            processes: acc
                .processes
                .iter()
                .enumerate()
                .map(|(i, p)| ProcessMoments {
                    process: i,
                    mean_up: p.up.estimate(&format!("mean_up[{i}]"), run, z, gp),
                    mean_up_factorial2: p
                        .up_factorial2
                        .estimate(&format!("mean_up_factorial2[{i}]"), run, z, gp),
                    mean_down: p.down.estimate(&format!("mean_down[{i}]"), run, z, gp),
                    mean_conj_up: p.conj_up.estimate(&format!("mean_conj_up[{i}]"), run, z, gp),
                })
                .collect(),
            touch_violations: acc.touch_violations,
            sub_cell_excursions: acc.sub_cell_excursions,
        })
        .collect();
    Ok(Simulation {
        run: *run,
        grid_points: gp,
        n_processes: n,
        factor_rank: sampler.max_rank(),
        factor_residual: sampler.max_residual(),
        levels,
    })
}

fn single_level(ps: &ProcessSet<f64>, u: f64, grid: Grid<f64>, run: &McRun) -> Result<LevelSummary> {
    Ok(simulate(ps, &[u], grid, run)?.levels.remove(0))
}

/// Fraction of replications whose grid path satisfies `max_k min_i X_i(t_k) >= u`,
/// with a Wilson interval.
pub fn estimate_conjunction_prob(ps: &ProcessSet<f64>, u: f64, grid: Grid<f64>, run: &McRun) -> Result<McEstimate> {
    Ok(single_level(ps, u, grid, run)?.conjunction)
}

/// Per-process means of `U_u`, `U_u(U_u - 1)` and `U_{i,u}`.
pub fn estimate_crossing_moments(
    ps: &ProcessSet<f64>,
    u: f64,
    grid: Grid<f64>,
    run: &McRun,
) -> Result<Vec<ProcessMoments>> {
    Ok(single_level(ps, u, grid, run)?.processes)
}

/// Mean Euler characteristic of the grid excursion set.
pub fn estimate_euler_char(ps: &ProcessSet<f64>, u: f64, grid: Grid<f64>, run: &McRun) -> Result<McEstimate> {
    Ok(single_level(ps, u, grid, run)?.euler_char)
}

/// `(bound - estimate) / (Φ̄ⁿ⁻¹(u) φ(u))` and its standard error.
pub fn normalized_gap(bound_total: f64, estimate: &McEstimate, n: usize, u: f64) -> (f64, f64) {
    let scale = phi_bar_raw(u).powi(n as i32 - 1) * phi_raw(u);
    ((bound_total - estimate.estimate) / scale, estimate.stderr / scale)
}

/// Mean number of grid cells in which both processes of an independent pair
/// cross `u`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimultaneousCells {
    pub u: f64,
    pub grid_points: usize,
    /// Average over the replications' own `(X1, X2)` pairs.
    pub paired: McEstimate,
    /// Two-sample U-statistic: average over all `reps²` pairings of an `X1`
    /// path with an `X2` path. Same mean, much smaller variance.
    pub cross_paired: McEstimate,
}

#[derive(Debug, Default)]
struct CellAcc {
    paired: Moments,
    counts: [Vec<u64>; 2],
    /// `(rep, crossing cells)` for paths with at least one crossing.
    cells: [Vec<(u64, Vec<u32>)>; 2],
}

/// Diagnostic for simultaneous crossings: how often two independent processes cross the
/// level inside the same grid cell.
pub fn estimate_simultaneous_cells(
    ps: &ProcessSet<f64>,
    u: f64,
    grid: Grid<f64>,
    run: &McRun,
) -> Result<SimultaneousCells> {
    run.validate(MIN_REPS)?;
    if !matches!(&ps.dependence, Dependence::Independent { kernels } if kernels.len() == 2) {
        return Err(Error::invalid(
            "simultaneous-crossing diagnostic needs two independent processes",
        ));
    }
    if grid.n_points < 2 {
        return Err(Error::invalid(
            "simultaneous-crossing diagnostic needs at least two grid points",
        ));
    }
    let sampler = PathSampler::new(ps, grid)?;
    let cells = grid.n_points - 1;
    let seed = run.seed;
    let mut acc = run_chunked(
        run.reps,
        run.threads,
        || (sampler.new_sample(), Vec::new()),
        || CellAcc {
            counts: [vec![0; cells], vec![0; cells]],
            ..Default::default()
        },
        |(paths, z), acc, rep| {
            sampler.sample_into(seed, rep, paths, z);
            acc.paired
                .push(crate::crossings::simultaneous_crossing_cells(paths, u) as u64);
            for i in 0..2 {
                let list: Vec<u32> = crossing_cells(paths.row(i), u).map(|k| k as u32).collect();
                for &k in &list {
                    acc.counts[i][k as usize] += 1;
                }
                if !list.is_empty() {
                    acc.cells[i].push((rep, list));
                }
            }
        },
        |a, b| {
            a.paired.merge(&b.paired);
            for i in 0..2 {
                for (x, y) in a.counts[i].iter_mut().zip(&b.counts[i]) {
                    *x += y;
                }
                a.cells[i].extend(b.cells[i].iter().cloned());
            }
        },
    )?;
    for list in &mut acc.cells {
        list.sort_unstable_by_key(|(rep, _)| *rep);
    }

    let m = run.reps as f64;
    let z = run.z();
    let pairs: u64 = acc.counts[0].iter().zip(&acc.counts[1]).map(|(a, b)| a * b).sum();
    let mean = pairs as f64 / (m * m);
    // Hájek projection: Var ≈ Var(g1)/m + Var(g2)/m with g_i(x) the chance
    // that a fresh path of the other process shares a crossing cell with x.
    let mut var = 0.0;
    for i in 0..2 {
        let other = &acc.counts[1 - i];
        let (mut s, mut s2) = (0.0, 0.0);
        for (_, list) in &acc.cells[i] {
            let g: f64 = list.iter().map(|&k| other[k as usize] as f64 / m).sum();
            s += g;
            s2 += g * g;
        }
        let g_mean = s / m;
        var += ((s2 - m * g_mean * g_mean) / (m - 1.0)).max(0.0) / m;
    }
    let stderr = var.sqrt();
    Ok(SimultaneousCells {
        u,
        grid_points: grid.n_points,
        paired: acc.paired.estimate("simultaneous_cells", run, z, grid.n_points),
        cross_paired: McEstimate {
            quantity: "simultaneous_cells_cross_paired".into(),
            estimate: mean,
            stderr,
            ci_low: mean - z * stderr,
            ci_high: mean + z * stderr,
            level: run.level,
            reps: run.reps,
            grid_points: grid.n_points,
            seed: run.seed,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crossings::simultaneous_crossing_cells;
    use crate::kernels::Kernel;
    use crate::sampler::PathSample;
    use crate::scalar_stats::phi_bar;

    fn se_pair() -> ProcessSet<f64> {
        ProcessSet::independent(1.0, vec![Kernel::se(1.0), Kernel::se(1.0)]).unwrap()
    }

    #[test]
    fn wilson_examples() {
        assert_eq!(wilson_ci(0, 100, 0.95).unwrap().0, 0.0);
        assert_eq!(wilson_ci(100, 100, 0.95).unwrap().1, 1.0);
        let (lo, hi) = wilson_ci(50, 100, 0.95).unwrap();
        assert!(((lo + hi) / 2.0 - 0.5).abs() < 1e-12);
        // Half-width z·√(p(1-p)/n + z²/4n²)/(1 + z²/n) with z = 1.959964.
        assert!(((hi - lo) / 2.0 - 0.096_168_5).abs() < 1e-6, "{}", (hi - lo) / 2.0);
        assert!(wilson_ci(3, 2, 0.95).is_err());
        assert!(wilson_ci(1, 2, 1.0).is_err());
    }

    #[test]
    fn certain_event() {
        let run = McRun::new(200, 1);
        let est = estimate_conjunction_prob(&se_pair(), -1e9, Grid::new(1.0, 17).unwrap(), &run).unwrap();
        assert_eq!(est.estimate, 1.0);
        assert_eq!(est.stderr, 0.0);
        assert!(est.ci_low <= 1.0 && est.ci_high == 1.0);
        let chi = estimate_euler_char(&se_pair(), -1e9, Grid::new(1.0, 17).unwrap(), &run).unwrap();
        assert_eq!(chi.estimate, 1.0);
    }

    #[test]
    fn rejects_small_runs() {
        let run = McRun::new(99, 1);
        assert!(estimate_conjunction_prob(&se_pair(), 1.0, Grid::new(1.0, 9).unwrap(), &run).is_err());
        let run = McRun::new(1000, 1).with_threads(Some(0));
        assert!(estimate_conjunction_prob(&se_pair(), 1.0, Grid::new(1.0, 9).unwrap(), &run).is_err());
    }

    #[test]
    fn single_point_grid_matches_tail_power() {
        let run = McRun::new(200_000, 3);
        let est = estimate_conjunction_prob(&se_pair(), 1.0, Grid::new(1.0, 1).unwrap(), &run).unwrap();
        let target = phi_bar(1.0_f64).unwrap().powi(2);
        assert!((target - 0.025_171_489_6).abs() < 1e-9);
        assert!((est.estimate - target).abs() < 3.0 * est.stderr, "{est:?}");
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let grid = Grid::new(1.0, 65).unwrap();
        let a = simulate(
            &se_pair(),
            &[0.5, 1.0],
            grid,
            &McRun::new(3000, 17).with_threads(Some(1)),
        )
        .unwrap();
        let b = simulate(
            &se_pair(),
            &[0.5, 1.0],
            grid,
            &McRun::new(3000, 17).with_threads(Some(3)),
        )
        .unwrap();
        assert_eq!(a.levels, b.levels);
    }

    #[test]
    fn no_touch_violations_and_estimate_invariants() {
        let grid = Grid::new(1.0, 129).unwrap();
        let sim = simulate(&se_pair(), &[0.5, 1.0, 2.0], grid, &McRun::new(20_000, 5)).unwrap();
        for l in &sim.levels {
            assert_eq!(l.touch_violations, 0);
            for e in [&l.conjunction, &l.euler_char] {
                assert!(e.ci_low <= e.estimate && e.estimate <= e.ci_high && e.stderr >= 0.0);
            }
            assert!(l.euler_char.estimate >= l.conjunction.estimate);
        }
    }

    #[test]
    fn cross_paired_statistic_matches_brute_force() {
        let ps = se_pair();
        let grid = Grid::new(1.0, 33).unwrap();
        let run = McRun::new(150, 8);
        let u = 0.3;
        let est = estimate_simultaneous_cells(&ps, u, grid, &run).unwrap();
        let sampler = PathSampler::new(&ps, grid).unwrap();
        let samples: Vec<PathSample> = (0..run.reps).map(|r| sampler.sample(run.seed, r)).collect();
        let mut total = 0u64;
        for a in &samples {
            for b in &samples {
                let mixed = PathSample::from_rows(grid, &[a.row(0).to_vec(), b.row(1).to_vec()]).unwrap();
                total += simultaneous_crossing_cells(&mixed, u) as u64;
            }
        }
        let brute = total as f64 / (run.reps * run.reps) as f64;
        assert!((est.cross_paired.estimate - brute).abs() < 1e-15);
        let paired: u64 = samples.iter().map(|s| simultaneous_crossing_cells(s, u) as u64).sum();
        assert_eq!(est.paired.estimate, paired as f64 / run.reps as f64);
    }

    #[test]
    fn gap_normalization() {
        let est = McEstimate {
            quantity: "x".into(),
            estimate: 0.01,
            stderr: 0.001,
            ci_low: 0.0,
            ci_high: 0.02,
            level: 0.95,
            reps: 100,
            grid_points: 2,
            seed: 0,
        };
        let (g, se) = normalized_gap(0.02, &est, 1, 1.0);
        let phi1 = phi_raw(1.0);
        assert!((g - 0.01 / phi1).abs() < 1e-15);
        assert!((se - 0.001 / phi1).abs() < 1e-15);
    }
}
