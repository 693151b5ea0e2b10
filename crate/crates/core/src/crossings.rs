//! Grid surrogates for level crossings, conjunction up-crossings and the
//! Euler characteristic of the excursion set `{t : min_i X_i(t) >= u}`.
//!
//! Conventions: a grid value equal to `u` counts as above the level. Cell `k`
//! holds an up-crossing when `x[k] < u <= x[k+1]` and a down-crossing when
//! `x[k] >= u > x[k+1]`. The direction of a crossing comes from the discrete
//! increment only.

use serde::Serialize;

use crate::sampler::PathSample;
use crate::Real;

/// Per-process crossing tallies for one path sample and one level.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CrossingCounts {
    pub up: Vec<u32>,
    pub down: Vec<u32>,
    /// Up-crossings of process `i` while every other process is above `u`.
    pub conj_up: Vec<u32>,
    pub simultaneous_cells: u32,
}

impl CrossingCounts {
    /// Grid analogue of the boundary-touching count `U*_u`.
    pub fn total_conj_up(&self) -> u32 {
        self.conj_up.iter().sum()
    }
}

#[inline]
fn up_at<T: Real>(x: &[T], k: usize, u: T) -> bool {
    x[k] < u && x[k + 1] >= u
}

#[inline]
fn down_at<T: Real>(x: &[T], k: usize, u: T) -> bool {
    x[k] >= u && x[k + 1] < u
}

/// `(up, down)` crossing counts of `u` along a sequence.
pub fn count_crossings<T: Real>(values: &[T], u: T) -> (u32, u32) {
    let mut up = 0;
    let mut down = 0;
    for w in values.windows(2) {
        let (a, b) = (w[0] >= u, w[1] >= u);
        up += (!a && b) as u32;
        down += (a && !b) as u32;
    }
    (up, down)
}

/// Up-crossings of process `i` at which every other process, linearly
/// interpolated to the crossing location, is at or above `u`.
pub fn count_conjunction_upcrossings<T: Real>(paths: &PathSample<T>, u: T, i: usize) -> u32 {
    let xi = paths.row(i);
    let n = paths.n_processes();
    let mut count = 0;
    for k in 0..xi.len().saturating_sub(1) {
        if !up_at(xi, k, u) {
            continue;
        }
        let theta = (u - xi[k]) / (xi[k + 1] - xi[k]);
        let others_above = (0..n).filter(|&j| j != i).all(|j| {
            let a = paths.value(j, k);
            let b = paths.value(j, k + 1);
            a + theta * (b - a) >= u
        });
        count += others_above as u32;
    }
    count
}

#[inline]
fn min_at<T: Real>(paths: &PathSample<T>, k: usize) -> T {
    (0..paths.n_processes())
        .map(|i| paths.value(i, k))
        .fold(T::infinity(), T::min)
}

/// Whether `max_k min_i X_i(t_k) >= u`.
pub fn conjunction_exceeds<T: Real>(paths: &PathSample<T>, u: T) -> bool {
    (0..paths.n_points()).any(|k| min_at(paths, k) >= u)
}

/// Number of maximal runs of grid points where `min_i X_i >= u`; in one
/// dimension this is the Euler characteristic of the excursion set.
pub fn euler_characteristic_1d<T: Real>(paths: &PathSample<T>, u: T) -> u32 {
    let mut runs = 0;
    let mut inside = false;
    for k in 0..paths.n_points() {
        let now = min_at(paths, k) >= u;
        runs += (now && !inside) as u32;
        inside = now;
    }
    runs
}

/// Grid cells in which at least two distinct processes cross `u`.
pub fn simultaneous_crossing_cells<T: Real>(paths: &PathSample<T>, u: T) -> u32 {
    let n = paths.n_processes();
    if n < 2 {
        return 0;
    }
    let mut cells = 0;
    for k in 0..paths.n_points().saturating_sub(1) {
        let crossing = (0..n)
            .filter(|&i| {
                let x = paths.row(i);
                up_at(x, k, u) || down_at(x, k, u)
            })
            .take(2)
            .count();
        cells += (crossing >= 2) as u32;
    }
    cells
}

/// All tallies for one path sample and level.
pub fn crossing_counts<T: Real>(paths: &PathSample<T>, u: T) -> CrossingCounts {
    let n = paths.n_processes();
    let mut up = Vec::with_capacity(n);
    let mut down = Vec::with_capacity(n);
    for row in paths.rows() {
        let (a, b) = count_crossings(row, u);
        up.push(a);
        down.push(b);
    }
    CrossingCounts {
        up,
        down,
        conj_up: (0..n).map(|i| count_conjunction_upcrossings(paths, u, i)).collect(),
        simultaneous_cells: simultaneous_crossing_cells(paths, u),
    }
}

/// Path-level facts gathered alongside [`crossing_counts_into`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathSummary {
    pub exceeds: bool,
    pub starts_inside: bool,
    pub euler_char: u32,
}

/// `(min, max)` of each process row.
pub fn row_ranges<T: Real>(paths: &PathSample<T>, out: &mut Vec<(T, T)>) {
    out.clear();
    out.extend(paths.rows().map(|row| {
        let mut lo = row[0];
        let mut hi = row[0];
        for &x in &row[1..] {
            if x < lo {
                lo = x;
            }
            if x > hi {
                hi = x;
            }
        }
        (lo, hi)
    }));
}

/// Equivalent of [`crossing_counts`], [`conjunction_exceeds`] and
/// [`euler_characteristic_1d`] in one pass, reusing the buffers in `out`.
pub fn crossing_counts_into<T: Real>(paths: &PathSample<T>, u: T, out: &mut CrossingCounts) -> PathSummary {
    let mut ranges = Vec::with_capacity(paths.n_processes());
    row_ranges(paths, &mut ranges);
    crossing_counts_ranged(paths, u, &ranges, out)
}

/// [`crossing_counts_into`] with the row ranges from [`row_ranges`] supplied,
/// so they can be shared across levels. Only rows that straddle `u` are
/// scanned.
pub fn crossing_counts_ranged<T: Real>(
    paths: &PathSample<T>,
    u: T,
    ranges: &[(T, T)],
    out: &mut CrossingCounts,
) -> PathSummary {
    let n = paths.n_processes();
    for v in [&mut out.up, &mut out.down, &mut out.conj_up] {
        v.clear();
        v.resize(n, 0);
    }
    out.simultaneous_cells = 0;
    let straddles = |i: usize| ranges[i].0 < u && ranges[i].1 >= u;
    // Some row never reaches u: the conjunction set is empty.
    let blocked = ranges.iter().any(|&(_, hi)| hi < u);
    let starts_inside = !blocked && (0..n).all(|i| paths.value(i, 0) >= u);
    let mut euler_char = starts_inside as u32;
    let crossing_at = |j: usize, k: usize| {
        let x = paths.row(j);
        (x[k] >= u) != (x[k + 1] >= u)
    };

    for i in (0..n).filter(|&i| straddles(i)) {
        let x = paths.row(i);
        let mut above = x[0] >= u;
        for k in 0..x.len() - 1 {
            let next = x[k + 1] >= u;
            if above == next {
                continue;
            }
            above = next;
            // Count a shared cell once, at its lowest crossing process.
            let first_here = !(0..i).any(|j| straddles(j) && crossing_at(j, k));
            if first_here && (i + 1..n).any(|j| straddles(j) && crossing_at(j, k)) {
                out.simultaneous_cells += 1;
            }
            if !next {
                out.down[i] += 1;
                continue;
            }
            out.up[i] += 1;
            if blocked {
                continue;
            }
            let theta = (u - x[k]) / (x[k + 1] - x[k]);
            let others_above = (0..n).filter(|&j| j != i).all(|j| {
                let a = paths.value(j, k);
                let b = paths.value(j, k + 1);
                a + theta * (b - a) >= u
            });
            out.conj_up[i] += others_above as u32;
            // A new run of the conjunction set starts at k + 1.
            let first_up_here = !(0..i).any(|j| {
                let y = paths.row(j);
                y[k] < u && y[k + 1] >= u
            });
            if first_up_here && (0..n).all(|j| paths.value(j, k + 1) >= u) {
                euler_char += 1;
            }
        }
    }
    PathSummary {
        exceeds: euler_char > 0,
        starts_inside,
        euler_char,
    }
}

/// Cell indices in which `values` crosses `u` in either direction.
pub fn crossing_cells<T: Real>(values: &[T], u: T) -> impl Iterator<Item = usize> + '_ {
    (0..values.len().saturating_sub(1)).filter(move |&k| up_at(values, k, u) || down_at(values, k, u))
}
