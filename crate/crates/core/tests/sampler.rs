use gauss_conjunction::kernels::kernel_eval;
use gauss_conjunction::sampler::PathSampler;
use gauss_conjunction::{Grid, Kernel, ProcessSet};

const REPS: u64 = 1_000_000;

/// Running sums of products over grid pairs.
fn second_moments(s: &PathSampler, rows: usize, points: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; (rows * points).pow(2)]; 1];
    let mut out = s.new_sample();
    let mut z = Vec::new();
    let dim = rows * points;
    for rep in 0..REPS {
        s.sample_into(42, rep, &mut out, &mut z);
        let v: Vec<f64> = out.rows().flat_map(|r| r.iter().copied()).collect();
        for a in 0..dim {
            for b in a..dim {
                sums[0][a * dim + b] += v[a] * v[b];
            }
        }
    }
    let n = REPS as f64;
    (0..dim)
        .map(|a| (0..dim).map(|b| sums[0][a.min(b) * dim + a.max(b)] / n).collect())
        .collect()
}

#[test]
fn empirical_covariance_matches_kernel() {
    let grid = Grid::new(1.0, 5).unwrap();
    let ps = ProcessSet::independent(1.0, vec![Kernel::se(1.0)]).unwrap();
    let s = PathSampler::new(&ps, grid).unwrap();
    let cov = second_moments(&s, 1, 5);
    let pts = grid.points();
    for a in 0..5 {
        for b in 0..5 {
            let r = kernel_eval(&Kernel::se(1.0), 1.0, pts[a], pts[b]).unwrap();
            // Var(XY) = 1 + r² for a standard bivariate normal pair.
            let se = ((1.0 + r * r) / REPS as f64).sqrt();
            assert!((cov[a][b] - r).abs() < 5.0 * se, "({a},{b}): {} vs {r}", cov[a][b]);
        }
    }
}

#[test]
fn correlated_pair_marginals_and_cross_covariance() {
    let rho = 0.6;
    let grid = Grid::new(1.0, 3).unwrap();
    let ps = ProcessSet::correlated_pair(1.0, Kernel::se(1.0), rho).unwrap();
    let s = PathSampler::new(&ps, grid).unwrap();
    let cov = second_moments(&s, 2, 3);
    let pts = grid.points();
    for a in 0..6 {
        for b in 0..6 {
            let (i, j) = (a / 3, b / 3);
            let r = kernel_eval(&Kernel::se(1.0), 1.0, pts[a % 3], pts[b % 3]).unwrap();
            let target = if i == j { r } else { rho * r };
            let se = ((1.0 + target * target) / REPS as f64).sqrt();
            assert!(
                (cov[a][b] - target).abs() < 5.0 * se,
                "({a},{b}): {} vs {target}",
                cov[a][b]
            );
        }
    }
}

#[test]
fn replications_do_not_depend_on_order() {
    let ps = ProcessSet::independent(2.0, vec![Kernel::matern52(0.5), Kernel::warped_se(0.7, 0.2)]).unwrap();
    let s = PathSampler::new(&ps, Grid::new(2.0, 65).unwrap()).unwrap();
    let forward: Vec<_> = (0..50).map(|r| s.sample(9, r)).collect();
    let mut backward: Vec<_> = (0..50).rev().map(|r| s.sample(9, r)).collect();
    backward.reverse();
    assert_eq!(forward, backward);
}
