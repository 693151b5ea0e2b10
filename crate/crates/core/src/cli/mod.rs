//! Batch front-end: `gauss-conjunction <command> --config exp.json
//! [--output out.csv] [--seed N] [--threads K]`.
//!
//! Exit codes: 0 success, 1 invalid input or config, 2 numerical failure.

pub mod config;
pub mod report;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::Parser;
use serde_json::json;

use crate::bounds::{corollary1_bound, correlated_bound_for, ec_heuristic, theorem1_bound_for, BoundReport};
use crate::error::{Error, Result};
use crate::kernels::{validate_kernel, Dependence, ProcessSet};
use crate::montecarlo::{extrapolate_pickands, normalized_gap, simulate, McEstimate, McRun, Simulation};
use crate::sampler::Grid;
use crate::scalar_stats::{normal_quantile, phi_bar_raw, QuadratureSpec};

pub use config::{Command, ExperimentConfig, Format};
pub use report::{is_plot_column, read_csv, Report, Row, COLUMNS};

/// Environment variable consulted when `--threads` is absent.
pub const THREADS_ENV: &str = "GC_DEFAULT_THREADS";

#[derive(Debug, Clone, Parser)]
#[command(
    name = "gauss-conjunction",
    version,
    about = "Conjunction-probability bounds and Monte Carlo checks"
)]
pub struct Args {
    #[arg(value_enum)]
    pub command: Command,
    /// JSON experiment config.
    #[arg(long)]
    pub config: PathBuf,
    /// Report path; `.json` selects JSON output unless the config says otherwise.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for Monte Carlo runs.
    #[arg(long)]
    pub threads: Option<usize>,
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_numerical() {
        2
    } else {
        1
    }
}

fn error_kind(err: &Error) -> &'static str {
    match err {
        Error::NonFinite { .. } => "non_finite",
        Error::InvalidInput(_) => "invalid_input",
        Error::Quadrature { .. } => "quadrature",
        Error::Cholesky { .. } => "cholesky",
        Error::KernelHypothesis { .. } => "kernel_hypothesis",
        Error::Config(_) => "config",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
        Error::Csv(_) => "csv",
    }
}

/// Structured diagnostic written to stderr on failure.
pub fn error_json(err: &Error) -> serde_json::Value {
    let mut e = json!({
        "kind": error_kind(err),
        "message": err.to_string(),
        "exit_code": exit_code(err),
    });
    match err {
        Error::Quadrature { value, err_estimate } => {
            e["value"] = json!(value);
            e["err_estimate"] = json!(err_estimate);
        }
        Error::Cholesky { max_jitter } => e["max_jitter"] = json!(max_jitter),
        Error::KernelHypothesis { pairs } => e["pairs"] = json!(pairs),
        _ => {}
    }
    json!({ "error": e })
}

/// `--threads`, else `GC_DEFAULT_THREADS`, else the global pool.
pub fn resolve_threads(flag: Option<usize>, env: Option<&str>) -> Result<Option<usize>> {
    let k = match (flag, env) {
        (Some(k), _) => Some(k),
        (None, Some(s)) if !s.trim().is_empty() => Some(
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{s}`")))?,
        ),
        _ => None,
    };
    if k == Some(0) {
        return Err(Error::Config("thread count must be positive".into()));
    }
    Ok(k)
}

/// Loads the config named by `args`, runs it, and writes the report file if
/// one was requested.
pub fn run(args: &Args) -> Result<Report> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", args.config.display())))?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let env = std::env::var(THREADS_ENV).ok();
    let threads = resolve_threads(args.threads, env.as_deref())?;
    let path = args
        .output
        .clone()
        .or_else(|| cfg.output.as_ref().and_then(|o| o.path.as_ref().map(PathBuf::from)));
    let format = cfg
        .output
        .as_ref()
        .and_then(|o| o.format)
        .unwrap_or_else(|| match &path {
            Some(p) if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) => Format::Json,
            _ => Format::Csv,
        });
    let report = execute(args.command, cfg, threads)?;
    if let Some(p) = path {
        write_report(&report, &p, format)?;
    }
    Ok(report)
}

pub fn write_report(report: &Report, path: &Path, format: Format) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    match format {
        Format::Csv => report.write_csv(file),
        Format::Json => report.write_json(file),
    }
}

/// Parses `argv`, runs, prints a table or a JSON diagnostic, and returns the
/// process exit code.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&args) {
        Ok(report) => {
            let _ = report.write_table(std::io::stdout().lock());
            0
        }
        Err(err) => {
            eprintln!("{}", error_json(&err));
            exit_code(&err)
        }
    }
}

/// Runs `command` on a parsed config. The report embeds the resolved config
/// (command and seed filled in, output path dropped).
pub fn execute(command: Command, mut cfg: ExperimentConfig, threads: Option<usize>) -> Result<Report> {
    if let Some(c) = cfg.command {
        if c != command {
            return Err(Error::Config(format!(
                "config is for `{}` but `{}` was requested",
                c.as_str(),
                command.as_str()
            )));
        }
    }
    cfg.command = Some(command);
    if let Some(o) = cfg.output.as_mut() {
        o.path = None;
    }
    cfg.validate()?;
    let ctx = Ctx {
        cfg: &cfg,
        threads,
        name: command.as_str(),
    };
    let (mut rows, details) = match command {
        Command::Bound => ctx.bound()?,
        Command::Ec => ctx.ec()?,
        Command::Correlated => ctx.correlated()?,
        Command::Simulate => ctx.simulate()?,
        Command::Moments => ctx.moments()?,
        Command::Euler => ctx.euler()?,
        Command::Pickands => ctx.pickands()?,
        Command::ValidateKernel => ctx.validate_kernel()?,
        Command::Sweep => ctx.sweep()?,
    };
    if let Some(plot) = &cfg.plot {
        report::apply_plot(&mut rows, plot)?;
    }
    Ok(Report {
        config: cfg,
        rows,
        details,
    })
}

type Output = (Vec<Row>, serde_json::Value);

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    threads: Option<usize>,
    name: &'static str,
}

impl Ctx<'_> {
    fn run(&self) -> McRun {
        McRun {
            reps: self.cfg.reps,
            seed: self.cfg.seed,
            threads: self.threads,
            level: self.cfg.level,
        }
    }

    fn grid(&self) -> Result<Grid<f64>> {
        Grid::new(self.cfg.horizon, self.cfg.grid_points)
    }

    fn spec(&self) -> Result<QuadratureSpec<f64>> {
        self.cfg.quadrature_spec()
    }

    fn require_reps(&self) -> Result<()> {
        if self.cfg.reps == 0 {
            return Err(Error::Config(format!("`{}` needs `reps` > 0", self.name)));
        }
        Ok(())
    }

    fn bound_for(&self, ps: &ProcessSet<f64>, u: f64) -> Result<BoundReport<f64>> {
        match ps.dependence {
            Dependence::Independent { .. } => theorem1_bound_for(ps, u, &self.spec()?),
            Dependence::CorrelatedPair { .. } => correlated_bound_for(ps, u, &self.spec()?),
        }
    }

    /// Process sets to run: the configured one, or one correlated pair per
    /// entry of the `rho` list.
    fn process_sets(&self) -> Result<Vec<ProcessSet<f64>>> {
        let ps = self.cfg.process_set()?;
        match (&ps.dependence, &self.cfg.rho) {
            (Dependence::CorrelatedPair { base, .. }, Some(rho)) => rho
                .values()
                .into_iter()
                .map(|r| ProcessSet::correlated_pair(ps.horizon, *base, r))
                .collect(),
            (Dependence::Independent { .. }, Some(_)) => {
                Err(Error::Config("`rho` needs correlated_pair processes".into()))
            }
            _ => Ok(vec![ps]),
        }
    }

    fn bound_row(&self, quantity: &str, b: &BoundReport<f64>, rho: Option<f64>) -> Row {
        let mut r = Row::new(self.name, quantity).with_bound(b);
        r.rho = rho;
        r
    }

    fn mc_row(&self, quantity: &str, ps: &ProcessSet<f64>, u: f64, e: &McEstimate) -> Row {
        let mut r = Row::new(self.name, quantity).with_mc(e);
        r.n = Some(ps.n());
        r.u = Some(u);
        r.horizon = Some(ps.horizon);
        r.rho = ps.rho();
        r
    }

    /// Conjunction rows with bound, estimate and normalized gap.
    fn conjunction_rows(&self, ps: &ProcessSet<f64>, sim: &Simulation) -> Result<Vec<Row>> {
        sim.levels
            .iter()
            .map(|l| {
                let mut r = self.mc_row("conjunction_prob", ps, l.u, &l.conjunction);
                if l.u > 0.0 {
                    let b = self.bound_for(ps, l.u)?;
                    r = r.with_bound(&b);
                    r.gap_normalized = Some(normalized_gap(b.total, &l.conjunction, ps.n(), l.u).0);
                }
                Ok(r)
            })
            .collect()
    }

    fn simulate_all(&self, ps: &ProcessSet<f64>) -> Result<Simulation> {
        self.require_reps()?;
        simulate(ps, &self.cfg.levels()?, self.grid()?, &self.run())
    }

    fn bound(&self) -> Result<Output> {
        let levels = self.cfg.levels()?;
        let mut rows = Vec::new();
        if let (Some(c), None) = (&self.cfg.c, &self.cfg.processes) {
            for &u in &levels {
                rows.push(self.bound_row("corollary1", &corollary1_bound(c, self.cfg.horizon, u)?, None));
            }
        } else {
            for ps in self.process_sets()? {
                let q = if ps.rho().is_some() { "correlated" } else { "theorem1" };
                for &u in &levels {
                    rows.push(self.bound_row(q, &self.bound_for(&ps, u)?, ps.rho()));
                }
            }
        }
        Ok((rows, serde_json::Value::Null))
    }

    fn ec(&self) -> Result<Output> {
        let c = self.cfg.stationary_c()?;
        let rows = self
            .cfg
            .levels()?
            .into_iter()
            .map(|u| Ok(self.bound_row("ec_heuristic", &ec_heuristic(&c, self.cfg.horizon, u)?, None)))
            .collect::<Result<_>>()?;
        Ok((rows, serde_json::Value::Null))
    }

    fn correlated(&self) -> Result<Output> {
        let sets = self.process_sets()?;
        if sets.iter().any(|ps| ps.rho().is_none()) {
            return Err(Error::Config("`correlated` needs correlated_pair processes".into()));
        }
        self.bound_and_mc(sets)
    }

    /// Bound rows for every process set and level, with Monte Carlo columns
    /// when `reps > 0`.
    fn bound_and_mc(&self, sets: Vec<ProcessSet<f64>>) -> Result<Output> {
        let levels = self.cfg.levels()?;
        let mut rows = Vec::new();
        let mut details = Vec::new();
        for ps in sets {
            if self.cfg.reps > 0 {
                let sim = simulate(&ps, &levels, self.grid()?, &self.run())?;
                rows.extend(self.conjunction_rows(&ps, &sim)?);
                details.push(sim);
            } else {
                let q = if ps.rho().is_some() { "correlated" } else { "theorem1" };
                for &u in &levels {
                    rows.push(self.bound_row(q, &self.bound_for(&ps, u)?, ps.rho()));
                }
            }
        }
        let details = if details.is_empty() {
            serde_json::Value::Null
        } else {
            serde_json::to_value(details)?
        };
        Ok((rows, details))
    }

    fn simulate(&self) -> Result<Output> {
        let ps = self.cfg.process_set()?;
        let sim = self.simulate_all(&ps)?;
        let mut rows = self.conjunction_rows(&ps, &sim)?;
        for l in &sim.levels {
            let mut r = Row::new(self.name, "touch_violations");
            r.u = Some(l.u);
            r.value = Some(l.touch_violations as f64);
            rows.push(r);
        }
        Ok((rows, serde_json::to_value(&sim)?))
    }

    fn moments(&self) -> Result<Output> {
        let ps = self.cfg.process_set()?;
        let sim = self.simulate_all(&ps)?;
        let n = ps.n();
        let mut rows = Vec::new();
        for l in &sim.levels {
            for p in &l.processes {
                // Rice expectations for independent processes:
                // E[U_u] = φ(u)/√(2π) ∫ s_i and E[U_{i,u}] = Φ̄ⁿ⁻¹(u) E[U_u].
                let rice = match (&ps.dependence, l.u > 0.0) {
                    (Dependence::Independent { kernels }, true) => {
                        let single = ProcessSet::independent(ps.horizon, vec![kernels[p.process]])?;
                        Some(theorem1_bound_for(&single, l.u, &self.spec()?)?.crossing_term)
                    }
                    _ => None,
                };
                let tail = phi_bar_raw(l.u).powi(n as i32 - 1);
                for (e, reference) in [
                    (&p.mean_up, rice),
                    (&p.mean_up_factorial2, None),
                    (&p.mean_down, rice),
                    (&p.mean_conj_up, rice.map(|r| r * tail)),
                ] {
                    let mut r = self.mc_row(&e.quantity, &ps, l.u, e);
                    r.crossing_term = reference;
                    rows.push(r);
                }
            }
        }
        Ok((rows, serde_json::to_value(&sim)?))
    }

    fn euler(&self) -> Result<Output> {
        let ps = self.cfg.process_set()?;
        let sim = self.simulate_all(&ps)?;
        let c = self.cfg.stationary_c().ok();
        let mut rows = Vec::new();
        for l in &sim.levels {
            let mut r = self.mc_row("euler_char", &ps, l.u, &l.euler_char);
            if let (Some(c), true) = (&c, l.u > 0.0) {
                r = r.with_bound(&ec_heuristic(c, ps.horizon, l.u)?);
            }
            rows.push(r);
            rows.push(self.mc_row("euler_minus_conjunction", &ps, l.u, &l.euler_minus_conjunction));
            rows.push(self.mc_row("conjunction_prob", &ps, l.u, &l.conjunction));
        }
        Ok((rows, serde_json::to_value(&sim)?))
    }

    fn pickands(&self) -> Result<Output> {
        let p = self
            .cfg
            .pickands
            .as_ref()
            .ok_or_else(|| Error::Config("missing `pickands` block".into()))?;
        self.require_reps()?;
        let run = self.run();
        let ext = extrapolate_pickands(&p.c, &p.a, &run)?;
        let z = normal_quantile(0.5 + run.level / 2.0)?;
        let row = |quantity: String, estimate: f64, stderr: f64, a: Option<f64>| {
            let mut r = Row::new(self.name, quantity);
            r.n = Some(p.c.len());
            r.reps = Some(run.reps);
            r.seed = Some(run.seed);
            r.mc_estimate = Some(estimate);
            r.mc_stderr = Some(stderr);
            r.ci_low = Some(estimate - z * stderr);
            r.ci_high = Some(estimate + z * stderr);
            r.value = a;
            r
        };
        let mut rows: Vec<Row> = ext
            .estimates
            .iter()
            .map(|e| {
                row(
                    format!("pickands_h[verdict={}]", e.verdict.as_str()),
                    e.h_hat,
                    e.stderr,
                    Some(e.a),
                )
            })
            .collect();
        rows.push(row(
            format!("pickands_extrapolated[verdict={}]", ext.verdict.as_str()),
            ext.h_extrapolated,
            ext.stderr,
            None,
        ));
        for (q, v) in [
            ("pickands_paper_literal", ext.candidates.paper_literal),
            ("pickands_derivative_consistent", ext.candidates.derivative_consistent),
        ] {
            let mut r = Row::new(self.name, q);
            r.n = Some(p.c.len());
            r.bound_total = Some(v);
            rows.push(r);
        }
        Ok((rows, serde_json::to_value(&ext)?))
    }

    fn validate_kernel(&self) -> Result<Output> {
        let ps = self.cfg.process_set()?;
        let kernels: Vec<_> = (0..ps.n()).map(|i| *ps.marginal(i)).collect();
        let mut rows = Vec::new();
        let mut details = Vec::new();
        for (i, k) in kernels.iter().enumerate() {
            let rep = validate_kernel(k, ps.horizon, self.cfg.grid_points)?;
            for (q, v) in [
                ("fitted_c", rep.fitted_c),
                ("deriv_variance_min", Some(rep.min_deriv_variance)),
                ("deriv_variance_max", Some(rep.max_deriv_variance)),
                ("max_offdiag_abs_corr", Some(rep.max_offdiag_abs_corr)),
            ] {
                let mut r = Row::new(self.name, format!("{q}[{i}]"));
                r.horizon = Some(ps.horizon);
                r.grid_points = Some(rep.grid_points);
                r.value = v;
                rows.push(r);
            }
            details.push(rep);
        }
        Ok((rows, serde_json::to_value(details)?))
    }

    fn sweep(&self) -> Result<Output> {
        let n_u = self.cfg.levels()?.len();
        let n_rho = self.cfg.rho.as_ref().map_or(0, |r| r.values().len());
        if n_u < 2 && n_rho < 2 {
            return Err(Error::Config(
                "sweep needs a `u` or `rho` list with at least two entries".into(),
            ));
        }
        if let (Some(c), None) = (&self.cfg.c, &self.cfg.processes) {
            if self.cfg.reps > 0 {
                return Err(Error::Config("Monte Carlo sweeps need `processes`".into()));
            }
            let rows = self
                .cfg
                .levels()?
                .into_iter()
                .map(|u| Ok(self.bound_row("corollary1", &corollary1_bound(c, self.cfg.horizon, u)?, None)))
                .collect::<Result<_>>()?;
            return Ok((rows, serde_json::Value::Null));
        }
        self.bound_and_mc(self.process_sets()?)
    }
}
