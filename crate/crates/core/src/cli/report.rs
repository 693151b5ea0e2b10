//! Report rows and their CSV / JSON / table renderings.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, PlotConfig};
use crate::bounds::BoundReport;
use crate::error::{Error, Result};
use crate::montecarlo::McEstimate;

/// Fixed CSV columns, in order.
pub const COLUMNS: [&str; 18] = [
    "command",
    "n",
    "u",
    "T",
    "rho",
    "grid_points",
    "reps",
    "seed",
    "point_term",
    "crossing_term",
    "bound_total",
    "mc_estimate",
    "mc_stderr",
    "ci_low",
    "ci_high",
    "gap_normalized",
    "quantity",
    "value",
];

/// One report line. Absent values are written as empty CSV fields.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub command: String,
    pub n: Option<usize>,
    pub u: Option<f64>,
    #[serde(rename = "T")]
    pub horizon: Option<f64>,
    pub rho: Option<f64>,
    pub grid_points: Option<usize>,
    pub reps: Option<u64>,
    pub seed: Option<u64>,
    pub point_term: Option<f64>,
    pub crossing_term: Option<f64>,
    pub bound_total: Option<f64>,
    pub mc_estimate: Option<f64>,
    pub mc_stderr: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub gap_normalized: Option<f64>,
    pub quantity: String,
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plot_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plot_y: Option<f64>,
}

impl Row {
    pub fn new(command: &str, quantity: impl Into<String>) -> Self {
        Self {
            command: command.to_string(),
            quantity: quantity.into(),
            ..Default::default()
        }
    }

    pub fn with_bound(mut self, b: &BoundReport<f64>) -> Self {
        self.n = Some(b.n);
        self.u = Some(b.u);
        self.horizon = Some(b.horizon);
        self.point_term = Some(b.point_term);
        self.crossing_term = Some(b.crossing_term);
        self.bound_total = Some(b.total);
        self
    }

    pub fn with_mc(mut self, e: &McEstimate) -> Self {
        self.grid_points = Some(e.grid_points);
        self.reps = Some(e.reps);
        self.seed = Some(e.seed);
        self.mc_estimate = Some(e.estimate);
        self.mc_stderr = Some(e.stderr);
        self.ci_low = Some(e.ci_low);
        self.ci_high = Some(e.ci_high);
        self
    }

    fn field(&self, name: &str) -> Option<f64> {
        match name {
            "n" => self.n.map(|v| v as f64),
            "u" => self.u,
            "T" => self.horizon,
            "rho" => self.rho,
            "grid_points" => self.grid_points.map(|v| v as f64),
            "reps" => self.reps.map(|v| v as f64),
            "seed" => self.seed.map(|v| v as f64),
            "point_term" => self.point_term,
            "crossing_term" => self.crossing_term,
            "bound_total" => self.bound_total,
            "mc_estimate" => self.mc_estimate,
            "mc_stderr" => self.mc_stderr,
            "ci_low" => self.ci_low,
            "ci_high" => self.ci_high,
            "gap_normalized" => self.gap_normalized,
            "value" => self.value,
            _ => None,
        }
    }

    fn cells(&self) -> Vec<String> {
        fn f(x: Option<f64>) -> String {
            x.map(|v| format!("{v:.16e}")).unwrap_or_default()
        }
        fn i<T: ToString>(x: Option<T>) -> String {
            x.map(|v| v.to_string()).unwrap_or_default()
        }
        vec![
            self.command.clone(),
            i(self.n),
            f(self.u),
            f(self.horizon),
            f(self.rho),
            i(self.grid_points),
            i(self.reps),
            i(self.seed),
            f(self.point_term),
            f(self.crossing_term),
            f(self.bound_total),
            f(self.mc_estimate),
            f(self.mc_stderr),
            f(self.ci_low),
            f(self.ci_high),
            f(self.gap_normalized),
            self.quantity.clone(),
            f(self.value),
        ]
    }
}

/// Plot names accepted in a `plot` block.
pub fn is_plot_column(name: &str) -> bool {
    COLUMNS.contains(&name) && !matches!(name, "command" | "quantity")
}

pub(crate) fn apply_plot(rows: &mut [Row], plot: &PlotConfig) -> Result<()> {
    for name in [&plot.x, &plot.y] {
        if !is_plot_column(name) {
            return Err(Error::Config(format!("unknown plot column `{name}`")));
        }
    }
    for r in rows {
        r.plot_x = r.field(&plot.x);
        r.plot_y = r.field(&plot.y);
    }
    Ok(())
}

/// A finished experiment: resolved config, rows, and structured details.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub config: ExperimentConfig,
    pub rows: Vec<Row>,
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    pub details: serde_json::Value,
}

impl Report {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# config: {}", serde_json::to_string(&self.config)?)?;
        let plot = self.config.plot.is_some();
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<&str> = COLUMNS.to_vec();
        if plot {
            header.extend(["plot_x", "plot_y"]);
        }
        out.write_record(&header)?;
        for r in &self.rows {
            let mut cells = r.cells();
            if plot {
                for v in [r.plot_x, r.plot_y] {
                    cells.push(v.map(|v| format!("{v:.16e}")).unwrap_or_default());
                }
            }
            out.write_record(&cells)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut w, self)?;
        writeln!(w)?;
        Ok(())
    }

    /// Fixed-width table for the terminal.
    pub fn write_table<W: Write>(&self, mut w: W) -> Result<()> {
        let cols = [
            "quantity",
            "n",
            "u",
            "rho",
            "point_term",
            "crossing_term",
            "bound_total",
            "mc_estimate",
            "ci_low",
            "ci_high",
            "gap",
            "value",
        ];
        let g = |x: Option<f64>| x.map(|v| format!("{v:.6e}")).unwrap_or_else(|| "-".into());
        let body: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.quantity.clone(),
                    r.n.map(|v| v.to_string()).unwrap_or_else(|| "-".into()),
                    r.u.map(|v| format!("{v}")).unwrap_or_else(|| "-".into()),
                    r.rho.map(|v| format!("{v}")).unwrap_or_else(|| "-".into()),
                    g(r.point_term),
                    g(r.crossing_term),
                    g(r.bound_total),
                    g(r.mc_estimate),
                    g(r.ci_low),
                    g(r.ci_high),
                    g(r.gap_normalized),
                    g(r.value),
                ]
            })
            .collect();
        let widths: Vec<usize> = (0..cols.len())
            .map(|j| {
                body.iter()
                    .map(|r| r[j].len())
                    .chain([cols[j].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |cells: Vec<String>| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect::<Vec<_>>()
                .join("  ")
        };
        writeln!(w, "{}", line(cols.iter().map(|s| s.to_string()).collect()))?;
        for r in body {
            writeln!(w, "{}", line(r))?;
        }
        Ok(())
    }
}

/// Parses a CSV report written by [`Report::write_csv`].
pub fn read_csv<R: std::io::Read>(r: R) -> Result<Vec<Row>> {
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    let mut rows = Vec::new();
    for rec in rd.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}
