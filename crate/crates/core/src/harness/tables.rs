//! CSV and markdown renderings of results and p-value grids.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::results::ResultsTable;
use super::stats::{stars, PValueGrid};
use crate::error::{Error, Result};

fn opt6(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"))
}

/// `strategy,<k>...,mean` with six decimals and `NA` for missing cells.
pub fn rmse_csv(results: &ResultsTable) -> String {
    let mut out = String::from("strategy");
    for k in &results.display_sizes {
        write!(out, ",{k}").unwrap();
    }
    out.push_str(",mean\n");
    for (r, s) in results.strategies.iter().enumerate() {
        out.push_str(s.name());
        for c in 0..results.display_sizes.len() {
            write!(out, ",{}", opt6(results.cell(r, c).map(|c| c.mean))).unwrap();
        }
        writeln!(out, ",{}", opt6(results.row_mean(r))).unwrap();
    }
    out
}

/// One parsed row of `rmse.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub strategy: String,
    pub cells: Vec<Option<f64>>,
    pub mean: Option<f64>,
}

/// Parses [`rmse_csv`] output back into display sizes and rows.
pub fn parse_rmse_csv(text: &str) -> Result<(Vec<usize>, Vec<CsvRow>)> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Validation(format!("rmse csv header: {e}")))?
        .clone();
    let n = headers.len();
    if n < 3 || &headers[0] != "strategy" || &headers[n - 1] != "mean" {
        return Err(Error::Validation("rmse csv header must be strategy,<sizes>,mean".into()));
    }
    let sizes = headers
        .iter()
        .skip(1)
        .take(n - 2)
        .map(|h| h.parse::<usize>().map_err(|_| Error::Validation(format!("bad display size `{h}`"))))
        .collect::<Result<Vec<_>>>()?;
    let value = |s: &str| -> Result<Option<f64>> {
        if s == "NA" {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| Error::Validation(format!("bad value `{s}`")))
        }
    };
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Validation(format!("rmse csv: {e}")))?;
        rows.push(CsvRow {
            strategy: rec[0].to_string(),
            cells: (1..n - 1).map(|i| value(&rec[i])).collect::<Result<_>>()?,
            mean: value(&rec[n - 1])?,
        });
    }
    Ok((sizes, rows))
}

/// Results-table layout: one row per strategy, one column per display size
/// plus the mean, with each column's minimum in bold.
pub fn rmse_markdown(results: &ResultsTable) -> String {
    let rows = results.strategies.len();
    let cols = results.display_sizes.len();
    let cell_text: Vec<Vec<Option<String>>> = (0..rows)
        .map(|r| {
            let mut v: Vec<Option<String>> =
                (0..cols).map(|c| results.cell(r, c).map(|c| format!("{:.3}", c.mean))).collect();
            v.push(results.row_mean(r).map(|m| format!("{m:.3}")));
            v
        })
        .collect();
    let mut out = String::from("| Strategy |");
    for k in &results.display_sizes {
        write!(out, " {k} |").unwrap();
    }
    out.push_str(" Mean |\n|:--|");
    out.push_str(&"--:|".repeat(cols + 1));
    out.push('\n');
    // Compare at the printed precision so equal-looking minima are all bold.
    let col_min: Vec<Option<f64>> = (0..=cols)
        .map(|c| {
            cell_text
                .iter()
                .filter_map(|row| row[c].as_ref().map(|t| t.parse::<f64>().unwrap()))
                .reduce(f64::min)
        })
        .collect();
    for (r, s) in results.strategies.iter().enumerate() {
        write!(out, "| {} |", s.label()).unwrap();
        for (c, text) in cell_text[r].iter().enumerate() {
            match text {
                Some(t) if Some(t.parse::<f64>().unwrap()) == col_min[c] => write!(out, " **{t}** |"),
                Some(t) => write!(out, " {t} |"),
                None => write!(out, " NA |"),
            }
            .unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn pvalues_csv(grid: &PValueGrid) -> String {
    let mut out = String::from("strategy");
    for s in &grid.strategies {
        write!(out, ",{}", s.name()).unwrap();
    }
    out.push('\n');
    for (i, s) in grid.strategies.iter().enumerate() {
        out.push_str(s.name());
        for p in &grid.p[i] {
            write!(out, ",{}", opt6(Some(*p).filter(|p| p.is_finite()))).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Numbered pairwise layout with significance stars; the diagonal is `--`.
pub fn pvalues_markdown(grid: &PValueGrid) -> String {
    let n = grid.strategies.len();
    let mut out = String::from("| Strategies |");
    for j in 1..=n {
        write!(out, " {j}. |").unwrap();
    }
    out.push_str("\n|:--|");
    out.push_str(&":-:|".repeat(n));
    out.push('\n');
    let mut any_degenerate = false;
    for (i, s) in grid.strategies.iter().enumerate() {
        write!(out, "| {}. {} |", i + 1, s.label()).unwrap();
        for j in 0..n {
            let p = grid.p[i][j];
            if i == j {
                out.push_str(" -- |");
            } else if !p.is_finite() {
                out.push_str(" NA |");
            } else {
                let marks = stars(p).replace('*', "\\*");
                let dagger = if grid.degenerate[i][j] {
                    any_degenerate = true;
                    "†"
                } else {
                    ""
                };
                write!(out, " {p:.3}{marks}{dagger} |").unwrap();
            }
        }
        out.push('\n');
    }
    out.push_str("\n*Note*: \\* p<0.10, \\*\\* p<0.05, \\*\\*\\* p<0.01.");
    if any_degenerate {
        out.push_str(" † zero pooled variance, p reported as 0.5.");
    }
    out.push('\n');
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    /// Canonical config text; `sweep --config manifest.json` re-runs it.
    pub config: String,
    pub seeds: Vec<u64>,
    pub git: String,
    pub started_unix: u64,
    pub wall_clock_seconds: f64,
}

/// `git describe --always --dirty`, or `unknown` outside a repository.
pub fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

fn write(dir: &Path, name: &str, body: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, body).map_err(|e| Error::io(&path, e))
}

/// Writes `rmse.csv`, `rmse.md`, `pvalues.csv`, `pvalues.md` and, when given,
/// `manifest.json` into `dir`.
pub fn emit_tables(results: &ResultsTable, grid: &PValueGrid, dir: &Path, manifest: Option<&Manifest>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(dir, "rmse.csv", &rmse_csv(results))?;
    write(dir, "rmse.md", &rmse_markdown(results))?;
    write(dir, "pvalues.csv", &pvalues_csv(grid))?;
    write(dir, "pvalues.md", &pvalues_markdown(grid))?;
    if let Some(m) = manifest {
        let json = serde_json::to_string_pretty(m).expect("manifest serializes");
        write(dir, "manifest.json", &(json + "\n"))?;
    }
    Ok(())
}
