//! Per-cell evaluation records and the assembled results grid.

use serde::{Deserialize, Serialize};

use super::config::StrategySpec;
use crate::error::{Error, Result};

/// Outcome of one (strategy, display size, seed) job, as stored in `cells.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub strategy: String,
    pub k: usize,
    pub seed: u64,
    /// Per-user final RMSEs; absent when the cell could not be evaluated.
    pub rmse: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// The on-disk form of a sweep's raw results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellsFile {
    pub strategies: Vec<String>,
    pub display_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub cells: Vec<CellRecord>,
}

impl CellsFile {
    pub fn read(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    /// Mean over seeds of each seed's mean user RMSE.
    pub mean: f64,
    /// Every user RMSE pooled over seeds.
    pub samples: Vec<f64>,
}

/// Mean RMSE per (strategy, display size), with missing cells kept explicit.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultsTable {
    pub strategies: Vec<StrategySpec>,
    pub display_sizes: Vec<usize>,
    /// `cells[row][col]`, `None` when missing.
    pub cells: Vec<Vec<Option<Cell>>>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl ResultsTable {
    /// Aggregates records; a cell is missing if any of its seeds failed.
    pub fn from_records(strategies: &[StrategySpec], display_sizes: &[usize], records: &[CellRecord]) -> Self {
        let cells = strategies
            .iter()
            .map(|s| {
                display_sizes
                    .iter()
                    .map(|&k| {
                        let runs: Vec<&CellRecord> =
                            records.iter().filter(|r| r.strategy == s.name() && r.k == k).collect();
                        if runs.is_empty() {
                            return None;
                        }
                        let mut seed_means = Vec::with_capacity(runs.len());
                        let mut samples = Vec::new();
                        for r in runs {
                            let v = r.rmse.as_ref().filter(|v| !v.is_empty())?;
                            seed_means.push(mean(v));
                            samples.extend_from_slice(v);
                        }
                        Some(Cell {
                            mean: mean(&seed_means),
                            samples,
                        })
                    })
                    .collect()
            })
            .collect();
        Self {
            strategies: strategies.to_vec(),
            display_sizes: display_sizes.to_vec(),
            cells,
        }
    }

    pub fn cell(&self, row: usize, col: usize) -> Option<&Cell> {
        self.cells[row][col].as_ref()
    }

    /// Unweighted mean over display sizes; `None` if any cell is missing.
    pub fn row_mean(&self, row: usize) -> Option<f64> {
        let means: Option<Vec<f64>> = self.cells[row].iter().map(|c| c.as_ref().map(|c| c.mean)).collect();
        means.map(|m| mean(&m))
    }

    /// Present cell means of one row, in display-size order.
    pub fn size_means(&self, row: usize) -> Vec<f64> {
        self.cells[row].iter().flatten().map(|c| c.mean).collect()
    }

    /// Every per-user sample of one row.
    pub fn pooled_samples(&self, row: usize) -> Vec<f64> {
        self.cells[row].iter().flatten().flat_map(|c| c.samples.iter().copied()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strategies::StrategyKind;

    fn rec(s: &str, k: usize, seed: u64, v: Option<Vec<f64>>) -> CellRecord {
        CellRecord {
            strategy: s.into(),
            k,
            seed,
            rmse: v,
            error: None,
        }
    }

    #[test]
    fn aggregates_seeds_and_marks_missing() {
        let specs = [StrategySpec::Heuristic(StrategyKind::Gini), StrategySpec::Random];
        let records = vec![
            rec("gini", 10, 0, Some(vec![0.2, 0.4])),
            rec("gini", 10, 1, Some(vec![0.6])),
            rec("gini", 25, 0, Some(vec![0.5])),
            rec("random", 10, 0, Some(vec![0.9])),
            rec("random", 25, 0, None),
        ];
        let t = ResultsTable::from_records(&specs, &[10, 25], &records);
        let c = t.cell(0, 0).unwrap();
        assert!((c.mean - 0.45).abs() < 1e-15);
        assert_eq!(c.samples, vec![0.2, 0.4, 0.6]);
        assert!((t.row_mean(0).unwrap() - 0.475).abs() < 1e-15);
        assert!(t.cell(1, 1).is_none());
        assert_eq!(t.row_mean(1), None);
        assert_eq!(t.size_means(1), vec![0.9]);
    }
}
