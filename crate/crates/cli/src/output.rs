//! Result CSV rows.
//!
//! Every experiment command writes the same schema. Per-seed rows carry the
//! seed; aggregate rows carry `agg` in the seed column with the mean in
//! `value` and the sample standard deviation in `std`. A seed whose run
//! failed produces one `failed` row and is left out of the aggregates.

use std::io::Write;
use std::path::Path;

use ndr_core::stats;

use crate::CliError;

pub const RESULT_HEADER: [&str; 11] = [
    "model", "method", "m1", "m2", "dtilde", "seed", "metric", "level", "value", "std", "config_hash",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub model: String,
    pub method: String,
    pub m1: Option<usize>,
    pub m2: Option<usize>,
    pub dtilde: Option<usize>,
    /// `None` marks an aggregate row.
    pub seed: Option<u64>,
    pub metric: String,
    pub level: Option<f64>,
    pub value: Option<f64>,
    pub std: Option<f64>,
    pub config_hash: String,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

impl ResultRow {
    fn record(&self) -> [String; 11] {
        [
            self.model.clone(),
            self.method.clone(),
            opt(self.m1),
            opt(self.m2),
            opt(self.dtilde),
            self.seed.map_or("agg".to_string(), |s| s.to_string()),
            self.metric.clone(),
            opt(self.level),
            opt(self.value),
            opt(self.std),
            self.config_hash.clone(),
        ]
    }

    pub fn is_aggregate(&self) -> bool {
        self.seed.is_none()
    }
}

/// Identity of one experiment cell, shared by its per-seed and aggregate rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub model: String,
    pub method: String,
    pub m1: Option<usize>,
    pub m2: Option<usize>,
    pub dtilde: Option<usize>,
}

impl Cell {
    pub fn row(&self, seed: Option<u64>, metric: &str, level: Option<f64>, value: Option<f64>, std: Option<f64>, hash: &str) -> ResultRow {
        ResultRow {
            model: self.model.clone(),
            method: self.method.clone(),
            m1: self.m1,
            m2: self.m2,
            dtilde: self.dtilde,
            seed,
            metric: metric.to_string(),
            level,
            value,
            std,
            config_hash: hash.to_string(),
        }
    }
}

/// Per-seed outcome of one cell: `(metric, level, value)` triples or an error.
pub type SeedOutcome = Result<Vec<(String, Option<f64>, f64)>, String>;

/// Detail rows for each seed followed by one aggregate row per metric.
pub fn cell_rows(cell: &Cell, seeds: &[u64], outcomes: &[SeedOutcome], hash: &str) -> Vec<ResultRow> {
    let mut rows = Vec::new();
    let mut keys: Vec<(String, Option<f64>)> = Vec::new();
    for (seed, outcome) in seeds.iter().zip(outcomes) {
        match outcome {
            Ok(values) => {
                for (metric, level, value) in values {
                    rows.push(cell.row(Some(*seed), metric, *level, Some(*value), None, hash));
                    if !keys.iter().any(|(m, l)| m == metric && l == level) {
                        keys.push((metric.clone(), *level));
                    }
                }
            }
            Err(msg) => {
                log::warn!("{} {} seed {seed} failed: {msg}", cell.model, cell.method);
                rows.push(cell.row(Some(*seed), "failed", None, None, None, hash));
            }
        }
    }
    for (metric, level) in keys {
        let vals: Vec<f64> = outcomes
            .iter()
            .filter_map(|o| o.as_ref().ok())
            .flat_map(|v| v.iter().filter(|(m, l, _)| *m == metric && *l == level).map(|t| t.2))
            .collect();
        let (mean, sd) = stats::mean_std(&vals);
        rows.push(cell.row(None, &metric, level, Some(mean), Some(sd), hash));
    }
    rows
}

pub fn write_results<W: Write>(out: W, rows: &[ResultRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULT_HEADER)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush().map_err(|e| CliError::Run(e.to_string()))
}

pub fn write_results_file(path: &Path, rows: &[ResultRow]) -> Result<(), CliError> {
    let file = create(path)?;
    write_results(file, rows)
}

pub fn create(path: &Path) -> Result<std::fs::File, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Run(format!("{}: {e}", dir.display())))?;
    }
    std::fs::File::create(path).map_err(|e| CliError::Run(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell() -> Cell {
        Cell {
            model: "m2a".into(),
            method: "ndr".into(),
            m1: Some(200),
            m2: Some(50),
            dtilde: Some(1),
        }
    }

    #[test]
    fn one_cell_two_seeds() {
        let outcomes = vec![
            Ok(vec![("cdf_l2".to_string(), None, 0.02)]),
            Ok(vec![("cdf_l2".to_string(), None, 0.04)]),
        ];
        let rows = cell_rows(&cell(), &[1, 2], &outcomes, "abc");
        assert_eq!(rows.len(), 3);
        let agg = &rows[2];
        assert!(agg.is_aggregate());
        assert!((agg.value.unwrap() - 0.03).abs() < 1e-15);
        assert!((agg.std.unwrap() - 0.02f64.sqrt() * 0.1).abs() < 1e-12);
    }

    #[test]
    fn failures_are_isolated() {
        let outcomes = vec![Ok(vec![("cdf_l2".to_string(), None, 0.5)]), Err("diverged".to_string())];
        let rows = cell_rows(&cell(), &[1, 2], &outcomes, "abc");
        assert_eq!(rows[1].metric, "failed");
        assert_eq!(rows[2].value, Some(0.5));
        let mut buf = Vec::new();
        write_results(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "model,method,m1,m2,dtilde,seed,metric,level,value,std,config_hash");
        assert_eq!(lines[1], "m2a,ndr,200,50,1,1,cdf_l2,,0.5,,abc");
        assert_eq!(lines[2], "m2a,ndr,200,50,1,2,failed,,,,abc");
        assert_eq!(lines[3], "m2a,ndr,200,50,1,agg,cdf_l2,,0.5,0,abc");
    }
}
