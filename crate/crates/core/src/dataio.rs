//! Tabular data: CSV ingestion, outlier fences, splitting and scaling.

use std::fmt::Write as _;
use std::fs::File;
use std::path::Path;

use log::warn;
use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::stats;

/// Feature matrix and response with their column names.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    pub feature_names: Vec<String>,
    pub response_name: String,
    pub data: Dataset,
}

impl TabularDataset {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Column names with the response last.
    pub fn column_names(&self) -> Vec<String> {
        let mut names = self.feature_names.clone();
        names.push(self.response_name.clone());
        names
    }

    /// Column `j`, counting the response as column `p`.
    fn column(&self, j: usize) -> Vec<f64> {
        if j < self.data.dim() {
            self.data.x.column(j).to_vec()
        } else {
            self.data.y.to_vec()
        }
    }

    fn keep_rows(&self, rows: &[usize]) -> Self {
        Self {
            feature_names: self.feature_names.clone(),
            response_name: self.response_name.clone(),
            data: self.data.select(rows),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadReport {
    pub rows_read: usize,
    pub rows_dropped: usize,
}

/// Reads a headed numeric CSV; rows with a missing, non-numeric or
/// non-finite field are dropped and counted.
pub fn load_csv(path: &Path, response_column: &str) -> Result<(TabularDataset, LoadReport)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let response = header
        .iter()
        .position(|h| h == response_column)
        .ok_or_else(|| Error::Parse(format!("response column {response_column:?} not in header {header:?}")))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut report = LoadReport {
        rows_read: 0,
        rows_dropped: 0,
    };
    for record in reader.records() {
        report.rows_read += 1;
        let parsed = record.ok().filter(|r| r.len() == header.len()).and_then(|r| {
            r.iter()
                .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect::<Option<Vec<f64>>>()
        });
        match parsed {
            Some(v) => rows.push(v),
            None => report.rows_dropped += 1,
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyData(format!("{} has no usable rows", path.display())));
    }
    if report.rows_dropped > 0 {
        warn!("{}: dropped {} of {} rows", path.display(), report.rows_dropped, report.rows_read);
    }
    let p = header.len() - 1;
    let mut x = Array2::zeros((rows.len(), p));
    let mut y = Array1::zeros(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let mut j = 0;
        for (c, &v) in row.iter().enumerate() {
            if c == response {
                y[i] = v;
            } else {
                x[[i, j]] = v;
                j += 1;
            }
        }
    }
    let feature_names = header
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != response)
        .map(|(_, h)| h.clone())
        .collect();
    Ok((
        TabularDataset {
            feature_names,
            response_name: header[response].clone(),
            data: Dataset::new(x, y)?,
        },
        report,
    ))
}

/// Writes features then response, using shortest round-trip formatting.
pub fn write_csv(path: &Path, ds: &TabularDataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(ds.column_names())?;
    for (x, y) in ds.data.x.rows().into_iter().zip(ds.data.y.iter()) {
        let mut rec: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        rec.push(y.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Tukey fences `[Q1 - f IQR, Q3 + f IQR]` per column (response last),
/// with type-7 quartiles. Columns with zero IQR are not tested.
#[derive(Debug, Clone, PartialEq)]
pub struct IqrFences {
    pub names: Vec<String>,
    pub bounds: Vec<Option<(f64, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IqrReport {
    /// Rows failing each column's fence (a row may fail several).
    pub per_column: Vec<(String, usize)>,
    pub removed: usize,
}

impl IqrFences {
    pub fn fit(ds: &TabularDataset, factor: f64) -> Result<Self> {
        if ds.len() < 4 {
            return Err(Error::EmptyData(format!("IQR rule needs at least 4 rows, got {}", ds.len())));
        }
        if !(factor >= 0.0) {
            return Err(Error::InvalidArgument(format!("IQR factor must be >= 0, got {factor}")));
        }
        let names = ds.column_names();
        let bounds = (0..names.len())
            .map(|j| {
                let s = stats::sorted(&ds.column(j));
                let q1 = stats::quantile_type7(&s, 0.25);
                let q3 = stats::quantile_type7(&s, 0.75);
                let iqr = q3 - q1;
                (iqr > 0.0).then_some((q1 - factor * iqr, q3 + factor * iqr))
            })
            .collect();
        Ok(Self { names, bounds })
    }

    pub fn apply(&self, ds: &TabularDataset) -> Result<(TabularDataset, IqrReport)> {
        crate::error::dim_check("IQR fence columns", self.bounds.len(), ds.data.dim() + 1)?;
        let mut keep = vec![true; ds.len()];
        let mut per_column = Vec::with_capacity(self.bounds.len());
        for (j, b) in self.bounds.iter().enumerate() {
            let mut count = 0;
            if let Some((lo, hi)) = *b {
                for (i, v) in ds.column(j).into_iter().enumerate() {
                    if v < lo || v > hi {
                        count += 1;
                        keep[i] = false;
                    }
                }
            }
            per_column.push((self.names[j].clone(), count));
        }
        let rows: Vec<usize> = (0..ds.len()).filter(|&i| keep[i]).collect();
        let removed = ds.len() - rows.len();
        if rows.is_empty() {
            return Err(Error::EmptyData("IQR rule removed every row".into()));
        }
        Ok((ds.keep_rows(&rows), IqrReport { per_column, removed }))
    }
}

/// Fits fences on `ds` and filters it.
pub fn iqr_filter(ds: &TabularDataset, factor: f64) -> Result<(TabularDataset, IqrReport)> {
    IqrFences::fit(ds, factor)?.apply(ds)
}

/// Per-column affine standardization with population standard deviations.
/// A column with zero spread is only centered.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub names: Vec<String>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Scaler {
    pub fn fit(ds: &TabularDataset) -> Result<Self> {
        ds.data.ensure_nonempty("scaler fit data")?;
        let names = ds.column_names();
        let mut means = Vec::with_capacity(names.len());
        let mut stds = Vec::with_capacity(names.len());
        for j in 0..names.len() {
            let c = ds.column(j);
            let sd = stats::population_std(&c);
            if sd == 0.0 {
                warn!("column {} has zero variance; centering only", names[j]);
            }
            means.push(stats::mean(&c));
            stds.push(sd);
        }
        Ok(Self { names, means, stds })
    }

    fn divisor(&self, j: usize) -> f64 {
        if self.stds[j] > 0.0 {
            self.stds[j]
        } else {
            1.0
        }
    }

    pub fn transform(&self, ds: &TabularDataset) -> Result<TabularDataset> {
        let p = ds.data.dim();
        crate::error::dim_check("scaler columns", self.names.len(), p + 1)?;
        let mut out = ds.clone();
        for (j, mut col) in out.data.x.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.means[j], self.divisor(j));
            col.mapv_inplace(|v| (v - m) / s);
        }
        let (m, s) = (self.means[p], self.divisor(p));
        out.data.y.mapv_inplace(|v| (v - m) / s);
        Ok(out)
    }

    /// Back to the response's original units.
    pub fn inverse_response(&self, y: f64) -> f64 {
        let p = self.names.len() - 1;
        y * self.divisor(p) + self.means[p]
    }

    pub fn inverse(&self, ds: &TabularDataset) -> Result<TabularDataset> {
        let p = ds.data.dim();
        crate::error::dim_check("scaler columns", self.names.len(), p + 1)?;
        let mut out = ds.clone();
        for (j, mut col) in out.data.x.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.means[j], self.divisor(j));
            col.mapv_inplace(|v| v * s + m);
        }
        out.data.y.mapv_inplace(|v| self.inverse_response(v));
        Ok(out)
    }

    /// Plain text, one `column,mean,std` line per column.
    pub fn to_sidecar(&self) -> String {
        let mut s = String::from("column,mean,std\n");
        for j in 0..self.names.len() {
            let _ = writeln!(s, "{},{},{}", self.names[j], self.means[j], self.stds[j]);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            train: 0.70,
            val: 0.15,
            seed,
        }
    }
}

/// Seeded permutation cut at `floor(train n)` and `floor((train + val) n)`.
pub fn split(ds: &TabularDataset, spec: &SplitSpec) -> Result<(TabularDataset, TabularDataset, TabularDataset)> {
    let n = ds.len();
    if !(spec.train > 0.0 && spec.val > 0.0 && spec.train + spec.val < 1.0) {
        return Err(Error::Config(format!("invalid split fractions {} / {}", spec.train, spec.val)));
    }
    let a = (spec.train * n as f64).floor() as usize;
    let b = ((spec.train + spec.val) * n as f64).floor() as usize;
    if a == 0 || b <= a || b >= n {
        return Err(Error::EmptyData(format!("{n} rows leave an empty split")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(spec.seed, &[tag::PERMUTATION, 0x5eed]));
    Ok((ds.keep_rows(&idx[..a]), ds.keep_rows(&idx[a..b]), ds.keep_rows(&idx[b..])))
}

/// Output of the real-data preprocessing pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub train: TabularDataset,
    pub val: TabularDataset,
    pub test: TabularDataset,
    pub scaler: Scaler,
    pub iqr: IqrReport,
}

/// Split, then filter every split with IQR fences fitted on the training
/// split, then standardize with statistics from the training split (or from
/// all filtered rows when `fit_on_all`).
pub fn prepare(ds: &TabularDataset, seed: u64, iqr_factor: f64, fit_on_all: bool) -> Result<Prepared> {
    let (train, val, test) = split(ds, &SplitSpec::new(seed))?;
    let fences = IqrFences::fit(&train, iqr_factor)?;
    let (train, mut iqr) = fences.apply(&train)?;
    let (val, r_val) = fences.apply(&val)?;
    let (test, r_test) = fences.apply(&test)?;
    for r in [&r_val, &r_test] {
        iqr.removed += r.removed;
        for (acc, (_, c)) in iqr.per_column.iter_mut().zip(&r.per_column) {
            acc.1 += c;
        }
    }
    let scaler = if fit_on_all {
        let mut all = train.clone();
        for part in [&val, &test] {
            all.data.x.append(Axis(0), part.data.x.view()).expect("same width");
            all.data.y.append(Axis(0), part.data.y.view()).expect("vector");
        }
        Scaler::fit(&all)?
    } else {
        Scaler::fit(&train)?
    };
    Ok(Prepared {
        train: scaler.transform(&train)?,
        val: scaler.transform(&val)?,
        test: scaler.transform(&test)?,
        scaler,
        iqr,
    })
}
