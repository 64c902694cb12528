//! CSV dataset ingestion and result files.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::experiment::{ExperimentResult, SummaryRow};
use super::metrics::{format_value, parse_value, Summary};
use crate::error::{MeloError, Result};
use crate::problems::{Dataset, Method};

/// Which columns of a CSV file make up a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DataSchema {
    Production { input: String, output: String },
    /// An intercept column is prepended to the covariates.
    Binary { response: String, covariates: Vec<String> },
    /// `None` takes every column as an asset.
    Returns { columns: Option<Vec<String>> },
    /// Quantity, price and two excluded instruments; an intercept is prepended.
    System { quantity: String, price: String, instruments: [String; 2] },
}

#[derive(Clone, Debug)]
pub struct LoadedData {
    pub dataset: Dataset,
    pub n_rows: usize,
    pub columns: Vec<String>,
}

struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl Table {
    fn column(&self, name: &str) -> Result<usize> {
        self.headers.iter().position(|h| h == name).ok_or_else(|| MeloError::MissingColumn(name.to_string()))
    }

    fn values(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }
}

/// Reads a headered numeric CSV. Rows are numbered from 1 after the header.
fn read_table(path: &Path) -> Result<Table> {
    let display = path.display().to_string();
    let file = File::open(path)?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).flexible(true).from_reader(file);
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(MeloError::EmptyFile(display));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        if rec.len() != headers.len() {
            return Err(MeloError::InvalidValue {
                row,
                column: headers.get(rec.len()).cloned().unwrap_or_default(),
                message: format!("expected {} fields, found {}", headers.len(), rec.len()),
            });
        }
        let mut values = Vec::with_capacity(headers.len());
        for (cell, name) in rec.iter().zip(&headers) {
            if cell.is_empty() {
                return Err(MeloError::InvalidValue { row, column: name.clone(), message: "missing value".into() });
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| MeloError::Parse { row, column: name.clone(), value: cell.to_string() })?;
            if !v.is_finite() {
                return Err(MeloError::InvalidValue { row, column: name.clone(), message: format!("non-finite value {cell}") });
            }
            values.push(v);
        }
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(MeloError::EmptyFile(display));
    }
    Ok(Table { headers, rows })
}

/// Loads the columns named by `schema` from a headered CSV file.
pub fn load_csv_dataset(path: impl AsRef<Path>, schema: &DataSchema) -> Result<LoadedData> {
    let path = path.as_ref();
    if std::fs::metadata(path)?.len() == 0 {
        return Err(MeloError::EmptyFile(path.display().to_string()));
    }
    let table = read_table(path)?;
    let n = table.rows.len();
    let (dataset, columns) = match schema {
        DataSchema::Production { input, output } => {
            let (i, o) = (table.column(input)?, table.column(output)?);
            (Dataset::Production { input: table.values(i), output: table.values(o) }, vec![input.clone(), output.clone()])
        }
        DataSchema::Binary { response, covariates } => {
            let r = table.column(response)?;
            let idx = covariates.iter().map(|c| table.column(c)).collect::<Result<Vec<_>>>()?;
            let y = table.values(r);
            if let Some(row) = y.iter().position(|&v| v != 0.0 && v != 1.0) {
                return Err(MeloError::InvalidValue {
                    row: row + 1,
                    column: response.clone(),
                    message: format!("binary response must be 0 or 1, got {}", y[row]),
                });
            }
            let x = DMatrix::from_fn(n, idx.len() + 1, |i, j| if j == 0 { 1.0 } else { table.rows[i][idx[j - 1]] });
            let mut cols = vec![response.clone()];
            cols.extend(covariates.iter().cloned());
            (Dataset::Binary { y, x }, cols)
        }
        DataSchema::Returns { columns } => {
            let names = columns.clone().unwrap_or_else(|| table.headers.clone());
            let idx = names.iter().map(|c| table.column(c)).collect::<Result<Vec<_>>>()?;
            let returns = DMatrix::from_fn(n, idx.len(), |i, j| table.rows[i][idx[j]]);
            (Dataset::Returns { returns }, names)
        }
        DataSchema::System { quantity, price, instruments } => {
            let names = [quantity, price, &instruments[0], &instruments[1]];
            let idx = names.iter().map(|c| table.column(c)).collect::<Result<Vec<_>>>()?;
            let y = DMatrix::from_fn(n, 2, |i, j| table.rows[i][idx[j]]);
            let x = DMatrix::from_fn(n, 3, |i, j| if j == 0 { 1.0 } else { table.rows[i][idx[j + 1]] });
            (Dataset::System { y, x }, names.iter().map(|s| s.to_string()).collect())
        }
    };
    Ok(LoadedData { dataset, n_rows: n, columns })
}

pub const SUMMARY_HEADER: [&str; 13] =
    ["method", "config", "component", "metric", "min", "q1", "median", "mean", "q3", "max", "range", "n", "discards"];

pub fn write_summaries_csv(rows: &[SummaryRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        let mut rec = vec![r.method.name().to_string(), r.config.clone(), r.component.clone(), r.metric.clone()];
        match &r.summary {
            Some(s) => {
                rec.extend(s.values().iter().map(|&v| format_value(v)));
                rec.push(s.n.to_string());
            }
            None => {
                rec.extend(std::iter::repeat("NA".to_string()).take(7));
                rec.push("0".into());
            }
        }
        rec.push(r.discards.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a file written by [`write_summaries_csv`].
pub fn read_summaries_csv(input: impl std::io::Read) -> Result<Vec<SummaryRow>> {
    let mut reader = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let field = |j: usize| rec.get(j).unwrap_or("");
        let num = |j: usize| {
            parse_value(field(j)).ok_or_else(|| MeloError::Parse {
                row,
                column: SUMMARY_HEADER[j].to_string(),
                value: field(j).to_string(),
            })
        };
        let count = |j: usize| {
            field(j).parse::<usize>().map_err(|_| MeloError::Parse {
                row,
                column: SUMMARY_HEADER[j].to_string(),
                value: field(j).to_string(),
            })
        };
        let method: Method = field(0).parse()?;
        let n = count(11)?;
        let discards = count(12)?;
        let summary = if n == 0 {
            None
        } else {
            Some(Summary {
                min: num(4)?,
                q1: num(5)?,
                median: num(6)?,
                mean: num(7)?,
                q3: num(8)?,
                max: num(9)?,
                range: num(10)?,
                n,
                discards,
            })
        };
        out.push(SummaryRow {
            method,
            config: field(1).to_string(),
            component: field(2).to_string(),
            metric: field(3).to_string(),
            summary,
            discards,
        });
    }
    Ok(out)
}

pub const SUMMARIES_FILE: &str = "summaries.csv";
pub const RESULTS_FILE: &str = "results.json";

/// Writes `summaries.csv` and `results.json` into `dir`.
pub fn write_experiment_outputs(result: &ExperimentResult, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    write_summaries_csv(&result.summaries, File::create(dir.join(SUMMARIES_FILE))?)?;
    let mut f = std::io::BufWriter::new(File::create(dir.join(RESULTS_FILE))?);
    serde_json::to_writer_pretty(&mut f, result)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}
