use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ct_factor::numerics::{sample_correlation, DataMatrix, SymMatrix};
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::args::InputArgs;
use crate::error::{CliError, CliResult};

/// A numeric table with an optional header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Option<Vec<String>>,
    pub data: DataMatrix,
}

fn parse_cell(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Parses comma-separated numeric text. The first row is taken as a header
/// when none of its cells is a number.
pub fn parse_csv(text: &str) -> CliResult<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut header: Option<Vec<String>> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Input(format!("CSV line {}: {e}", line + 1)))?;
        if line == 0 && record.iter().all(|c| parse_cell(c).is_none()) {
            header = Some(record.iter().map(str::to_string).collect());
            continue;
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(col, c)| {
                parse_cell(c).ok_or_else(|| CliError::Input(format!("CSV line {}, column {}: '{c}' is not a finite number", line + 1, col + 1)))
            })
            .collect::<CliResult<Vec<f64>>>()?;
        rows.push(row);
    }
    let p = rows.first().map(Vec::len).ok_or_else(|| CliError::Input("CSV contains no data rows".into()))?;
    if let Some(h) = &header {
        if h.len() != p {
            return Err(CliError::Input(format!("header has {} names but rows have {p} values", h.len())));
        }
    }
    let data = DMatrix::from_row_iterator(rows.len(), p, rows.into_iter().flatten());
    Ok(Table { header, data })
}

/// Shortest decimal form that parses back to the same value.
pub fn format_csv(table: &Table) -> String {
    let mut out = String::new();
    if let Some(h) = &table.header {
        out.push_str(&h.join(","));
        out.push('\n');
    }
    for r in 0..table.data.nrows() {
        let row: Vec<String> = table.data.row(r).iter().map(|v| format!("{v}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn read_csv(path: &Path) -> CliResult<Table> {
    let text = fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
    parse_csv(&text).map_err(|e| CliError::read(path, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::write(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::read(path, e))
}

/// Pretty JSON to `path`, or to stdout when `path` is `None`.
pub fn emit_json<T: Serialize>(value: &T, path: Option<&PathBuf>) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    text.push('\n');
    match path {
        Some(p) => write_text(p, &text),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Internal(format!("stdout: {e}"))),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrFile {
    pub n: usize,
    pub corr: Vec<Vec<f64>>,
}

/// Correlation matrix, sample size and (for CSV input) the data.
pub struct Input {
    pub corr: SymMatrix,
    pub n: usize,
    pub data: Option<DataMatrix>,
}

pub fn load_input(args: &InputArgs) -> CliResult<Input> {
    match (&args.data, &args.corr) {
        (Some(path), _) => {
            let table = read_csv(path)?;
            if table.data.nrows() < 2 {
                return Err(CliError::read(path, "at least two observations are needed"));
            }
            let corr = sample_correlation(&table.data).map_err(|e| CliError::read(path, e))?;
            Ok(Input { corr, n: table.data.nrows(), data: Some(table.data) })
        }
        (None, Some(path)) => {
            let file: CorrFile = read_json(path)?;
            let corr = SymMatrix::from_rows(&file.corr).map_err(|e| CliError::read(path, e))?;
            if file.n < 2 {
                return Err(CliError::read(path, "n must be at least 2"));
            }
            Ok(Input { corr, n: file.n, data: None })
        }
        (None, None) => Err(CliError::Input("one of --data or --corr is required".into())),
    }
}
