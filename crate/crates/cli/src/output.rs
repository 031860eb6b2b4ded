//! CSV artifacts. Numbers are written with 17 significant digits so they
//! round-trip exactly; matrices are flattened row-major with columns named
//! `<prefix>_<row>_<col>` (1-based).

use std::fs::File;
use std::path::Path;

use covsteer::schrodinger::FeedbackPolicy;
use covsteer::Mat;

use crate::CliError;

pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn matrix_columns(prefix: &str, rows: usize, cols: usize) -> Vec<String> {
    (0..rows).flat_map(|i| (0..cols).map(move |j| format!("{prefix}_{}_{}", i + 1, j + 1))).collect()
}

pub fn row_major(m: &Mat) -> impl Iterator<Item = f64> + '_ {
    (0..m.nrows()).flat_map(move |i| (0..m.ncols()).map(move |j| m[(i, j)]))
}

pub struct CsvOut {
    writer: csv::Writer<File>,
}

impl CsvOut {
    pub fn create(path: &Path, header: &[String]) -> Result<Self, CliError> {
        let mut writer = csv::Writer::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        writer.write_record(header).map_err(|e| CliError::Io(e.to_string()))?;
        Ok(CsvOut { writer })
    }

    pub fn row(&mut self, fields: Vec<String>) -> Result<(), CliError> {
        self.writer.write_record(fields).map_err(|e| CliError::Io(e.to_string()))
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.writer.flush().map_err(|e| CliError::Io(e.to_string()))
    }
}

pub fn write_gains(path: &Path, policy: &FeedbackPolicy) -> Result<(), CliError> {
    let (m, n) = policy.shape();
    let mut header = vec!["t".to_string()];
    header.extend(matrix_columns("K", m, n));
    let mut out = CsvOut::create(path, &header)?;
    for (t, k) in policy.grid.iter().zip(&policy.gains) {
        let mut row = vec![num(*t)];
        row.extend(row_major(k).map(num));
        out.row(row)?;
    }
    out.finish()
}

/// Reads a `gains.csv` written by [`write_gains`] for an `m × n` gain.
pub fn read_gains(path: &Path, m: usize, n: usize) -> Result<FeedbackPolicy, CliError> {
    let input = |msg: String| CliError::Input(format!("{}: {msg}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| input(e.to_string()))?;
    let width = reader.headers().map_err(|e| input(e.to_string()))?.len();
    if width != 1 + m * n {
        return Err(input(format!("expected {} columns (t and a {m}x{n} gain), found {width}", 1 + m * n)));
    }
    let mut grid = Vec::new();
    let mut gains = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| input(e.to_string()))?;
        let values = record
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| input(format!("data row {}: {e}", line + 1)))?;
        grid.push(values[0]);
        gains.push(Mat::from_row_slice(m, n, &values[1..]));
    }
    if grid.is_empty() {
        return Err(input("no gain rows".into()));
    }
    FeedbackPolicy::sampled(grid, gains).map_err(|e| input(e.to_string()))
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn matrix_json(m: &Mat) -> serde_json::Value {
    serde_json::Value::Array(
        (0..m.nrows()).map(|i| serde_json::Value::from((0..m.ncols()).map(|j| m[(i, j)]).collect::<Vec<f64>>())).collect(),
    )
}
