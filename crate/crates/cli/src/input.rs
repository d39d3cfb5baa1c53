//! Matrix and group-label ingestion.

use std::path::Path;

use simcrit::{Dataset, Design};

use crate::error::CliError;

fn delimiter(path: &Path) -> Result<u8, CliError> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("tsv") | Some("txt") => Ok(b'\t'),
        Some("csv") => Ok(b','),
        _ => Err(CliError::Usage(format!(
            "{}: cannot infer the delimiter, use a .tsv or .csv extension",
            path.display()
        ))),
    }
}

pub struct Matrix {
    pub feature_ids: Vec<String>,
    pub n_cols: usize,
    pub values: Vec<f64>,
}

pub fn read_matrix(path: &Path) -> Result<Matrix, CliError> {
    let delim = delimiter(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delim)
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| data_error(path, e))?;
    let headers = reader.headers().map_err(|e| data_error(path, e))?.clone();
    if headers.len() < 2 {
        return Err(CliError::Data(format!(
            "{}: line 1: header needs a feature-id column and at least one sample",
            path.display()
        )));
    }
    let n_cols = headers.len() - 1;
    let mut feature_ids = Vec::new();
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| data_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let mut fields = record.iter();
        let id = fields.next().unwrap_or_default().trim();
        if id.is_empty() {
            return Err(CliError::Data(format!("{}: line {line}: empty feature id", path.display())));
        }
        for (j, field) in fields.enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                CliError::Data(format!(
                    "{}: line {line}, column {}: `{field}` is not a number",
                    path.display(),
                    j + 2
                ))
            })?;
            if !v.is_finite() {
                return Err(CliError::Data(format!(
                    "{}: line {line}, column {}: non-finite value",
                    path.display(),
                    j + 2
                )));
            }
            values.push(v);
        }
        feature_ids.push(id.to_string());
    }
    if feature_ids.is_empty() {
        return Err(CliError::Data(format!("{}: no feature rows", path.display())));
    }
    Ok(Matrix {
        feature_ids,
        n_cols,
        values,
    })
}

fn data_error(path: &Path, e: csv::Error) -> CliError {
    if let csv::ErrorKind::Io(_) = e.kind() {
        return CliError::Data(format!("{}: {e}", path.display()));
    }
    let line = e.position().map(|p| p.line());
    match (e.kind(), line) {
        (csv::ErrorKind::UnequalLengths { expected_len, len, .. }, Some(line)) => CliError::Data(format!(
            "{}: line {line}: expected {expected_len} fields, found {len}",
            path.display()
        )),
        (_, Some(line)) => CliError::Data(format!("{}: line {line}: {e}", path.display())),
        (_, None) => CliError::Data(format!("{}: {e}", path.display())),
    }
}

/// Reads one label per line. The label seen first marks group one, the
/// other label group two.
pub fn read_groups(path: &Path, n_cols: usize) -> Result<Vec<bool>, CliError> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    let labels: Vec<&str> = text.lines().map(str::trim).collect();
    // tolerate trailing blank lines only
    let end = labels.iter().rposition(|l| !l.is_empty()).map_or(0, |i| i + 1);
    let labels = &labels[..end];
    if let Some(i) = labels.iter().position(|l| l.is_empty()) {
        return Err(CliError::Data(format!("{}: line {}: empty label", path.display(), i + 1)));
    }
    if labels.len() != n_cols {
        return Err(CliError::Data(format!(
            "{}: {} labels for {n_cols} matrix columns",
            path.display(),
            labels.len()
        )));
    }
    let first = labels.first().copied().unwrap_or_default();
    let mut distinct: Vec<&str> = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() != 2 {
        return Err(CliError::Data(format!(
            "{}: expected exactly 2 distinct labels, found {}",
            path.display(),
            distinct.len()
        )));
    }
    Ok(labels.iter().map(|&l| l != first).collect())
}

pub fn load_dataset(input: &Path, groups: Option<&Path>) -> Result<Dataset, CliError> {
    let matrix = read_matrix(input)?;
    let design = match groups {
        None => Design::OneSample,
        Some(g) => Design::TwoSample {
            second: read_groups(g, matrix.n_cols)?,
        },
    };
    // shape problems here are data errors whatever the core calls them
    Dataset::new(matrix.values, matrix.n_cols, matrix.feature_ids, design)
        .map_err(|e| CliError::Data(e.to_string()))
}
