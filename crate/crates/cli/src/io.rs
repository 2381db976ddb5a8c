//! CSV matrices and file digests.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path.display(), e))
}

pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Rows of a CSV file as strings.
fn records(path: &Path, bytes: &[u8]) -> CliResult<Vec<Vec<String>>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(bytes);
    reader
        .records()
        .map(|r| {
            r.map(|rec| rec.iter().map(str::to_string).collect())
                .map_err(|e| CliError::io(path.display(), e))
        })
        .collect()
}

/// A numeric table with an optional header row.
#[derive(Debug, Clone)]
pub struct Table {
    pub header: Option<Vec<String>>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn ncols(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.as_ref()?.iter().position(|h| h == name)
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows.len(), self.ncols(), |i, j| self.rows[i][j])
    }
}

/// Parse a CSV of numbers. The first row is taken as a header when any of
/// its fields is not a number.
pub fn parse_table(path: &Path, bytes: &[u8]) -> CliResult<Table> {
    let mut recs = records(path, bytes)?;
    let header = match recs.first() {
        Some(first) if first.iter().any(|f| f.parse::<f64>().is_err()) => Some(recs.remove(0)),
        _ => None,
    };
    let rows = recs
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            rec.iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| CliError::Io(format!("{}: row {}: {f:?} is not a number", path.display(), i + 1)))
                })
                .collect::<CliResult<Vec<f64>>>()
        })
        .collect::<CliResult<Vec<_>>>()?;
    if rows.is_empty() {
        return Err(CliError::Io(format!("{}: no data rows", path.display())));
    }
    Ok(Table { header, rows })
}

pub fn read_table(path: &Path) -> CliResult<(Table, String)> {
    let bytes = read_bytes(path)?;
    Ok((parse_table(path, &bytes)?, digest(&bytes)))
}

pub fn read_matrix(path: &Path) -> CliResult<(DMatrix<f64>, String)> {
    let (t, d) = read_table(path)?;
    Ok((t.to_matrix(), d))
}

/// A vector stored as one column (or a single row).
pub fn read_vector(path: &Path) -> CliResult<(DVector<f64>, String)> {
    let (m, d) = read_matrix(path)?;
    let v = if m.ncols() == 1 {
        m.column(0).into_owned()
    } else if m.nrows() == 1 {
        m.row(0).transpose()
    } else {
        return Err(CliError::Io(format!("{}: expected a single column, got {}x{}", path.display(), m.nrows(), m.ncols())));
    };
    Ok((v, d))
}

/// CSV text of a matrix. Values use the shortest representation that
/// parses back to the same `f64`.
pub fn matrix_csv(header: Option<&[String]>, m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    if let Some(h) = header {
        out.push_str(&h.join(","));
        out.push('\n');
    }
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| m[(i, j)].to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn vector_csv(name: &str, v: &DVector<f64>) -> String {
    let mut out = format!("{name}\n");
    for x in v.iter() {
        out.push_str(&x.to_string());
        out.push('\n');
    }
    out
}

/// Serialize rows with the csv crate; `header` is written alone when there
/// are no rows.
pub fn rows_csv<T: serde::Serialize>(rows: &[T], header: &str) -> CliResult<String> {
    if rows.is_empty() {
        return Ok(format!("{header}\n"));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Io(format!("csv encoding: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(format!("csv encoding: {e}")))?;
    String::from_utf8(bytes).map_err(|e| CliError::Io(e.to_string()))
}

/// Output files collected in memory and written together once a command has
/// succeeded, so a failed run leaves no partial results.
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, name: &str, contents: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), contents.into()));
    }

    pub fn digests(&self) -> Vec<(String, String)> {
        self.files.iter().map(|(n, b)| (n.clone(), digest(b))).collect()
    }

    pub fn write(&self, dir: &Path) -> CliResult<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))?;
        self.files
            .iter()
            .map(|(name, bytes)| {
                let path = dir.join(name);
                fs::write(&path, bytes).map_err(|e| CliError::io(path.display(), e))?;
                Ok(path)
            })
            .collect()
    }
}
