//! Label files: one integer per line for single-label data, and an `N x C`
//! 0/1 CSV for multi-label data. Neither has a header.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::LabelVector;
use crate::error::{Error, Result};

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelVector> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn parse_labels(text: &str) -> std::result::Result<LabelVector, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<usize>()
                .map_err(|e| format!("line {}: {e}", i + 1))
        })
        .collect::<std::result::Result<Vec<_>, _>>()
        .map(LabelVector::new)
}

pub fn write_labels(labels: &LabelVector, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::with_capacity(labels.len() * 4);
    for l in labels.as_slice() {
        s.push_str(&l.to_string());
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Reads an `N x C` matrix of 0/1 flags.
pub fn read_label_matrix(path: impl AsRef<Path>) -> Result<Array2<bool>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Vec<bool>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| match f.trim() {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(Error::Data(format!(
                    "{}: line {}: expected 0 or 1, found {other:?}",
                    path.display(),
                    i + 1
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Dimension(format!(
                    "{}: line {} has {} columns, expected {}",
                    path.display(),
                    i + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    let n = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    Ok(Array2::from_shape_vec((n, c), rows.concat()).expect("rectangular"))
}

pub fn write_label_matrix(m: &Array2<bool>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::new();
    for row in m.rows() {
        let cells: Vec<&str> = row.iter().map(|b| if *b { "1" } else { "0" }).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}
