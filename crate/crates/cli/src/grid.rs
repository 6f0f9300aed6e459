//! Tuning-grid files: `lambda1 = v ...` and `lambda2 = v ...` lines, which
//! may repeat. The grid is every `(lambda1, lambda2)` pair.

use std::path::Path;

use crate::error::{read_to_string, CliError, Result};
use crate::number;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GridFile {
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
}

pub fn read_grid(path: &Path) -> Result<GridFile> {
    parse_grid(&read_to_string(path)?, &path.display().to_string())
}

pub fn parse_grid(text: &str, source_name: &str) -> Result<GridFile> {
    let mut grid = GridFile::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| CliError::parse(source_name, idx + 1, msg);
        let (key, values) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected `lambda1 = ...` or `lambda2 = ...`, found `{line}`")))?;
        let axis = match key.trim() {
            "lambda1" => &mut grid.lambda1,
            "lambda2" => &mut grid.lambda2,
            other => return Err(err(format!("unknown grid key `{other}`"))),
        };
        for token in values.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
            match number::parse(token) {
                Some(v) if v > 0.0 && v.is_finite() => axis.push(v),
                _ => return Err(err(format!("`{token}` is not a positive number"))),
            }
        }
    }
    Ok(grid)
}
