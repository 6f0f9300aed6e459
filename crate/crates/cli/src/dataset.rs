//! Delimited-text datasets.
//!
//! The first column is the response, the rest are predictors. Cells are
//! separated by commas or by whitespace; the choice is made from the first
//! data line. Lines starting with `#` are comments, except for two optional
//! directives describing the groups:
//!
//! ```text
//! #groups: 5 2          five groups of two consecutive columns
//! #groupmap: 1 1 2 2    a group id for every predictor column
//! ```
//!
//! Without a directive every predictor is its own group.

use std::collections::BTreeMap;
use std::path::Path;

use gqnet_core::GroupedDesign;

use crate::error::{read_to_string, CliError, Result};
use crate::number;

#[derive(Debug, Clone)]
pub struct Dataset {
    pub y: Vec<f64>,
    /// Predictors reordered so each group is contiguous.
    pub design: GroupedDesign,
    /// User-facing id of each internal group.
    pub group_ids: Vec<usize>,
    /// 1-based file column (predictors only) of each internal column.
    pub columns: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
enum Grouping {
    Blocks { g: usize, p: usize, line: usize },
    Map { ids: Vec<usize>, line: usize },
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    parse_dataset(&read_to_string(path)?, &path.display().to_string())
}

pub fn parse_dataset(text: &str, source_name: &str) -> Result<Dataset> {
    let err = |line: usize, msg: String| CliError::parse(source_name, line, msg);
    let mut grouping: Option<Grouping> = None;
    let mut comma: Option<bool> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = 0;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim_start();
            let directive = if let Some(args) = rest.strip_prefix("groups:") {
                let fields = parse_counts(args).map_err(|m| err(line_no, m))?;
                match fields[..] {
                    [g, p] if g > 0 && p > 0 => Grouping::Blocks { g, p, line: line_no },
                    _ => return Err(err(line_no, "`#groups:` needs two positive integers `g p`".into())),
                }
            } else if let Some(args) = rest.strip_prefix("groupmap:") {
                let ids = parse_counts(args).map_err(|m| err(line_no, m))?;
                Grouping::Map { ids, line: line_no }
            } else {
                continue;
            };
            if grouping.is_some() {
                return Err(err(line_no, "more than one group directive".into()));
            }
            grouping = Some(directive);
            continue;
        }

        let comma = *comma.get_or_insert_with(|| line.contains(','));
        let cells: Vec<&str> = if comma {
            line.split(',').map(str::trim).collect()
        } else {
            line.split_whitespace().collect()
        };
        let mut row = Vec::with_capacity(cells.len());
        for (col, cell) in cells.iter().enumerate() {
            match number::parse(cell) {
                Some(v) if v.is_finite() => row.push(v),
                _ => {
                    return Err(err(
                        line_no,
                        format!("column {}: `{cell}` is not a finite number", col + 1),
                    ))
                }
            }
        }
        if rows.is_empty() {
            width = row.len();
            if width < 2 {
                return Err(err(line_no, "need a response column and at least one predictor".into()));
            }
        } else if row.len() != width {
            return Err(err(
                line_no,
                format!("expected {width} columns, found {}", row.len()),
            ));
        }
        rows.push(row);
    }

    if rows.is_empty() {
        return Err(CliError::Input(format!("{source_name}: no data rows")));
    }
    let ncols = width - 1;
    let (group_ids, columns, p) = match grouping {
        None => ((0..ncols).collect(), (1..=ncols).collect(), 1),
        Some(Grouping::Blocks { g, p, line }) => {
            if g * p != ncols {
                return Err(err(
                    line,
                    format!("`#groups: {g} {p}` covers {} columns but the data has {ncols} predictors", g * p),
                ));
            }
            ((0..g).collect(), (1..=ncols).collect(), p)
        }
        Some(Grouping::Map { ids, line }) => group_map(&ids, ncols).map_err(|m| err(line, m))?,
    };

    let y: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let reordered: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| columns.iter().map(|&c| r[c]).collect())
        .collect();
    let design = GroupedDesign::from_rows(&reordered, group_ids.len(), p)?;
    Ok(Dataset {
        y,
        design,
        group_ids,
        columns,
    })
}

fn parse_counts(args: &str) -> std::result::Result<Vec<usize>, String> {
    args.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| format!("`{t}` is not a nonnegative integer")))
        .collect()
}

/// Groups columns by id (ascending), keeping file order within a group.
fn group_map(ids: &[usize], ncols: usize) -> std::result::Result<(Vec<usize>, Vec<usize>, usize), String> {
    if ids.len() != ncols {
        return Err(format!(
            "group map lists {} columns but the data has {ncols} predictors",
            ids.len()
        ));
    }
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (col, &id) in ids.iter().enumerate() {
        members.entry(id).or_default().push(col + 1);
    }
    let p = members.values().next().map_or(0, Vec::len);
    if let Some((id, cols)) = members.iter().find(|(_, c)| c.len() != p) {
        return Err(format!(
            "group {id} has {} columns but others have {p}; groups must have equal sizes",
            cols.len()
        ));
    }
    let group_ids = members.keys().copied().collect();
    let columns = members.into_values().flatten().collect();
    Ok((group_ids, columns, p))
}
