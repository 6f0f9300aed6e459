//! Coefficient files written by `fit` and `tune` and read back by `kkt`.
//!
//! ```text
//! # gqnet 0.1.0 coefficients
//! tau = 5.0000000000000000e-1
//! lambda1 = ...
//! ...
//! active = 0 2
//! group	column	coefficient
//! 0	1	1.2345678901234567e0
//! ```
//!
//! `column` is the 1-based predictor column of the dataset and `group` its
//! group id, so a file can be checked against the data it came from.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use gqnet_core::{FitResult, GroupedCoefficients, PenaltyConfig};

use crate::dataset::Dataset;
use crate::error::{read_to_string, CliError, Result};
use crate::number;

pub const TABLE_HEADER: &str = "group\tcolumn\tcoefficient";

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientFile {
    pub tau: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub gamma: f64,
    pub converged: bool,
    pub iterations: usize,
    pub objective_quantile: f64,
    pub objective_penalized: f64,
    pub kkt_pass: Option<bool>,
    /// Group ids of the nonzero groups.
    pub active: Vec<usize>,
    pub entries: Vec<Entry>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub group: usize,
    pub column: usize,
    pub value: f64,
}

impl CoefficientFile {
    pub fn from_fit(dataset: &Dataset, fit: &FitResult, config: &PenaltyConfig, kkt_pass: Option<bool>) -> Self {
        let p = dataset.design.group_size();
        let entries = fit
            .coefficients
            .flat()
            .iter()
            .enumerate()
            .map(|(k, &value)| Entry {
                group: dataset.group_ids[k / p],
                column: dataset.columns[k],
                value,
            })
            .collect();
        Self {
            tau: config.tau,
            lambda1: config.lambda1,
            lambda2: config.lambda2,
            gamma: config.gamma,
            converged: fit.converged,
            iterations: fit.iterations,
            objective_quantile: fit.objective_quantile,
            objective_penalized: fit.objective_penalized,
            kkt_pass,
            active: fit.active_set.iter().map(|&j| dataset.group_ids[j]).collect(),
            entries,
        }
    }

    pub fn render(&self) -> String {
        let mut out = format!("# gqnet {} coefficients\n", env!("CARGO_PKG_VERSION"));
        let kkt = match self.kkt_pass {
            Some(true) => "pass",
            Some(false) => "fail",
            None => "unchecked",
        };
        let active: Vec<String> = self.active.iter().map(usize::to_string).collect();
        let _ = write!(
            out,
            "tau = {}\nlambda1 = {}\nlambda2 = {}\ngamma = {}\nconverged = {}\niterations = {}\n\
             objective_quantile = {}\nobjective_penalized = {}\nkkt = {kkt}\nactive = {}\n{TABLE_HEADER}\n",
            number::fmt(self.tau),
            number::fmt(self.lambda1),
            number::fmt(self.lambda2),
            number::fmt(self.gamma),
            self.converged,
            self.iterations,
            number::fmt(self.objective_quantile),
            number::fmt(self.objective_penalized),
            active.join(" "),
        );
        for e in &self.entries {
            let _ = writeln!(out, "{}\t{}\t{}", e.group, e.column, number::fmt(e.value));
        }
        out
    }

    /// Places the entries into the dataset's internal layout, checking
    /// that every predictor column appears exactly once under its group.
    pub fn coefficients_for(&self, dataset: &Dataset) -> Result<GroupedCoefficients> {
        let ncols = dataset.columns.len();
        if self.entries.len() != ncols {
            return Err(CliError::Input(format!(
                "dimension mismatch: coefficient file has {} entries, dataset has {ncols} predictors",
                self.entries.len()
            )));
        }
        let p = dataset.design.group_size();
        let slot: BTreeMap<usize, usize> = dataset.columns.iter().enumerate().map(|(k, &c)| (c, k)).collect();
        let mut values = vec![f64::NAN; ncols];
        for e in &self.entries {
            let k = *slot.get(&e.column).ok_or_else(|| {
                CliError::Input(format!("dimension mismatch: dataset has no predictor column {}", e.column))
            })?;
            if dataset.group_ids[k / p] != e.group {
                return Err(CliError::Input(format!(
                    "dimension mismatch: column {} belongs to group {} in the dataset, not {}",
                    e.column,
                    dataset.group_ids[k / p],
                    e.group
                )));
            }
            if !values[k].is_nan() {
                return Err(CliError::Input(format!("column {} listed twice", e.column)));
            }
            values[k] = e.value;
        }
        Ok(GroupedCoefficients::from_flat(dataset.design.groups(), p, values)?)
    }
}

pub fn read_coefficients(path: &Path) -> Result<CoefficientFile> {
    parse_coefficients(&read_to_string(path)?, &path.display().to_string())
}

pub fn parse_coefficients(text: &str, source_name: &str) -> Result<CoefficientFile> {
    let err = |line: usize, msg: String| CliError::parse(source_name, line, msg);
    let mut keys: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
    let mut entries = Vec::new();
    let mut in_table = false;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if in_table {
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            let [group, column, value] = fields[..] else {
                return Err(err(line_no, format!("expected 3 tab-separated fields, found {}", fields.len())));
            };
            let group = group
                .parse()
                .map_err(|_| err(line_no, format!("bad group id `{group}`")))?;
            let column = column
                .parse()
                .map_err(|_| err(line_no, format!("bad column `{column}`")))?;
            let value = number::parse(value)
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(line_no, format!("`{value}` is not a finite number")))?;
            entries.push(Entry { group, column, value });
        } else if line == TABLE_HEADER {
            in_table = true;
        } else {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(line_no, format!("expected `key = value`, found `{line}`")))?;
            keys.insert(key.trim(), (line_no, value.trim()));
        }
    }
    if !in_table {
        return Err(CliError::Input(format!("{source_name}: missing `{}` table", TABLE_HEADER.replace('\t', " "))));
    }

    let get = |key: &str| -> Result<(usize, &str)> {
        keys.get(key)
            .copied()
            .ok_or_else(|| CliError::Input(format!("{source_name}: missing key `{key}`")))
    };
    let real = |key: &str| -> Result<f64> {
        let (line, v) = get(key)?;
        number::parse(v).ok_or_else(|| err(line, format!("`{key}`: `{v}` is not a number")))
    };
    let flag = |key: &str| -> Result<bool> {
        let (line, v) = get(key)?;
        v.parse().map_err(|_| err(line, format!("`{key}`: expected true or false")))
    };
    let (iter_line, iterations) = get("iterations")?;
    let (kkt_line, kkt) = get("kkt")?;
    let (active_line, active) = get("active")?;
    Ok(CoefficientFile {
        tau: real("tau")?,
        lambda1: real("lambda1")?,
        lambda2: real("lambda2")?,
        gamma: real("gamma")?,
        converged: flag("converged")?,
        iterations: iterations
            .parse()
            .map_err(|_| err(iter_line, "`iterations`: expected an integer".into()))?,
        objective_quantile: real("objective_quantile")?,
        objective_penalized: real("objective_penalized")?,
        kkt_pass: match kkt {
            "pass" => Some(true),
            "fail" => Some(false),
            "unchecked" => None,
            other => return Err(err(kkt_line, format!("`kkt`: unknown value `{other}`"))),
        },
        active: active
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| err(active_line, format!("bad group id `{t}`"))))
            .collect::<Result<_>>()?,
        entries,
    })
}
