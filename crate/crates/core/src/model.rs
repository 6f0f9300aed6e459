//! Grouped linear quantile model: data containers, the check loss and the
//! unpenalized / adaptive elastic-net objectives.

use std::collections::BTreeSet;
use std::fmt;

use crate::error::{invalid, Error, Result};

/// Group norms at or below this value are treated as exactly zero.
pub const ZERO_TOL: f64 = 1e-10;

/// Deterministic `n x (g*p)` design whose columns are split into `g`
/// consecutive groups of `p` columns each.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDesign {
    n: usize,
    g: usize,
    p: usize,
    values: Vec<f64>,
}

impl GroupedDesign {
    /// Builds a design from row-major values.
    pub fn new(n: usize, g: usize, p: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || g == 0 || p == 0 {
            return Err(Error::Shape(format!(
                "n, g and p must be positive (got n={n}, g={g}, p={p})"
            )));
        }
        if values.len() != n * g * p {
            return Err(Error::Shape(format!(
                "expected {} design values for n={n}, g={g}, p={p}, got {}",
                n * g * p,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("design"));
        }
        Ok(Self { n, g, p, values })
    }

    pub fn from_rows(rows: &[Vec<f64>], g: usize, p: usize) -> Result<Self> {
        let mut values = Vec::with_capacity(rows.len() * g * p);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != g * p {
                return Err(Error::Shape(format!(
                    "row {i} has {} columns, expected {}",
                    row.len(),
                    g * p
                )));
            }
            values.extend_from_slice(row);
        }
        Self::new(rows.len(), g, p, values)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn groups(&self) -> usize {
        self.g
    }

    pub fn group_size(&self) -> usize {
        self.p
    }

    /// Total column count `r_n = g * p`.
    pub fn ncols(&self) -> usize {
        self.g * self.p
    }

    pub fn group_of(&self, column: usize) -> usize {
        column / self.p
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let r = self.ncols();
        &self.values[i * r..(i + 1) * r]
    }

    /// The `p` entries of row `i` belonging to group `j`.
    pub fn row_group(&self, i: usize, j: usize) -> &[f64] {
        let start = i * self.ncols() + j * self.p;
        &self.values[start..start + self.p]
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.values[i * self.ncols() + k]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `X * beta` for every row.
    pub fn predict(&self, beta: &GroupedCoefficients) -> Vec<f64> {
        (0..self.n)
            .map(|i| dot(self.row(i), beta.flat()))
            .collect()
    }

    /// Applies a row permutation: row `i` of the result is row `perm[i]`.
    pub fn permute_rows(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(Error::Shape("permutation length differs from n".into()));
        }
        let mut values = Vec::with_capacity(self.values.len());
        for &src in perm {
            values.extend_from_slice(self.row(src));
        }
        Self::new(self.n, self.g, self.p, values)
    }

    pub(crate) fn check_response(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.n {
            return Err(Error::Shape(format!(
                "response has {} entries, design has {} rows",
                y.len(),
                self.n
            )));
        }
        Ok(())
    }

    pub(crate) fn check_coefficients(&self, beta: &GroupedCoefficients) -> Result<()> {
        if beta.groups() != self.g || beta.group_size() != self.p {
            return Err(Error::Shape(format!(
                "coefficients are {}x{}, design groups are {}x{}",
                beta.groups(),
                beta.group_size(),
                self.g,
                self.p
            )));
        }
        Ok(())
    }
}

/// Coefficient vector of length `g * p`, viewed group by group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedCoefficients {
    g: usize,
    p: usize,
    values: Vec<f64>,
}

impl GroupedCoefficients {
    pub fn zeros(g: usize, p: usize) -> Self {
        Self {
            g,
            p,
            values: vec![0.0; g * p],
        }
    }

    pub fn from_flat(g: usize, p: usize, values: Vec<f64>) -> Result<Self> {
        if g == 0 || p == 0 {
            return Err(Error::Shape("g and p must be positive".into()));
        }
        if values.len() != g * p {
            return Err(Error::Shape(format!(
                "expected {} coefficients, got {}",
                g * p,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("coefficients"));
        }
        Ok(Self { g, p, values })
    }

    pub fn from_groups(groups: &[Vec<f64>]) -> Result<Self> {
        let g = groups.len();
        let p = groups.first().map_or(0, Vec::len);
        if groups.iter().any(|grp| grp.len() != p) {
            return Err(Error::Shape("groups have unequal lengths".into()));
        }
        Self::from_flat(g, p, groups.concat())
    }

    pub fn groups(&self) -> usize {
        self.g
    }

    pub fn group_size(&self) -> usize {
        self.p
    }

    pub fn group(&self, j: usize) -> &[f64] {
        &self.values[j * self.p..(j + 1) * self.p]
    }

    pub fn group_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.values[j * self.p..(j + 1) * self.p]
    }

    pub fn set_group(&mut self, j: usize, values: &[f64]) {
        self.group_mut(j).copy_from_slice(values);
    }

    pub fn flat(&self) -> &[f64] {
        &self.values
    }

    pub fn group_norm(&self, j: usize) -> f64 {
        norm2(self.group(j))
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            g: self.g,
            p: self.p,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }
}

/// Adaptive weight of one group. A pilot group that vanished gets
/// `Infinite`, which pins the group at zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GroupWeight {
    Finite(f64),
    Infinite,
}

impl GroupWeight {
    pub fn is_infinite(self) -> bool {
        matches!(self, GroupWeight::Infinite)
    }

    pub fn as_f64(self) -> f64 {
        match self {
            GroupWeight::Finite(w) => w,
            GroupWeight::Infinite => f64::INFINITY,
        }
    }

    /// `lambda * w * norm` with the convention `inf * 0 = 0`.
    fn penalty(self, lambda: f64, norm: f64) -> f64 {
        match self {
            GroupWeight::Finite(w) => lambda * w * norm,
            GroupWeight::Infinite if norm == 0.0 => 0.0,
            GroupWeight::Infinite => f64::INFINITY,
        }
    }
}

impl fmt::Display for GroupWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupWeight::Finite(w) => write!(f, "{w:.17e}"),
            GroupWeight::Infinite => f.write_str("inf"),
        }
    }
}

/// Quantile index, tuning parameters and per-group adaptive weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyConfig {
    pub tau: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub gamma: f64,
    pub weights: Vec<GroupWeight>,
}

impl PenaltyConfig {
    pub fn new(
        tau: f64,
        lambda1: f64,
        lambda2: f64,
        gamma: f64,
        weights: Vec<GroupWeight>,
    ) -> Result<Self> {
        let config = Self {
            tau,
            lambda1,
            lambda2,
            gamma,
            weights,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        check_tau(self.tau)?;
        if !(self.lambda1 >= 0.0 && self.lambda1.is_finite()) {
            return Err(invalid("lambda1", format!("must be >= 0, got {}", self.lambda1)));
        }
        if !(self.lambda2 >= 0.0 && self.lambda2.is_finite()) {
            return Err(invalid("lambda2", format!("must be >= 0, got {}", self.lambda2)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(invalid("gamma", format!("must be > 0, got {}", self.gamma)));
        }
        for w in &self.weights {
            if let GroupWeight::Finite(v) = w {
                if !(*v >= 0.0 && v.is_finite()) {
                    return Err(invalid("weights", format!("finite weights must be >= 0, got {v}")));
                }
            }
        }
        Ok(())
    }

    pub fn with_lambdas(&self, lambda1: f64, lambda2: f64) -> Self {
        Self {
            lambda1,
            lambda2,
            ..self.clone()
        }
    }
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(invalid("tau", format!("must lie in (0, 1), got {tau}")))
    }
}

/// Outcome of a penalized fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub coefficients: GroupedCoefficients,
    /// Zero-based indices of the nonzero groups, ascending.
    pub active_set: BTreeSet<usize>,
    pub iterations: usize,
    pub converged: bool,
    pub objective_penalized: f64,
    pub objective_quantile: f64,
}

/// The check loss `u * (tau - 1{u < 0})`.
#[inline]
pub fn check_loss(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        (tau - 1.0) * u
    } else {
        tau * u
    }
}

/// Sum of check losses of the residuals `y - X beta`.
pub fn objective_quantile(
    design: &GroupedDesign,
    y: &[f64],
    beta: &GroupedCoefficients,
    tau: f64,
) -> Result<f64> {
    design.check_response(y)?;
    design.check_coefficients(beta)?;
    Ok(quantile_loss_unchecked(design, y, beta.flat(), tau))
}

pub(crate) fn quantile_loss_unchecked(
    design: &GroupedDesign,
    y: &[f64],
    beta: &[f64],
    tau: f64,
) -> f64 {
    y.iter()
        .enumerate()
        .map(|(i, &yi)| check_loss(yi - dot(design.row(i), beta), tau))
        .sum()
}

/// Quantile objective plus `lambda1 * sum_j w_j ||beta_j|| + lambda2 * sum_j ||beta_j||^2`.
///
/// Returns `+inf` when a group with infinite weight is nonzero.
pub fn objective_penalized(
    design: &GroupedDesign,
    y: &[f64],
    beta: &GroupedCoefficients,
    config: &PenaltyConfig,
) -> Result<f64> {
    let loss = objective_quantile(design, y, beta, config.tau)?;
    Ok(loss + penalty(beta, config)?)
}

pub(crate) fn penalty(beta: &GroupedCoefficients, config: &PenaltyConfig) -> Result<f64> {
    if config.weights.len() != beta.groups() {
        return Err(Error::Shape(format!(
            "{} weights for {} groups",
            config.weights.len(),
            beta.groups()
        )));
    }
    let mut total = 0.0;
    for (j, w) in config.weights.iter().enumerate() {
        let norm = beta.group_norm(j);
        total += w.penalty(config.lambda1, norm) + config.lambda2 * norm * norm;
    }
    Ok(total)
}

/// Groups whose Euclidean norm exceeds `eta`.
pub fn active_set(beta: &GroupedCoefficients, eta: f64) -> BTreeSet<usize> {
    (0..beta.groups())
        .filter(|&j| beta.group_norm(j) > eta)
        .collect()
}

/// Closed form of `int_0^y (1{x <= v} - 1{x < 0}) dv`.
///
/// The strict `1{x < 0}` matches the linear term of the identity, which
/// keeps it exact at `x = 0`; for `x != 0` it equals the `1{x <= 0}` form.
pub fn knight_integral(x: f64, y: f64) -> f64 {
    if y >= 0.0 {
        if x >= 0.0 {
            (y - x).max(0.0)
        } else {
            0.0
        }
    } else if x < 0.0 {
        (x - y).max(0.0)
    } else {
        0.0
    }
}

/// Absolute defect of Knight's identity
/// `rho(x - y) - rho(x) = y (1{x < 0} - tau) + int_0^y (1{x <= v} - 1{x < 0}) dv`.
pub fn knight_identity_residual(x: f64, y: f64, tau: f64) -> f64 {
    let lhs = check_loss(x - y, tau) - check_loss(x, tau);
    let indicator = if x < 0.0 { 1.0 } else { 0.0 };
    let rhs = y * (indicator - tau) + knight_integral(x, y);
    (lhs - rhs).abs()
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm2(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}
