//! Tuning-parameter selection: the BIC-type criterion, the complexity
//! inflation sequence `S_n`, the default lambda families and an
//! exhaustive grid search.

use std::cmp::Ordering;

use crate::error::{invalid, Error, Result};
use crate::model::{
    check_tau, objective_quantile, FitResult, GroupedCoefficients, GroupedDesign, PenaltyConfig,
    ZERO_TOL,
};
use crate::par;
use crate::pilot::adaptive_weights;
use crate::solver::{fit_enet, SolverOptions};

/// Multipliers applied to the lambda families when no grid is given.
pub const DEFAULT_CONSTANTS: [f64; 8] = [0.01, 0.05, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0];

/// Adaptive-weight exponent used for ungrouped designs (`p = 1`).
pub const UNGROUPED_GAMMA: f64 = 1.225;

#[derive(Debug, Clone, PartialEq)]
pub struct TuningGrid {
    pub lambda1_values: Vec<f64>,
    pub lambda2_values: Vec<f64>,
    pub gamma: f64,
    pub sn: f64,
}

impl TuningGrid {
    /// Sorts and deduplicates both axes and checks positivity.
    /// Returns the grid and the number of duplicates removed.
    pub fn new(lambda1: Vec<f64>, lambda2: Vec<f64>, gamma: f64, sn: f64) -> Result<(Self, usize)> {
        let (l1, d1) = normalize_axis(lambda1, "lambda1")?;
        let (l2, d2) = normalize_axis(lambda2, "lambda2")?;
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(invalid("gamma", "must be positive"));
        }
        if !(sn > 0.0 && sn.is_finite()) {
            return Err(invalid("Sn", "must be positive"));
        }
        Ok((
            Self {
                lambda1_values: l1,
                lambda2_values: l2,
                gamma,
                sn,
            },
            d1 + d2,
        ))
    }

    pub fn cells(&self) -> Vec<(f64, f64)> {
        self.lambda1_values
            .iter()
            .flat_map(|&l1| self.lambda2_values.iter().map(move |&l2| (l1, l2)))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.lambda1_values.len() * self.lambda2_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn normalize_axis(mut values: Vec<f64>, name: &'static str) -> Result<(Vec<f64>, usize)> {
    if values.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(invalid(name, "grid values must be positive and finite"));
    }
    values.sort_by(f64::total_cmp);
    let before = values.len();
    values.dedup();
    let removed = before - values.len();
    Ok((values, removed))
}

/// Criterion value of one fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bic {
    pub value: f64,
    /// Set when the quantile objective was zero and the log argument was
    /// replaced by `n * f64::EPSILON`.
    pub log_guarded: bool,
}

/// `log(G_n / n) + (log n / n) * S_n * |A|`.
pub fn bic_score(
    fit: &FitResult,
    design: &GroupedDesign,
    y: &[f64],
    tau: f64,
    sn: f64,
) -> Result<Bic> {
    let n = design.n();
    if n < 2 {
        return Err(invalid("n", "criterion needs at least two observations"));
    }
    let loss = objective_quantile(design, y, &fit.coefficients, tau)?;
    Ok(bic_from_parts(loss, n, fit.active_set.len(), sn))
}

pub fn bic_from_parts(loss: f64, n: usize, active: usize, sn: f64) -> Bic {
    let nf = n as f64;
    let (loss, log_guarded) = if loss > 0.0 {
        (loss, false)
    } else {
        (f64::EPSILON * nf, true)
    };
    Bic {
        value: (loss / nf).ln() + nf.ln() / nf * sn * active as f64,
        log_guarded,
    }
}

/// `max(1, g / log n)`: one in the fixed- or slowly-growing-`g` regime,
/// growing like `g / log n` otherwise.
pub fn compute_sn(n: usize, g: usize) -> f64 {
    let ln = (n.max(2) as f64).ln();
    (g as f64 / ln).max(1.0)
}

/// `gamma = max(1.225, 2c/(1-c) + 2/n)` with `c = log g / log n`.
pub fn default_gamma(n: usize, g: usize, p: usize) -> Result<f64> {
    if p == 1 {
        return Ok(UNGROUPED_GAMMA);
    }
    let c = growth_exponent(n, g)?;
    Ok(UNGROUPED_GAMMA.max(2.0 * c / (1.0 - c) + 2.0 / n as f64))
}

fn growth_exponent(n: usize, g: usize) -> Result<f64> {
    if n < 2 || g == 0 || g >= n {
        return Err(invalid("g", format!("default grid needs 1 <= g < n (got g={g}, n={n})")));
    }
    Ok((g as f64).ln() / (n as f64).ln())
}

/// Lambda families of the simulation study evaluated on
/// [`DEFAULT_CONSTANTS`].
///
/// Grouped (`p > 1`):
/// `lambda1 = c2 c (sigma + c) g n^{((1-c)/2 + 1 - (1-c)(1+gamma)/2)/2}`,
/// `lambda2 = c3 c (sigma + c) n^{1/2 - c/2 - 1/n}`.
/// Ungrouped (`p = 1`): `lambda1 = n^{1 - gamma/2 + 1/n}` (single value),
/// `lambda2 = c1 n^{2/5}`.
pub fn default_grid(n: usize, g: usize, p: usize, sigma_hint: f64) -> Result<TuningGrid> {
    default_grid_with(n, g, p, sigma_hint, &DEFAULT_CONSTANTS)
}

pub fn default_grid_with(
    n: usize,
    g: usize,
    p: usize,
    sigma_hint: f64,
    constants: &[f64],
) -> Result<TuningGrid> {
    if p == 0 {
        return Err(invalid("p", "must be positive"));
    }
    let c = growth_exponent(n, g)?;
    let nf = n as f64;
    let gamma = default_gamma(n, g, p)?;
    let sn = compute_sn(n, g);
    if p == 1 {
        let lambda1 = nf.powf(1.0 - gamma / 2.0 + 1.0 / nf);
        let base2 = nf.powf(0.4);
        let l2 = constants.iter().map(|k| k * base2).collect();
        return TuningGrid::new(vec![lambda1], l2, gamma, sn).map(|(grid, _)| grid);
    }
    if !(sigma_hint >= 0.0 && sigma_hint.is_finite()) {
        return Err(invalid("sigma_hint", "must be finite and nonnegative"));
    }
    if c == 0.0 {
        return Err(invalid("g", "grouped lambda families vanish for g = 1"));
    }
    let exponent1 = ((1.0 - c) / 2.0 + 1.0 - (1.0 - c) * (1.0 + gamma) / 2.0) / 2.0;
    let base1 = c * (sigma_hint + c) * g as f64 * nf.powf(exponent1);
    let base2 = c * (sigma_hint + c) * nf.powf(0.5 - c / 2.0 - 1.0 / nf);
    let l1 = constants.iter().map(|k| k * base1).collect();
    let l2 = constants.iter().map(|k| k * base2).collect();
    TuningGrid::new(l1, l2, gamma, sn).map(|(grid, _)| grid)
}

/// One scored grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct BicRecord {
    pub lambda1: f64,
    pub lambda2: f64,
    pub bic: f64,
    pub active_count: usize,
    pub converged: bool,
    pub log_guarded: bool,
    /// Solver failure message; such cells carry `bic = +inf`.
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GridSearchOutcome {
    pub best: FitResult,
    pub best_config: PenaltyConfig,
    pub best_index: usize,
    pub records: Vec<BicRecord>,
}

/// Fits every `(lambda1, lambda2)` cell from the shared pilot and returns
/// the cell minimizing the criterion.
///
/// Ties go to the converged fit, then the larger `lambda1`, then the larger
/// `lambda2`. Cells run in parallel when the `parallel` feature is on; the
/// winner does not depend on evaluation order.
pub fn grid_search(
    design: &GroupedDesign,
    y: &[f64],
    tau: f64,
    grid: &TuningGrid,
    pilot: &GroupedCoefficients,
    options: &SolverOptions,
) -> Result<GridSearchOutcome> {
    check_tau(tau)?;
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let weights = adaptive_weights(pilot, grid.gamma, ZERO_TOL);
    let base = PenaltyConfig::new(tau, 0.0, 0.0, grid.gamma, weights)?;
    let cells = grid.cells();

    let fits: Vec<(BicRecord, Option<FitResult>)> = par::map_indexed(cells.len(), |idx| {
        let (l1, l2) = cells[idx];
        let config = base.with_lambdas(l1, l2);
        match fit_enet(design, y, &config, pilot, options)
            .and_then(|fit| bic_score(&fit, design, y, tau, grid.sn).map(|bic| (fit, bic)))
        {
            Ok((fit, bic)) => (
                BicRecord {
                    lambda1: l1,
                    lambda2: l2,
                    bic: bic.value,
                    active_count: fit.active_set.len(),
                    converged: fit.converged,
                    log_guarded: bic.log_guarded,
                    error: None,
                },
                Some(fit),
            ),
            Err(e) => (
                BicRecord {
                    lambda1: l1,
                    lambda2: l2,
                    bic: f64::INFINITY,
                    active_count: 0,
                    converged: false,
                    log_guarded: false,
                    error: Some(e.to_string()),
                },
                None,
            ),
        }
    });

    let best_index = (0..fits.len())
        .filter(|&i| fits[i].1.is_some())
        .min_by(|&a, &b| compare_records(&fits[a].0, &fits[b].0))
        .ok_or_else(|| {
            Error::LinearProgram(format!(
                "every grid cell failed: {}",
                fits[0].0.error.clone().unwrap_or_default()
            ))
        })?;

    let (records, fits): (Vec<_>, Vec<_>) = fits.into_iter().unzip();
    let best = fits
        .into_iter()
        .nth(best_index)
        .flatten()
        .expect("winner has a fit");
    let (l1, l2) = cells[best_index];
    Ok(GridSearchOutcome {
        best,
        best_config: base.with_lambdas(l1, l2),
        best_index,
        records,
    })
}

/// Total order used to pick the winner: smaller criterion first, then
/// converged, then larger `lambda1`, then larger `lambda2`.
pub fn compare_records(a: &BicRecord, b: &BicRecord) -> Ordering {
    a.bic
        .total_cmp(&b.bic)
        .then_with(|| b.converged.cmp(&a.converged))
        .then_with(|| b.lambda1.total_cmp(&a.lambda1))
        .then_with(|| b.lambda2.total_cmp(&a.lambda2))
}

/// Fraction of standardized responses strictly below zero, clamped to
/// `[1/n, 1 - 1/n]`.
pub fn estimate_tau(y: &[f64]) -> Result<f64> {
    let n = y.len();
    if n < 2 {
        return Err(invalid("y", "need at least two observations"));
    }
    let nf = n as f64;
    let mean = y.iter().sum::<f64>() / nf;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let sd = var.sqrt();
    if !(sd > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let below = y.iter().filter(|v| (*v - mean) / sd < 0.0).count();
    Ok((below as f64 / nf).clamp(1.0 / nf, 1.0 - 1.0 / nf))
}

/// Sample standard deviation (denominator `n - 1`).
pub fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt()
}
