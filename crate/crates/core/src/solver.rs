//! Block-update algorithm for the adaptive elastic-net group quantile
//! estimator, and an a-posteriori KKT certificate.
//!
//! Each block update solves the group's stationarity equation with the
//! residual signs frozen at the reduced predictor `X_{i,-j} beta_{-j}`:
//!
//! ```text
//! S_j     = sum_i X_{i,j} (tau - 1{Y_i < X_{i,-j}' beta_{-j}})
//! beta_j  = 0                                              if |S_jk| < lambda1 w_j for all k
//! beta_j  = S_j / (2 lambda2 + 2 lambda1 lambda2 w_j / (||S_j|| - lambda1 w_j))   otherwise
//! ```

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::model::{
    active_set, dot, norm2, objective_penalized, quantile_loss_unchecked, FitResult,
    GroupWeight, GroupedCoefficients, GroupedDesign, PenaltyConfig, ZERO_TOL,
};

/// Whether the updates within one sweep read the previous iterate
/// (`Jacobi`) or the freshest values (`GaussSeidel`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SweepMode {
    #[default]
    Jacobi,
    GaussSeidel,
}

impl std::str::FromStr for SweepMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "jacobi" => Ok(SweepMode::Jacobi),
            "gauss-seidel" | "gauss_seidel" => Ok(SweepMode::GaussSeidel),
            other => Err(format!("unknown sweep mode `{other}` (expected jacobi or gauss-seidel)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Stop once `||beta^(k) - beta^(k-1)||_2 < epsilon`.
    pub epsilon: f64,
    pub max_iters: usize,
    pub sweep_mode: SweepMode,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            max_iters: 10_000,
            sweep_mode: SweepMode::Jacobi,
        }
    }
}

/// Consecutive cycle detections before the fit is abandoned.
const CYCLE_PATIENCE: usize = 10;

/// Longest cycle period that is detected is `CYCLE_WINDOW + 1`.
const CYCLE_WINDOW: usize = 15;

/// Score of group `j` with the group itself removed from the predictor:
/// `sum_i X_{i,j} (tau - 1{Y_i < X_{i,-j}' beta_{-j}})`.
pub fn group_score(
    design: &GroupedDesign,
    y: &[f64],
    beta: &GroupedCoefficients,
    j: usize,
    tau: f64,
) -> Result<Vec<f64>> {
    design.check_response(y)?;
    design.check_coefficients(beta)?;
    if j >= design.groups() {
        return Err(Error::Shape(format!("group {j} out of range")));
    }
    let fitted = design.predict(beta);
    Ok(score_from_fitted(design, y, beta, &fitted, j, tau))
}

fn score_from_fitted(
    design: &GroupedDesign,
    y: &[f64],
    beta: &GroupedCoefficients,
    fitted: &[f64],
    j: usize,
    tau: f64,
) -> Vec<f64> {
    let p = design.group_size();
    let bj = beta.group(j);
    let mut score = vec![0.0; p];
    for i in 0..design.n() {
        let xij = design.row_group(i, j);
        let reduced = fitted[i] - dot(xij, bj);
        let coef = if y[i] < reduced { tau - 1.0 } else { tau };
        for (s, x) in score.iter_mut().zip(xij) {
            *s += coef * x;
        }
    }
    score
}

/// Closed-form group update from a score vector.
pub fn group_update(score: &[f64], lambda1: f64, lambda2: f64, weight: GroupWeight) -> Result<Vec<f64>> {
    let zero = vec![0.0; score.len()];
    let w = match weight {
        GroupWeight::Infinite => return Ok(zero),
        GroupWeight::Finite(w) => w,
    };
    let threshold = lambda1 * w;
    let norm = norm2(score);
    if score.iter().all(|s| s.abs() < threshold) || norm <= threshold {
        return Ok(zero);
    }
    if lambda2 <= 0.0 {
        return Err(Error::ZeroLambda2);
    }
    // S (||S|| - l1 w) / (2 l2 ||S||), the printed denominator after clearing fractions.
    let factor = (norm - threshold) / (2.0 * lambda2 * norm);
    Ok(score.iter().map(|s| s * factor).collect())
}

/// Runs block sweeps from `beta_init` until the iterate moves less than
/// `epsilon`. Non-convergence is reported through `FitResult::converged`.
pub fn fit_enet(
    design: &GroupedDesign,
    y: &[f64],
    config: &PenaltyConfig,
    beta_init: &GroupedCoefficients,
    options: &SolverOptions,
) -> Result<FitResult> {
    design.check_response(y)?;
    design.check_coefficients(beta_init)?;
    config.validate()?;
    if config.weights.len() != design.groups() {
        return Err(Error::Shape(format!(
            "{} weights for {} groups",
            config.weights.len(),
            design.groups()
        )));
    }
    if config.lambda2 <= 0.0 {
        return Err(Error::ZeroLambda2);
    }
    if !(options.epsilon > 0.0) || options.max_iters == 0 {
        return Err(crate::error::invalid("solver options", "epsilon > 0 and max_iters >= 1 required"));
    }

    // Recent iterates, newest last, for cycle detection.
    let mut history: VecDeque<GroupedCoefficients> = VecDeque::with_capacity(CYCLE_WINDOW);
    let mut prev = beta_init.clone();
    let mut cycle_hits = 0;
    let mut converged = false;
    let mut iterations = 0;
    let mut current = beta_init.clone();

    while iterations < options.max_iters {
        iterations += 1;
        current = sweep(design, y, config, &prev, options.sweep_mode)?;
        if current.distance(&prev) < options.epsilon {
            converged = true;
            break;
        }
        // period >= 2: some older iterate reappears
        let period = history
            .iter()
            .rev()
            .position(|old| current.distance(old) < options.epsilon)
            .map(|back| back + 2);
        match period {
            Some(period) => {
                cycle_hits += 1;
                if cycle_hits >= CYCLE_PATIENCE {
                    current = lowest_objective(design, y, config, &history, &prev, &current, period)?;
                    break;
                }
            }
            None => cycle_hits = 0,
        }
        if history.len() == CYCLE_WINDOW {
            history.pop_front();
        }
        history.push_back(std::mem::replace(&mut prev, current.clone()));
    }

    finish(design, y, config, current, iterations, converged)
}

/// The member of the detected cycle with the smallest penalized objective;
/// ties keep the most recent iterate.
fn lowest_objective(
    design: &GroupedDesign,
    y: &[f64],
    config: &PenaltyConfig,
    history: &VecDeque<GroupedCoefficients>,
    prev: &GroupedCoefficients,
    current: &GroupedCoefficients,
    period: usize,
) -> Result<GroupedCoefficients> {
    let members = std::iter::once(current)
        .chain(std::iter::once(prev))
        .chain(history.iter().rev())
        .take(period);
    let mut best = current;
    let mut best_value = objective_penalized(design, y, current, config)?;
    for candidate in members.skip(1) {
        let value = objective_penalized(design, y, candidate, config)?;
        if value < best_value {
            best = candidate;
            best_value = value;
        }
    }
    Ok(best.clone())
}

/// One pass over all groups.
pub fn sweep(
    design: &GroupedDesign,
    y: &[f64],
    config: &PenaltyConfig,
    beta: &GroupedCoefficients,
    mode: SweepMode,
) -> Result<GroupedCoefficients> {
    let mut fitted = design.predict(beta);
    let mut next = beta.clone();
    for j in 0..design.groups() {
        let source = match mode {
            SweepMode::Jacobi => beta,
            SweepMode::GaussSeidel => &next,
        };
        let score = score_from_fitted(design, y, source, &fitted, j, config.tau);
        let update = group_update(&score, config.lambda1, config.lambda2, config.weights[j])?;
        if mode == SweepMode::GaussSeidel {
            let old = next.group(j);
            for (i, f) in fitted.iter_mut().enumerate() {
                let xij = design.row_group(i, j);
                *f += xij
                    .iter()
                    .zip(update.iter().zip(old))
                    .map(|(x, (new, old))| x * (new - old))
                    .sum::<f64>();
            }
        }
        next.set_group(j, &update);
    }
    Ok(next)
}

fn finish(
    design: &GroupedDesign,
    y: &[f64],
    config: &PenaltyConfig,
    mut beta: GroupedCoefficients,
    iterations: usize,
    converged: bool,
) -> Result<FitResult> {
    // Groups below the zero tolerance are snapped to exact zeros so that
    // the active set and the stored coefficients agree.
    for j in 0..beta.groups() {
        if beta.group_norm(j) <= ZERO_TOL {
            beta.group_mut(j).fill(0.0);
        }
    }
    let objective_quantile = quantile_loss_unchecked(design, y, beta.flat(), config.tau);
    let objective_penalized = objective_penalized(design, y, &beta, config)?;
    Ok(FitResult {
        active_set: active_set(&beta, ZERO_TOL),
        coefficients: beta,
        iterations,
        converged,
        objective_penalized,
        objective_quantile,
    })
}

/// Per-group KKT diagnostics of a fit.
#[derive(Debug, Clone, PartialEq)]
pub struct KktReport {
    pub groups: Vec<GroupKkt>,
    /// `n * max|X|`; every residual and slack below is divided by it.
    pub scale: f64,
    pub tol: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GroupKkt {
    /// Stationarity residual of a nonzero group (should vanish).
    Active { group: usize, residual: Vec<f64>, max_abs: f64 },
    /// Subgradient slack `lambda1 w_j - |score_k|` of a zero group
    /// (should be nonnegative).
    Inactive { group: usize, slack: Vec<f64>, min: f64 },
}

impl GroupKkt {
    pub fn group(&self) -> usize {
        match self {
            GroupKkt::Active { group, .. } | GroupKkt::Inactive { group, .. } => *group,
        }
    }

    pub fn passes(&self, tol: f64) -> bool {
        match self {
            GroupKkt::Active { max_abs, .. } => *max_abs <= tol,
            GroupKkt::Inactive { min, .. } => *min >= -tol,
        }
    }
}

/// Observations whose residual is within this (relative) distance of zero
/// sit on a kink of the check loss and may take any subgradient value.
const KINK_TOL: f64 = 1e-9;

/// Evaluates the stationarity equalities of active groups and the
/// componentwise subgradient bounds of inactive groups, using the full
/// predictor `X_i' beta`.
///
/// Observations sitting exactly on a kink (zero residual) contribute the
/// interval `X_{i,k} [tau - 1, tau]` instead of a single value, and the
/// reported residual is the distance from zero to the reachable interval.
pub fn kkt_check(
    design: &GroupedDesign,
    y: &[f64],
    fit: &FitResult,
    config: &PenaltyConfig,
    tol: f64,
) -> Result<KktReport> {
    design.check_response(y)?;
    design.check_coefficients(&fit.coefficients)?;
    if config.weights.len() != design.groups() {
        return Err(Error::Shape("weight count differs from group count".into()));
    }
    let beta = &fit.coefficients;
    let p = design.group_size();
    let tau = config.tau;
    let fitted = design.predict(beta);
    let scale = (design.n() as f64 * design.max_abs()).max(f64::MIN_POSITIVE);

    let mut groups = Vec::with_capacity(design.groups());
    for j in 0..design.groups() {
        // score_k ranges over [lo_k, hi_k] once kink observations are freed
        let mut lo = vec![0.0; p];
        let mut hi = vec![0.0; p];
        for i in 0..design.n() {
            let r = y[i] - fitted[i];
            let xij = design.row_group(i, j);
            if r.abs() <= KINK_TOL * (1.0 + y[i].abs()) {
                for k in 0..p {
                    let (a, b) = ((tau - 1.0) * xij[k], tau * xij[k]);
                    lo[k] += a.min(b);
                    hi[k] += a.max(b);
                }
            } else {
                let coef = if r < 0.0 { tau - 1.0 } else { tau };
                for k in 0..p {
                    lo[k] += coef * xij[k];
                    hi[k] += coef * xij[k];
                }
            }
        }
        let bj = beta.group(j);
        let norm = norm2(bj);
        if fit.active_set.contains(&j) {
            let w = config.weights[j].as_f64();
            let residual: Vec<f64> = (0..p)
                .map(|k| {
                    let target = 2.0 * config.lambda2 * bj[k] + config.lambda1 * w * bj[k] / norm;
                    distance_to_interval(target, lo[k], hi[k]) / scale
                })
                .collect();
            let max_abs = residual.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            groups.push(GroupKkt::Active { group: j, residual, max_abs });
        } else {
            let bound = config.lambda1 * config.weights[j].as_f64();
            let slack: Vec<f64> = (0..p)
                .map(|k| {
                    let centre = 2.0 * config.lambda2 * bj[k];
                    let excess = distance_to_interval(centre, lo[k], hi[k]);
                    if bound.is_infinite() {
                        f64::INFINITY
                    } else {
                        (bound - excess) / scale
                    }
                })
                .collect();
            let min = slack.iter().copied().fold(f64::INFINITY, f64::min);
            groups.push(GroupKkt::Inactive { group: j, slack, min });
        }
    }
    let pass = groups.iter().all(|g| g.passes(tol));
    Ok(KktReport { groups, scale, tol, pass })
}

/// `|value - clamp(value, lo, hi)|`: zero when the interval reaches `value`.
fn distance_to_interval(value: f64, lo: f64, hi: f64) -> f64 {
    if value < lo {
        lo - value
    } else if value > hi {
        value - hi
    } else {
        0.0
    }
}
