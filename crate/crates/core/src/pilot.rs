//! Unpenalized group quantile estimator and the adaptive weights built
//! from it.
//!
//! The estimator minimizes the sum of check losses, a linear program:
//!
//! ```text
//! min  sum_i tau * u_i + (1 - tau) * v_i
//! s.t. X_i beta + u_i - v_i = y_i,   u, v >= 0,   beta free
//! ```
//!
//! The simplex returns a vertex, so (for a full-rank design) at least
//! `r_n` residuals are zero at the returned solution. A vertex polish step
//! re-solves those interpolation equations in double precision.

use std::time::Duration;

use log::warn;
use microlp::{ComparisonOp, OptimizationDirection, Problem, SolutionStatus};
use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::model::{
    check_tau, quantile_loss_unchecked, GroupWeight, GroupedCoefficients, GroupedDesign,
};

#[derive(Debug, Clone, PartialEq)]
pub struct PilotOptions {
    /// Relative objective tolerance accepted by the vertex polish.
    pub objective_tol: f64,
    /// Wall-clock budget for the simplex; `None` means unlimited.
    pub time_limit: Option<Duration>,
}

impl Default for PilotOptions {
    fn default() -> Self {
        Self {
            objective_tol: 1e-8,
            time_limit: None,
        }
    }
}

/// Minimizes the quantile objective over all `g * p` coefficients.
pub fn fit_pilot(
    design: &GroupedDesign,
    y: &[f64],
    tau: f64,
    options: &PilotOptions,
) -> Result<GroupedCoefficients> {
    design.check_response(y)?;
    check_tau(tau)?;
    if !(options.objective_tol > 0.0) {
        return Err(invalid("objective_tol", "must be positive"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("response"));
    }
    warn_if_ill_posed(design);

    let n = design.n();
    let r = design.ncols();
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let beta: Vec<_> = (0..r)
        .map(|_| lp.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY)))
        .collect();
    for i in 0..n {
        let u = lp.add_var(tau, (0.0, f64::INFINITY));
        let v = lp.add_var(1.0 - tau, (0.0, f64::INFINITY));
        let mut terms: Vec<_> = design
            .row(i)
            .iter()
            .zip(&beta)
            .filter(|(x, _)| **x != 0.0)
            .map(|(x, b)| (*b, *x))
            .collect();
        terms.push((u, 1.0));
        terms.push((v, -1.0));
        lp.add_constraint(terms.as_slice(), ComparisonOp::Eq, y[i]);
    }
    if let Some(limit) = options.time_limit {
        lp.set_time_limit(limit);
    }

    let outcome = lp.solve().map_err(|e| Error::LinearProgram(e.to_string()))?;
    let solution = match outcome.into_solution() {
        Ok(s) => s,
        Err(_) => {
            let best = GroupedCoefficients::zeros(design.groups(), design.group_size());
            let objective = quantile_loss_unchecked(design, y, best.flat(), tau);
            return Err(Error::PilotNonConvergence { best, objective });
        }
    };
    let raw: Vec<f64> = beta.iter().map(|b| solution.var_value(*b)).collect();
    let raw = GroupedCoefficients::from_flat(design.groups(), design.group_size(), raw)?;
    if solution.status() != SolutionStatus::Optimal {
        let objective = quantile_loss_unchecked(design, y, raw.flat(), tau);
        return Err(Error::PilotNonConvergence { best: raw, objective });
    }

    Ok(polish_vertex(design, y, tau, raw, options.objective_tol))
}

/// Re-solves `X_B beta = y_B` on the `r` smallest residuals and keeps the
/// result when it does not increase the objective beyond tolerance.
fn polish_vertex(
    design: &GroupedDesign,
    y: &[f64],
    tau: f64,
    beta: GroupedCoefficients,
    tol: f64,
) -> GroupedCoefficients {
    let n = design.n();
    let r = design.ncols();
    if r > n {
        return beta;
    }
    let fitted = design.predict(&beta);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        (y[a] - fitted[a])
            .abs()
            .total_cmp(&(y[b] - fitted[b]).abs())
            .then(a.cmp(&b))
    });
    let basis = &order[..r];
    let a = DMatrix::from_fn(r, r, |row, col| design.get(basis[row], col));
    let rhs = DVector::from_iterator(r, basis.iter().map(|&i| y[i]));
    let Some(exact) = a.lu().solve(&rhs) else {
        return beta;
    };
    if exact.iter().any(|v| !v.is_finite()) {
        return beta;
    }
    let before = quantile_loss_unchecked(design, y, beta.flat(), tau);
    let after = quantile_loss_unchecked(design, y, exact.as_slice(), tau);
    if after <= before + tol * (1.0 + before.abs()) {
        GroupedCoefficients::from_flat(design.groups(), design.group_size(), exact.as_slice().to_vec())
            .unwrap_or(beta)
    } else {
        beta
    }
}

fn warn_if_ill_posed(design: &GroupedDesign) {
    let n = design.n();
    let r = design.ncols();
    if r >= n {
        warn!("pilot fit with r_n = {r} >= n = {n}: minimizer is not unique");
        return;
    }
    let x = DMatrix::from_row_slice(n, r, design.values());
    let gram = x.transpose() * &x;
    let eig = gram.symmetric_eigenvalues();
    let max = eig.max();
    let min = eig.min();
    if !(min > 0.0) || max / min > 1e12 {
        warn!("pilot design is nearly rank deficient (gram eigenvalues {min:.3e}..{max:.3e})");
    }
}

/// `w_j = ||pilot_j||^-gamma`, or `Infinite` when the pilot group norm is
/// at most `eta`.
pub fn adaptive_weights(beta_pilot: &GroupedCoefficients, gamma: f64, eta: f64) -> Vec<GroupWeight> {
    (0..beta_pilot.groups())
        .map(|j| {
            let norm = beta_pilot.group_norm(j);
            if norm > eta {
                GroupWeight::Finite(norm.powf(-gamma))
            } else {
                GroupWeight::Infinite
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ZERO_TOL;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn median_of_one_column() {
        let x = GroupedDesign::new(5, 1, 1, vec![1.0; 5]).unwrap();
        let y = [1.0, 2.0, 3.0, 4.0, 5.0];
        let beta = fit_pilot(&x, &y, 0.5, &PilotOptions::default()).unwrap();
        assert_abs_diff_eq!(beta.flat()[0], 3.0, epsilon = 1e-9);
    }

    #[test]
    fn exact_interpolation_recovered() {
        let rows = vec![
            vec![1.0, 0.2, -0.3],
            vec![0.5, 1.0, 0.7],
            vec![-0.4, 0.1, 1.2],
            vec![2.0, -1.0, 0.3],
            vec![0.3, 0.8, -0.9],
            vec![1.1, 1.4, 0.6],
        ];
        let x = GroupedDesign::from_rows(&rows, 3, 1).unwrap();
        let truth = [0.7, -1.3, 2.1];
        let y: Vec<f64> = rows
            .iter()
            .map(|r| r.iter().zip(&truth).map(|(a, b)| a * b).sum())
            .collect();
        let beta = fit_pilot(&x, &y, 0.3, &PilotOptions::default()).unwrap();
        for (b, t) in beta.flat().iter().zip(&truth) {
            assert_abs_diff_eq!(b, t, epsilon = 1e-9);
        }
        assert!(quantile_loss_unchecked(&x, &y, beta.flat(), 0.3) < 1e-9);
    }

    #[test]
    fn rejects_bad_tau_and_shapes() {
        let x = GroupedDesign::new(2, 1, 1, vec![1.0, 1.0]).unwrap();
        assert!(fit_pilot(&x, &[1.0, 2.0], 1.0, &PilotOptions::default()).is_err());
        assert!(fit_pilot(&x, &[1.0], 0.5, &PilotOptions::default()).is_err());
    }

    #[test]
    fn weight_examples() {
        let beta = GroupedCoefficients::from_groups(&[vec![1.0, 0.0], vec![0.0, 4.0], vec![0.0, 0.0]]).unwrap();
        let w = adaptive_weights(&beta, 0.5, ZERO_TOL);
        assert_eq!(w[0], GroupWeight::Finite(1.0));
        assert_eq!(w[1], GroupWeight::Finite(0.5));
        assert_eq!(w[2], GroupWeight::Infinite);
        let w = adaptive_weights(&beta, 3.7, ZERO_TOL);
        assert_eq!(w[0], GroupWeight::Finite(1.0));
    }

    proptest! {
        #[test]
        fn weights_scale_with_power_law(
            b in proptest::collection::vec(0.1..5.0f64, 6),
            c in prop_oneof![-4.0..-0.1f64, 0.1..4.0f64],
            gamma in 0.2..3.0f64,
        ) {
            let beta = GroupedCoefficients::from_flat(3, 2, b).unwrap();
            let base = adaptive_weights(&beta, gamma, ZERO_TOL);
            let scaled = adaptive_weights(&beta.scaled(c), gamma, ZERO_TOL);
            for (s, w) in scaled.iter().zip(&base) {
                let expect = c.abs().powf(-gamma) * w.as_f64();
                prop_assert!((s.as_f64() - expect).abs() <= 1e-12 * expect.abs().max(1.0));
            }
        }
    }
}
