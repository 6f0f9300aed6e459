//! Monte Carlo harness: correlated grouped designs, shifted error laws,
//! seeded replications of the full pilot / grid-search / fit pipeline and
//! the summary statistics of the simulation tables.
//!
//! Every replication owns a ChaCha8 stream: the key comes from
//! `ChaCha8Rng::seed_from_u64(base_seed)` and the stream number is the
//! replication index, so results do not depend on scheduling.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Error, Result};
use crate::model::{check_tau, GroupedCoefficients, GroupedDesign};
use crate::par;
use crate::pilot::{fit_pilot, PilotOptions};
use crate::solver::{kkt_check, SolverOptions};
use crate::tuning::{default_grid, grid_search, sample_sd, TuningGrid};

/// Base of the AR-type correlation between the latent group factors.
pub const DEFAULT_RHO: f64 = 0.6;

/// Scaled tolerance used for the per-replication KKT certificate.
pub const KKT_TOL: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ErrorLaw {
    Normal { sigma: f64 },
    Cauchy,
}

impl ErrorLaw {
    /// The law's `tau`-quantile, subtracted from raw draws so that
    /// `P[eps < 0] = tau`.
    pub fn quantile(&self, tau: f64) -> f64 {
        match *self {
            ErrorLaw::Normal { sigma } => {
                if tau == 0.5 {
                    0.0
                } else {
                    sigma * Normal::standard().inverse_cdf(tau)
                }
            }
            ErrorLaw::Cauchy => {
                if tau == 0.5 {
                    0.0
                } else {
                    (std::f64::consts::PI * (tau - 0.5)).tan()
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            ErrorLaw::Normal { sigma } if !(sigma > 0.0 && sigma.is_finite()) => {
                Err(invalid("sigma", "normal errors need sigma > 0"))
            }
            _ => Ok(()),
        }
    }
}

/// Which tuning grid a replication searches.
#[derive(Debug, Clone, PartialEq)]
pub enum GridChoice {
    /// Default lambda families with `sigma` set to the sample standard
    /// deviation of the response and the given `S_n`.
    Auto { sn: f64 },
    Fixed(TuningGrid),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationScenario {
    pub n: usize,
    pub g: usize,
    pub p: usize,
    pub true_beta: GroupedCoefficients,
    pub error_law: ErrorLaw,
    pub tau: f64,
    pub replications: usize,
    pub base_seed: u64,
    pub grid: GridChoice,
    pub rho: f64,
    pub solver: SolverOptions,
}

impl SimulationScenario {
    /// Scenario with the preset coefficients for `p`, N(0,1) errors,
    /// `tau = 0.5` and the automatic grid with `S_n = 1`.
    pub fn preset(n: usize, g: usize, p: usize, replications: usize, base_seed: u64) -> Result<Self> {
        let scenario = Self {
            n,
            g,
            p,
            true_beta: preset_beta(g, p)?,
            error_law: ErrorLaw::Normal { sigma: 1.0 },
            tau: 0.5,
            replications,
            base_seed,
            grid: GridChoice::Auto { sn: 1.0 },
            rho: DEFAULT_RHO,
            solver: SolverOptions::default(),
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.g == 0 || self.p == 0 {
            return Err(invalid("n/g/p", "need n >= 2, g >= 1, p >= 1"));
        }
        if self.replications == 0 {
            return Err(invalid("reps", "at least one replication"));
        }
        if self.true_beta.groups() != self.g || self.true_beta.group_size() != self.p {
            return Err(Error::Shape("true coefficients do not match g and p".into()));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(invalid("rho", "must lie in (0, 1)"));
        }
        check_tau(self.tau)?;
        self.error_law.validate()
    }

    /// Indices of the groups with nonzero true coefficients.
    pub fn true_support(&self) -> Vec<usize> {
        (0..self.g)
            .filter(|&j| self.true_beta.group_norm(j) > 0.0)
            .collect()
    }
}

/// First four groups of the simulation presets, remaining groups zero.
pub fn preset_beta(g: usize, p: usize) -> Result<GroupedCoefficients> {
    let head: Vec<Vec<f64>> = match p {
        1 => vec![vec![0.5], vec![1.0], vec![-1.0], vec![-1.5]],
        2 => vec![vec![0.5, 1.0], vec![1.0, 1.0], vec![-1.0, 0.0], vec![-1.5, 1.0]],
        5 => vec![
            vec![0.5, 1.0, 1.5, 1.0, 0.5],
            vec![1.0, 1.0, 1.0, 1.0, 1.0],
            vec![-1.0, 0.0, 1.0, 2.0, 1.5],
            vec![-1.5, 1.0, 0.5, 0.5, 0.5],
        ],
        _ => return Err(invalid("p", format!("no coefficient preset for p = {p} (have 1, 2, 5)"))),
    };
    if g < head.len() {
        return Err(invalid("g", "presets need at least four groups"));
    }
    let mut groups = head;
    groups.resize(g, vec![0.0; p]);
    GroupedCoefficients::from_groups(&groups)
}

/// Generator for replication `index` of a campaign seeded with `base_seed`.
pub fn replication_rng(base_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(index);
    rng
}

/// `X_{p(j-1)+k} = (Z_j + R_{p(j-1)+k}) / sqrt(2)` with
/// `Cov(Z_a, Z_b) = rho^|a-b|` and independent standard normal `R`.
pub fn gen_design<R: Rng + ?Sized>(n: usize, g: usize, p: usize, rho: f64, rng: &mut R) -> Result<GroupedDesign> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(invalid("rho", "must lie in (0, 1)"));
    }
    let cov = DMatrix::from_fn(g, g, |a, b| rho.powi((a as i32 - b as i32).abs()));
    let chol = cov.cholesky().ok_or(Error::Factorization)?;
    let l = chol.l();
    let r = g * p;
    let mut values = Vec::with_capacity(n * r);
    let mut e = vec![0.0; g];
    for _ in 0..n {
        for v in e.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let z: Vec<f64> = (0..g)
            .map(|a| (0..=a).map(|b| l[(a, b)] * e[b]).sum())
            .collect();
        for zj in &z {
            for _ in 0..p {
                let noise: f64 = rng.sample(StandardNormal);
                values.push((zj + noise) / std::f64::consts::SQRT_2);
            }
        }
    }
    GroupedDesign::new(n, g, p, values)
}

/// I.i.d. errors shifted so that their population `tau`-quantile is zero.
pub fn gen_errors<R: Rng + ?Sized>(law: ErrorLaw, n: usize, tau: f64, rng: &mut R) -> Result<Vec<f64>> {
    check_tau(tau)?;
    law.validate()?;
    let shift = law.quantile(tau);
    let draws: Vec<f64> = match law {
        ErrorLaw::Normal { sigma } => (0..n)
            .map(|_| sigma * rng.sample::<f64, _>(StandardNormal) - shift)
            .collect(),
        ErrorLaw::Cauchy => {
            let cauchy = Cauchy::new(0.0, 1.0).map_err(|_| invalid("cauchy", "bad scale"))?;
            (0..n).map(|_| cauchy.sample(rng) - shift).collect()
        }
    };
    Ok(draws)
}

/// Outcome of one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationMetrics {
    pub index: usize,
    /// True nonzero groups that were selected.
    pub correct_nonzero: usize,
    /// True zero groups that were left out.
    pub correct_zero: usize,
    /// `beta0 - beta_hat`, flattened.
    pub errors_flat: Vec<f64>,
    pub estimate: Vec<f64>,
    pub mean_abs_prediction_error: f64,
    pub active_set: Vec<usize>,
    pub exact_recovery: bool,
    pub l2_error: f64,
    pub converged: bool,
    pub iterations: usize,
    pub kkt_pass: bool,
    pub lambda1: f64,
    pub lambda2: f64,
    pub runtime_seconds: f64,
    /// Pipeline failure; the statistical fields are zero when set.
    pub failure: Option<String>,
}

impl ReplicationMetrics {
    /// Equality on everything except wall-clock time.
    pub fn same_outcome(&self, other: &Self) -> bool {
        let strip = |m: &Self| Self {
            runtime_seconds: 0.0,
            ..m.clone()
        };
        strip(self) == strip(other)
    }
}

/// Replays everything a replication computes, for callers that need the
/// data or fit itself rather than the metrics.
#[derive(Debug, Clone)]
pub struct ReplicationData {
    pub design: GroupedDesign,
    pub y: Vec<f64>,
}

/// Draws the design, errors and response for replication `index`.
pub fn replication_data(scenario: &SimulationScenario, index: usize) -> Result<ReplicationData> {
    let mut rng = replication_rng(scenario.base_seed, index as u64);
    let design = gen_design(scenario.n, scenario.g, scenario.p, scenario.rho, &mut rng)?;
    let eps = gen_errors(scenario.error_law, scenario.n, scenario.tau, &mut rng)?;
    let y = design
        .predict(&scenario.true_beta)
        .iter()
        .zip(&eps)
        .map(|(m, e)| m + e)
        .collect();
    Ok(ReplicationData { design, y })
}

/// Pure function of `(scenario, index)` apart from `runtime_seconds`.
pub fn run_replication(scenario: &SimulationScenario, index: usize) -> ReplicationMetrics {
    let start = Instant::now();
    let mut metrics = match replicate(scenario, index) {
        Ok(m) => m,
        Err(e) => ReplicationMetrics {
            index,
            correct_nonzero: 0,
            correct_zero: 0,
            errors_flat: Vec::new(),
            estimate: Vec::new(),
            mean_abs_prediction_error: f64::NAN,
            active_set: Vec::new(),
            exact_recovery: false,
            l2_error: f64::NAN,
            converged: false,
            iterations: 0,
            kkt_pass: false,
            lambda1: f64::NAN,
            lambda2: f64::NAN,
            runtime_seconds: 0.0,
            failure: Some(e.to_string()),
        },
    };
    metrics.runtime_seconds = start.elapsed().as_secs_f64();
    metrics
}

fn replicate(scenario: &SimulationScenario, index: usize) -> Result<ReplicationMetrics> {
    scenario.validate()?;
    let ReplicationData { design, y } = replication_data(scenario, index)?;
    let pilot = fit_pilot(&design, &y, scenario.tau, &PilotOptions::default())?;
    let grid = match &scenario.grid {
        GridChoice::Fixed(grid) => grid.clone(),
        GridChoice::Auto { sn } => {
            let mut grid = default_grid(scenario.n, scenario.g, scenario.p, sample_sd(&y))?;
            grid.sn = *sn;
            grid
        }
    };
    let outcome = grid_search(&design, &y, scenario.tau, &grid, &pilot, &scenario.solver)?;
    let fit = &outcome.best;
    let kkt = kkt_check(&design, &y, fit, &outcome.best_config, KKT_TOL)?;

    let truth = scenario.true_support();
    let correct_nonzero = truth.iter().filter(|j| fit.active_set.contains(j)).count();
    let correct_zero = (0..scenario.g)
        .filter(|j| !truth.contains(j) && !fit.active_set.contains(j))
        .count();
    let beta_hat = fit.coefficients.flat();
    let errors_flat: Vec<f64> = scenario
        .true_beta
        .flat()
        .iter()
        .zip(beta_hat)
        .map(|(b0, b)| b0 - b)
        .collect();
    let fitted = design.predict(&fit.coefficients);
    let mean_abs_prediction_error =
        y.iter().zip(&fitted).map(|(a, b)| (a - b).abs()).sum::<f64>() / scenario.n as f64;
    let active: Vec<usize> = fit.active_set.iter().copied().collect();

    Ok(ReplicationMetrics {
        index,
        correct_nonzero,
        correct_zero,
        l2_error: errors_flat.iter().map(|e| e * e).sum::<f64>().sqrt(),
        errors_flat,
        estimate: beta_hat.to_vec(),
        mean_abs_prediction_error,
        exact_recovery: active == truth,
        active_set: active,
        converged: fit.converged,
        iterations: fit.iterations,
        kkt_pass: kkt.pass,
        lambda1: outcome.best_config.lambda1,
        lambda2: outcome.best_config.lambda2,
        runtime_seconds: 0.0,
        failure: None,
    })
}

/// Runs every replication of a scenario on at most `jobs` threads. The
/// result is ordered by replication index and independent of `jobs`.
pub fn run_scenario(scenario: &SimulationScenario, jobs: usize) -> Result<Vec<ReplicationMetrics>> {
    scenario.validate()?;
    Ok(par::with_jobs(jobs, || {
        par::map_indexed(scenario.replications, |i| run_replication(scenario, i))
    }))
}

/// Aggregate over replications, in the layout of the simulation tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub replications: usize,
    pub failures: usize,
    pub median_correct_nonzero: f64,
    pub mean_correct_nonzero: f64,
    pub median_correct_zero: f64,
    pub mean_correct_zero: f64,
    /// Sample standard deviation of all pooled `beta0 - beta_hat` entries.
    pub sd_error: f64,
    pub mean_abs_prediction_error: f64,
    pub exact_recovery_fraction: f64,
    pub median_l2_error: f64,
    pub converged_fraction: f64,
    pub kkt_pass_fraction_converged: f64,
    pub mean_runtime_seconds: f64,
    /// Per-coordinate medians of `beta_hat` for the true nonzero groups,
    /// `(group, coordinate medians)`.
    pub median_estimates: Vec<(usize, Vec<f64>)>,
}

/// Summarizes successful replications; `truth` supplies the true support
/// and group size for the median-estimate block.
pub fn aggregate(metrics: &[ReplicationMetrics], truth: &GroupedCoefficients) -> Result<Summary> {
    if metrics.is_empty() {
        return Err(invalid("metrics", "nothing to aggregate"));
    }
    let ok: Vec<&ReplicationMetrics> = metrics.iter().filter(|m| m.failure.is_none()).collect();
    let failures = metrics.len() - ok.len();
    let count = ok.len().max(1) as f64;

    let nonzero: Vec<f64> = ok.iter().map(|m| m.correct_nonzero as f64).collect();
    let zero: Vec<f64> = ok.iter().map(|m| m.correct_zero as f64).collect();
    let pooled: Vec<f64> = ok.iter().flat_map(|m| m.errors_flat.iter().copied()).collect();
    let l2: Vec<f64> = ok.iter().map(|m| m.l2_error).collect();
    let converged: Vec<&&ReplicationMetrics> = ok.iter().filter(|m| m.converged).collect();

    let p = truth.group_size();
    let median_estimates = (0..truth.groups())
        .filter(|&j| truth.group_norm(j) > 0.0)
        .map(|j| {
            let coords = (0..p)
                .map(|k| median(&ok.iter().map(|m| m.estimate[j * p + k]).collect::<Vec<_>>()))
                .collect();
            (j, coords)
        })
        .collect();

    Ok(Summary {
        replications: metrics.len(),
        failures,
        median_correct_nonzero: median(&nonzero),
        mean_correct_nonzero: nonzero.iter().sum::<f64>() / count,
        median_correct_zero: median(&zero),
        mean_correct_zero: zero.iter().sum::<f64>() / count,
        sd_error: sample_sd(&pooled),
        mean_abs_prediction_error: ok.iter().map(|m| m.mean_abs_prediction_error).sum::<f64>() / count,
        exact_recovery_fraction: ok.iter().filter(|m| m.exact_recovery).count() as f64 / count,
        median_l2_error: median(&l2),
        converged_fraction: converged.len() as f64 / count,
        kkt_pass_fraction_converged: if converged.is_empty() {
            f64::NAN
        } else {
            converged.iter().filter(|m| m.kkt_pass).count() as f64 / converged.len() as f64
        },
        mean_runtime_seconds: metrics.iter().map(|m| m.runtime_seconds).sum::<f64>() / metrics.len() as f64,
        median_estimates,
    })
}

/// Median with the midpoint convention for even counts; NaN when empty.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn column_moments(x: &GroupedDesign, a: usize, b: usize) -> f64 {
        let n = x.n() as f64;
        let ma = (0..x.n()).map(|i| x.get(i, a)).sum::<f64>() / n;
        let mb = (0..x.n()).map(|i| x.get(i, b)).sum::<f64>() / n;
        (0..x.n()).map(|i| (x.get(i, a) - ma) * (x.get(i, b) - mb)).sum::<f64>() / (n - 1.0)
    }

    #[test]
    fn design_covariance_matches_closed_form() {
        let mut rng = replication_rng(7, 0);
        let x = gen_design(20_000, 3, 2, DEFAULT_RHO, &mut rng).unwrap();
        for k in 0..6 {
            assert_abs_diff_eq!(column_moments(&x, k, k), 1.0, epsilon = 0.05);
        }
        assert_abs_diff_eq!(column_moments(&x, 0, 1), 0.5, epsilon = 0.03);
        assert_abs_diff_eq!(column_moments(&x, 0, 2), 0.3, epsilon = 0.03);
        assert_abs_diff_eq!(column_moments(&x, 0, 4), 0.18, epsilon = 0.03);
    }

    #[test]
    fn design_rejects_bad_rho() {
        let mut rng = replication_rng(1, 0);
        assert!(gen_design(5, 2, 2, 1.0, &mut rng).is_err());
    }

    #[test]
    fn error_shifts() {
        assert_eq!(ErrorLaw::Normal { sigma: 1.0 }.quantile(0.5), 0.0);
        assert_eq!(ErrorLaw::Cauchy.quantile(0.5), 0.0);
        assert_abs_diff_eq!(ErrorLaw::Normal { sigma: 1.0 }.quantile(0.25), -0.674_489_750_196_081_7, epsilon = 1e-9);
        assert_abs_diff_eq!(ErrorLaw::Cauchy.quantile(0.75), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn shifted_errors_put_tau_mass_below_zero() {
        let mut rng = replication_rng(3, 1);
        for (law, tau) in [(ErrorLaw::Normal { sigma: 1.0 }, 0.25), (ErrorLaw::Cauchy, 0.8)] {
            let e = gen_errors(law, 100_000, tau, &mut rng).unwrap();
            let frac = e.iter().filter(|v| **v < 0.0).count() as f64 / e.len() as f64;
            assert_abs_diff_eq!(frac, tau, epsilon = 0.006);
        }
    }

    #[test]
    fn presets() {
        let b = preset_beta(5, 2).unwrap();
        assert_eq!(b.group(3), &[-1.5, 1.0]);
        assert_eq!(b.group(4), &[0.0, 0.0]);
        assert!(preset_beta(3, 2).is_err());
        assert!(preset_beta(6, 3).is_err());
        assert_eq!(preset_beta(10, 5).unwrap().group(2), &[-1.0, 0.0, 1.0, 2.0, 1.5]);
    }

    #[test]
    fn streams_are_independent_of_order() {
        let a: f64 = replication_rng(11, 5).sample(StandardNormal);
        let _: f64 = replication_rng(11, 4).sample(StandardNormal);
        let b: f64 = replication_rng(11, 5).sample(StandardNormal);
        assert_eq!(a, b);
        let c: f64 = replication_rng(11, 6).sample(StandardNormal);
        assert_ne!(a, c);
    }

    #[test]
    fn near_noiseless_replication_recovers_support() {
        let mut s = SimulationScenario::preset(60, 6, 2, 1, 2024).unwrap();
        s.error_law = ErrorLaw::Normal { sigma: 1e-9 };
        let m = run_replication(&s, 0);
        assert!(m.failure.is_none(), "{:?}", m.failure);
        assert_eq!(m.correct_nonzero, 4);
        assert_eq!(m.correct_zero, 2);
    }

    #[test]
    fn replication_is_reproducible() {
        let s = SimulationScenario::preset(50, 5, 2, 1, 99).unwrap();
        let a = run_replication(&s, 3);
        let b = run_replication(&s, 3);
        assert!(a.same_outcome(&b));
    }

    #[test]
    fn median_and_aggregate_arithmetic() {
        assert_eq!(median(&[4.0, 4.0, 3.0]), 4.0);
        assert_eq!(median(&[1.0, 2.0, 3.0, 4.0]), 2.5);
        let truth = preset_beta(4, 1).unwrap();
        let make = |cn: usize| ReplicationMetrics {
            index: 0,
            correct_nonzero: cn,
            correct_zero: 0,
            errors_flat: vec![0.0, 1.0, 0.0, 1.0],
            estimate: vec![0.5, 0.0, -1.0, -0.5],
            mean_abs_prediction_error: 1.0,
            active_set: vec![],
            exact_recovery: cn == 4,
            l2_error: 2f64.sqrt(),
            converged: true,
            iterations: 3,
            kkt_pass: true,
            lambda1: 1.0,
            lambda2: 1.0,
            runtime_seconds: 0.5,
            failure: None,
        };
        let s = aggregate(&[make(4), make(4), make(3)], &truth).unwrap();
        assert_eq!(s.median_correct_nonzero, 4.0);
        assert_abs_diff_eq!(s.mean_correct_nonzero, 11.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.exact_recovery_fraction, 2.0 / 3.0, epsilon = 1e-12);

        let single = aggregate(&[make(3)], &truth).unwrap();
        assert_eq!(single.median_correct_nonzero, 3.0);
        assert_eq!(single.mean_abs_prediction_error, 1.0);
        assert_eq!(single.median_estimates[0], (0, vec![0.5]));
        assert!(aggregate(&[], &truth).is_err());
    }
}
