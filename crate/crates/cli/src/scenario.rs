//! Scenario files: `key = value` lines describing a simulation campaign.
//!
//! | key        | value                                      | default  |
//! |------------|--------------------------------------------|----------|
//! | n, g, p    | positive integers                          | required |
//! | error      | `normal` or `cauchy`                       | normal   |
//! | sigma      | normal standard deviation                  | 1        |
//! | tau        | quantile index                             | 0.5      |
//! | reps       | replications                               | 100      |
//! | seed       | 64-bit base seed                           | 0        |
//! | beta       | `preset` or `g * p` numbers, group-major   | preset   |
//! | sn         | `auto` or a positive number                | 1        |
//! | rho        | design correlation base                    | 0.6      |
//! | sweep      | `jacobi` or `gauss-seidel`                 | jacobi   |
//! | epsilon    | solver stopping tolerance                  | 1e-6     |
//! | max_iters  | solver iteration cap                       | 10000    |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use gqnet_core::simulation::{preset_beta, DEFAULT_RHO};
use gqnet_core::tuning::compute_sn;
use gqnet_core::{ErrorLaw, GridChoice, GroupedCoefficients, SimulationScenario, SolverOptions, SweepMode};

use crate::error::{read_to_string, CliError, Result};
use crate::number;

const KEYS: [&str; 14] = [
    "n", "g", "p", "error", "sigma", "tau", "reps", "seed", "beta", "sn", "rho", "sweep", "epsilon", "max_iters",
];

pub fn read_scenario(path: &Path) -> Result<SimulationScenario> {
    parse_scenario(&read_to_string(path)?, &path.display().to_string())
}

pub fn parse_scenario(text: &str, source_name: &str) -> Result<SimulationScenario> {
    let mut entries: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::parse(source_name, line_no, format!("expected `key = value`, found `{line}`")))?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(CliError::parse(
                source_name,
                line_no,
                format!("invalid scenario key `{key}`"),
            ));
        }
        if entries.insert(key, (line_no, value.trim())).is_some() {
            return Err(CliError::parse(source_name, line_no, format!("key `{key}` given twice")));
        }
    }

    let err = |key: &str, line: usize, why: &str| CliError::parse(source_name, line, format!("`{key}`: {why}"));
    let raw = |key: &str| entries.get(key).copied();
    let count = |key: &str, default: Option<usize>| -> Result<usize> {
        match raw(key) {
            Some((line, v)) => v.parse().map_err(|_| err(key, line, "expected a nonnegative integer")),
            None => default.ok_or_else(|| CliError::Input(format!("{source_name}: missing required key `{key}`"))),
        }
    };
    let real = |key: &str, default: f64| -> Result<f64> {
        match raw(key) {
            Some((line, v)) => number::parse(v)
                .filter(|x| x.is_finite())
                .ok_or_else(|| err(key, line, "expected a finite number")),
            None => Ok(default),
        }
    };

    let n = count("n", None)?;
    let g = count("g", None)?;
    let p = count("p", None)?;
    let error_law = match raw("error") {
        None | Some((_, "normal")) => ErrorLaw::Normal {
            sigma: real("sigma", 1.0)?,
        },
        Some((_, "cauchy")) => ErrorLaw::Cauchy,
        Some((line, _)) => return Err(err("error", line, "expected `normal` or `cauchy`")),
    };
    if let (ErrorLaw::Cauchy, Some((line, _))) = (error_law, raw("sigma")) {
        return Err(err("sigma", line, "only applies to normal errors"));
    }
    let true_beta = match raw("beta") {
        None | Some((_, "preset")) => preset_beta(g, p).map_err(|e| {
            CliError::Input(format!("{source_name}: no preset coefficients for g={g}, p={p} ({e}); list `beta` explicitly"))
        })?,
        Some((line, list)) => {
            let values: Vec<f64> = list
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .map(|t| number::parse(t).filter(|x| x.is_finite()))
                .collect::<Option<_>>()
                .ok_or_else(|| err("beta", line, "expected `preset` or a list of numbers"))?;
            if values.len() != g * p {
                return Err(err("beta", line, &format!("expected g*p = {} numbers, found {}", g * p, values.len())));
            }
            GroupedCoefficients::from_flat(g, p, values)?
        }
    };
    let sn = match raw("sn") {
        Some((_, "auto")) => compute_sn(n, g),
        Some((line, v)) => number::parse(v)
            .filter(|x| *x > 0.0 && x.is_finite())
            .ok_or_else(|| err("sn", line, "expected `auto` or a positive number"))?,
        None => 1.0,
    };
    let sweep_mode = match raw("sweep") {
        Some((line, v)) => v.parse::<SweepMode>().map_err(|e| err("sweep", line, &e))?,
        None => SweepMode::default(),
    };
    let seed = match raw("seed") {
        Some((line, v)) => v.parse().map_err(|_| err("seed", line, "expected an unsigned 64-bit integer"))?,
        None => 0,
    };

    let scenario = SimulationScenario {
        n,
        g,
        p,
        true_beta,
        error_law,
        tau: real("tau", 0.5)?,
        replications: count("reps", Some(100))?,
        base_seed: seed,
        grid: GridChoice::Auto { sn },
        rho: real("rho", DEFAULT_RHO)?,
        solver: SolverOptions {
            epsilon: real("epsilon", SolverOptions::default().epsilon)?,
            max_iters: count("max_iters", Some(SolverOptions::default().max_iters))?,
            sweep_mode,
        },
    };
    scenario.validate()?;
    Ok(scenario)
}

/// The fully resolved scenario as a scenario file; parsing it back gives
/// the same scenario.
pub fn render_scenario(s: &SimulationScenario) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "n = {}\ng = {}\np = {}", s.n, s.g, s.p);
    match s.error_law {
        ErrorLaw::Normal { sigma } => {
            let _ = writeln!(out, "error = normal\nsigma = {}", number::fmt(sigma));
        }
        ErrorLaw::Cauchy => out.push_str("error = cauchy\n"),
    }
    let _ = writeln!(out, "tau = {}", number::fmt(s.tau));
    let _ = writeln!(out, "reps = {}\nseed = {}", s.replications, s.base_seed);
    let _ = writeln!(out, "beta = {}", number::fmt_list(s.true_beta.flat()));
    if let GridChoice::Auto { sn } = s.grid {
        let _ = writeln!(out, "sn = {}", number::fmt(sn));
    }
    let sweep = match s.solver.sweep_mode {
        SweepMode::Jacobi => "jacobi",
        SweepMode::GaussSeidel => "gauss-seidel",
    };
    let _ = writeln!(
        out,
        "rho = {}\nsweep = {sweep}\nepsilon = {}\nmax_iters = {}",
        number::fmt(s.rho),
        number::fmt(s.solver.epsilon),
        s.solver.max_iters
    );
    out
}
