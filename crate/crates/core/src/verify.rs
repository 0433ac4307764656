//! Consistency checks tying the solver to the simulator.
//!
//! Three identities are tested:
//!
//! * the value function equals the objective of the equilibrium spend,
//!   `v(0, x) = J(ū)`, both along the exact mean path and by Monte Carlo;
//! * the simulated population mean reproduces the `μ0` it was fed;
//! * for any other deterministic spend `u`, the loss against equilibrium is
//!   exactly `v - J(u) = ∫ e^{-rs} β (u - ū)² ds`.
//!
//! Deterministic checks are repeated at steps `4dt`, `2dt` and `dt`, with the
//! delay grid refined alongside, and the observed order of convergence is
//! part of the report.

use std::fmt;

use log::info;
use serde::Serialize;

use crate::error::Result;
use crate::params::{steps_per, ModelParams, TimeGrid};
use crate::sim::{simulate_paths, ObjectiveWeights, SimConfig, SimOutput};
use crate::solver::{integrate_mean, solve_all, Discretization, Field, MfgSolution};

/// Discretization tolerances are `C·(dt + 1/n_steps)·max(1, |v|)`.
///
/// The Euler–Maruyama mean carries a first-order bias (about `0.55·dt` on
/// the default scenario) that the Monte Carlo checks must absorb; the
/// deterministic channel is second order and sits far below this.
pub const DISCRETIZATION_CONSTANT: f64 = 1.0;
/// Monte Carlo checks allow this many standard errors.
pub const SE_MULTIPLIER: f64 = 3.0;
/// A deviation may not gain more than this.
pub const NASH_SLACK: f64 = 1e-6;
/// Below this, discretization errors are roundoff and orders are not
/// estimated.
pub const ROUNDOFF_FLOOR: f64 = 1e-10;
/// Required observed order of convergence.
pub const MIN_ORDER: f64 = 1.0;

/// A deviation from the equilibrium spend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Perturbation {
    /// `ū + ε`.
    ConstantShift(f64),
    /// `ū` plus a tent of the given height on `[center - half_width, center + half_width]`.
    TriangularBump { center: f64, half_width: f64, height: f64 },
    /// `-ū`.
    SignFlip,
    /// `u ≡ 0`.
    Zero,
}

impl Perturbation {
    /// The fixed test set for a horizon `T`.
    pub fn stock(horizon: f64) -> Vec<Self> {
        vec![
            Perturbation::ConstantShift(0.5),
            Perturbation::TriangularBump {
                center: 0.4 * horizon,
                half_width: 0.25 * horizon,
                height: 1.0,
            },
            Perturbation::SignFlip,
            Perturbation::Zero,
        ]
    }

    pub fn id(&self) -> &'static str {
        match self {
            Perturbation::ConstantShift(_) => "constant_shift",
            Perturbation::TriangularBump { .. } => "triangular_bump",
            Perturbation::SignFlip => "sign_flip",
            Perturbation::Zero => "zero",
        }
    }

    pub fn apply(&self, u_star: &[f64], time: &TimeGrid) -> Vec<f64> {
        u_star
            .iter()
            .zip(time.times())
            .map(|(&u, t)| match *self {
                Perturbation::ConstantShift(eps) => u + eps,
                Perturbation::TriangularBump {
                    center,
                    half_width,
                    height,
                } => u + height * (1.0 - (t - center).abs() / half_width).max(0.0),
                Perturbation::SignFlip => -u,
                Perturbation::Zero => 0.0,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Bound {
    AtMost,
    AtLeast,
}

/// One pass/fail line of the report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: Bound,
    pub limit: f64,
    pub passed: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            bound: Bound::AtMost,
            limit,
            passed: value.is_finite() && value <= limit,
        }
    }

    pub fn at_least(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            bound: Bound::AtLeast,
            limit,
            passed: value.is_finite() && value >= limit,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self.bound {
            Bound::AtMost => "<=",
            Bound::AtLeast => ">=",
        };
        write!(
            f,
            "{:<32} {:>14.6e} {op} {:<14.6e} {}",
            self.name,
            self.value,
            self.limit,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

/// Measured and predicted loss of one deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Gap {
    pub perturbation: Perturbation,
    pub measured: f64,
    pub predicted: f64,
}

impl Gap {
    pub fn residual(&self) -> f64 {
        (self.measured - self.predicted).abs()
    }
}

/// Deterministic quantities at one refinement level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Level {
    pub dt: f64,
    pub n_steps: usize,
    pub n_nodes: usize,
    pub value: f64,
    pub j_deterministic: f64,
    pub gaps: Vec<Gap>,
}

impl Level {
    pub fn value_error(&self) -> f64 {
        (self.value - self.j_deterministic).abs()
    }
}

/// `log2(e_coarse / e_fine)` for each consecutive pair, or `None` when the
/// errors are at roundoff level.
pub fn observed_orders(errors: &[f64]) -> Option<Vec<f64>> {
    if errors.iter().all(|&e| e < ROUNDOFF_FLOOR) {
        return None;
    }
    Some(
        errors
            .windows(2)
            .map(|w| (w[0].max(ROUNDOFF_FLOOR) / w[1].max(ROUNDOFF_FLOOR)).log2())
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyConfig {
    pub sim: SimConfig,
    /// Multiplies `h` after solving; anything but `1` must make
    /// verification fail.
    pub corrupt_h: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig {
                n_paths: 100_000,
                ..SimConfig::default()
            },
            corrupt_h: 1.0,
        }
    }
}

/// Discretization tolerance for a solve with step `dt`.
pub fn discretization_tolerance(dt: f64, n_steps: usize, value: f64) -> f64 {
    DISCRETIZATION_CONSTANT * (dt + 1.0 / n_steps as f64) * value.abs().max(1.0)
}

/// Solver grid sizes tied to a simulation step: `n_steps = T/dt`,
/// `n_nodes = d/dt + 1`.
pub fn tied_discretization(params: &ModelParams, dt: f64) -> Result<Discretization> {
    let (time, grid) = SimConfig {
        n_paths: 1,
        dt,
        seed: 0,
        antithetic: false,
    }
    .grids(params)?;
    Ok(Discretization::new(time.n_steps(), grid.n_nodes()))
}

/// `J(u)` along the exact mean path, with the equilibrium `μ0` as the
/// population mean.
pub fn deterministic_objective(solution: &MfgSolution, u: Vec<f64>) -> Result<f64> {
    let problem = solution.problem();
    let params = problem.params();
    let control = problem.control(u)?;
    let mean = integrate_mean(
        params,
        problem.injection().b1(),
        &control,
        Field::Exogenous(&solution.mu0),
        0,
        params.init_head_mean,
    )?;
    Ok(ObjectiveWeights::new(params, &control, &solution.mu0, 0)?.evaluate(&mean))
}

/// `∫ e^{-rs} β (u - ū)² ds` by the trapezoidal rule.
pub fn predicted_gap(solution: &MfgSolution, u: &[f64]) -> f64 {
    let params = solution.params();
    let time = solution.time();
    time.trapezoid_weights()
        .iter()
        .zip(time.times())
        .zip(u.iter().zip(&solution.u_star))
        .map(|((w, t), (a, b))| w * (-params.r * t).exp() * params.beta * (a - b) * (a - b))
        .sum()
}

/// `v(0, μ̄) - J(u)` against the prediction, for each deviation.
pub fn check_gap_identity(solution: &MfgSolution, perturbations: &[Perturbation]) -> Result<Vec<Gap>> {
    let v = solution.initial_value(solution.params().init_head_mean)?;
    perturbations
        .iter()
        .map(|p| {
            let u = p.apply(&solution.u_star, solution.time());
            let predicted = predicted_gap(solution, &u);
            let measured = v - deterministic_objective(solution, u)?;
            Ok(Gap {
                perturbation: *p,
                measured,
                predicted,
            })
        })
        .collect()
}

/// `|v(0, μ̄) - Ĵ|` against `3·SE + tol`, and `|v(0, μ̄) - J_det|` against `tol`.
pub fn check_value(solution: &MfgSolution, sim: &SimOutput, tol: f64) -> Result<(Check, Check)> {
    let v = solution.initial_value(solution.params().init_head_mean)?;
    Ok((
        Check::at_most("value_match_monte_carlo", (v - sim.j_hat).abs(), SE_MULTIPLIER * sim.j_se + tol),
        Check::at_most("value_match_deterministic", (v - sim.j_deterministic).abs(), tol),
    ))
}

/// `sup_t |E[X(t)] - μ0(t)|` against `3·max SE + C·dt`.
pub fn check_fixed_point(solution: &MfgSolution, sim: &SimOutput, dt: f64) -> Check {
    let residual = sim
        .mean_path
        .iter()
        .zip(&solution.mu0)
        .map(|(m, mu)| (m - mu).abs())
        .fold(0.0, f64::max);
    let max_se = sim.mean_se.iter().copied().fold(0.0, f64::max);
    let scale = solution.mu0.iter().map(|m| m.abs()).fold(1.0, f64::max);
    Check::at_most(
        "fixed_point",
        residual,
        SE_MULTIPLIER * max_se + DISCRETIZATION_CONSTANT * dt * scale,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub value: f64,
    pub j_hat: f64,
    pub j_se: f64,
    pub j_deterministic: f64,
    pub tolerance: f64,
    pub levels: Vec<Level>,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# verification report")?;
        writeln!(f, "dt = {:e}", self.dt)?;
        writeln!(f, "n_paths = {}", self.n_paths)?;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "value = {:.12e}", self.value)?;
        writeln!(f, "j_hat = {:.12e}", self.j_hat)?;
        writeln!(f, "j_se = {:.6e}", self.j_se)?;
        writeln!(f, "j_deterministic = {:.12e}", self.j_deterministic)?;
        writeln!(f, "discretization_tolerance = {:.6e}", self.tolerance)?;
        writeln!(f)?;
        writeln!(f, "# refinement")?;
        for level in &self.levels {
            write!(
                f,
                "dt = {:.3e}  steps = {}  nodes = {}  value_error = {:.6e}",
                level.dt,
                level.n_steps,
                level.n_nodes,
                level.value_error()
            )?;
            for g in &level.gaps {
                write!(f, "  {} = {:.6e}", g.perturbation.id(), g.residual())?;
            }
            writeln!(f)?;
        }
        writeln!(f)?;
        writeln!(f, "# checks")?;
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        writeln!(f)?;
        if self.passed() {
            writeln!(f, "result = PASS")
        } else {
            writeln!(f, "result = FAIL ({})", self.failures().join(", "))
        }
    }
}

fn solve_level(params: &ModelParams, dt: f64, cfg: &VerifyConfig, perturbations: &[Perturbation]) -> Result<(MfgSolution, Level)> {
    let disc = tied_discretization(params, dt)?;
    let mut solution = solve_all(params, &disc)?;
    if cfg.corrupt_h != 1.0 {
        solution.corrupt_h(cfg.corrupt_h);
    }
    let value = solution.initial_value(params.init_head_mean)?;
    let j_deterministic = deterministic_objective(&solution, solution.u_star.clone())?;
    let gaps = check_gap_identity(&solution, perturbations)?;
    let level = Level {
        dt,
        n_steps: disc.n_steps,
        n_nodes: disc.n_nodes,
        value,
        j_deterministic,
        gaps,
    };
    Ok((solution, level))
}

/// Runs every check at step `cfg.sim.dt`, with the deterministic ones also
/// at `2dt` and `4dt`.
pub fn run_verification(params: &ModelParams, cfg: &VerifyConfig) -> Result<VerifyReport> {
    params.validate()?;
    let dt = cfg.sim.dt;
    let perturbations = Perturbation::stock(params.horizon);

    let mut levels = Vec::with_capacity(3);
    for factor in [4.0, 2.0] {
        let coarse = dt * factor;
        if steps_per(params.d, coarse).is_some() && steps_per(params.horizon, coarse).is_some() {
            levels.push(solve_level(params, coarse, cfg, &perturbations)?.1);
        }
    }
    let (solution, finest) = solve_level(params, dt, cfg, &perturbations)?;
    levels.push(finest.clone());
    info!("solved {} refinement levels; simulating {} paths", levels.len(), cfg.sim.n_paths);

    let sim = simulate_paths(params, &solution.control(), &solution.mu0, &cfg.sim)?;
    let tol = discretization_tolerance(dt, finest.n_steps, finest.value);

    let mut checks = Vec::new();
    let (mc, det) = check_value(&solution, &sim, tol)?;
    checks.push(mc);
    checks.push(det);
    let value_errors: Vec<f64> = levels.iter().map(Level::value_error).collect();
    if let Some(orders) = observed_orders(&value_errors) {
        let worst = orders.iter().copied().fold(f64::INFINITY, f64::min);
        checks.push(Check::at_least("value_order", worst, MIN_ORDER));
    }
    checks.push(check_fixed_point(&solution, &sim, dt));
    for (i, gap) in finest.gaps.iter().enumerate() {
        let id = gap.perturbation.id();
        checks.push(Check::at_most(format!("gap_identity_{id}"), gap.residual(), tol));
        checks.push(Check::at_least(format!("gap_nonnegative_{id}"), gap.measured, -NASH_SLACK));
        let errors: Vec<f64> = levels.iter().map(|l| l.gaps[i].residual()).collect();
        if let Some(orders) = observed_orders(&errors) {
            let worst = orders.iter().copied().fold(f64::INFINITY, f64::min);
            checks.push(Check::at_least(format!("gap_order_{id}"), worst, MIN_ORDER));
        }
    }

    Ok(VerifyReport {
        dt,
        n_paths: cfg.sim.n_paths,
        seed: cfg.sim.seed,
        value: finest.value,
        j_hat: sim.j_hat,
        j_se: sim.j_se,
        j_deterministic: sim.j_deterministic,
        tolerance: tol,
        levels,
        checks,
    })
}
