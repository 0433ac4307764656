//! The solved linear-quadratic game.
//!
//! With linear utilities and quadratic cost the value function is affine,
//! `v(t, x) = <h(t), x> + k(t)`, and the equilibrium spend `ū` is
//! deterministic. The system for `(h, k, μ)` is triangular: `h` solves a
//! linear backward equation on its own, `ū` follows from `h`, the mean `μ`
//! is driven forward by `ū`, and `k` integrates everything backward.
//!
//! All time integrals use the trapezoidal rule on one uniform grid. The mean
//! head is computed twice, once from the semigroup formula and once by
//! integrating the delayed mean equation; [`solve_all`] refuses solutions on
//! which the two disagree.

use log::debug;

use crate::control::{delay_convolution, ControlPath};
use crate::error::{Error, Result};
use crate::hilbert::{embed_initial_state, inner_product, HilbertPoint, SegmentGrid, TailFunction};
use crate::operators::{b_pairing, semigroup_a, semigroup_a_head, semigroup_a_star, ControlInjection, DriftSpec};
use crate::params::{ModelParams, TimeGrid};

/// Grid sizes for a solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discretization {
    pub n_steps: usize,
    pub n_nodes: usize,
    /// Largest accepted relative sup-norm gap between the two mean routes.
    pub crosscheck_tolerance: f64,
}

impl Default for Discretization {
    fn default() -> Self {
        Self {
            n_steps: 2000,
            n_nodes: 201,
            crosscheck_tolerance: 1e-3,
        }
    }
}

impl Discretization {
    pub fn new(n_steps: usize, n_nodes: usize) -> Self {
        Self {
            n_steps,
            n_nodes,
            ..Self::default()
        }
    }
}

/// Validated parameters together with the grids and sampled data every
/// solver stage shares.
#[derive(Debug, Clone)]
pub struct Problem {
    params: ModelParams,
    time: TimeGrid,
    segment: SegmentGrid,
    injection: ControlInjection,
    delta: TailFunction,
    mu_bar: HilbertPoint,
}

impl Problem {
    pub fn new(params: &ModelParams, disc: &Discretization) -> Result<Self> {
        params.validate()?;
        let time = TimeGrid::new(params.horizon, disc.n_steps)?;
        let segment = SegmentGrid::new(params.d, disc.n_nodes)?;
        let b1 = params.b1.sample_on(segment);
        let delta = params.delta.sample_on(segment);
        let mu_bar = embed_initial_state(params.init_head_mean, &b1, &delta)?;
        let injection = ControlInjection::new(params.b0, b1)?;
        Ok(Self {
            params: params.clone(),
            time,
            segment,
            injection,
            delta,
            mu_bar,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn segment(&self) -> &SegmentGrid {
        &self.segment
    }

    pub fn injection(&self) -> &ControlInjection {
        &self.injection
    }

    pub fn delta(&self) -> &TailFunction {
        &self.delta
    }

    /// Initial mean state `(μ̄0, x1)` with the tail embedded from `δ`.
    pub fn mu_bar(&self) -> &HilbertPoint {
        &self.mu_bar
    }

    /// Generator of the backward equation, `A* - r`.
    pub fn adjoint_drift(&self) -> DriftSpec {
        DriftSpec::new(self.params.a)
            .with_discount(self.params.r)
            .expect("validated discount")
    }

    /// Generator of the mean equation, `A + Γ0`.
    pub fn mean_drift(&self) -> DriftSpec {
        DriftSpec::new(self.params.a).with_coupling(self.params.gamma0)
    }

    /// The control schedule `u` on the solver grid with past `δ`.
    pub fn control(&self, u: Vec<f64>) -> Result<ControlPath> {
        ControlPath::new(self.delta.clone(), self.time, u)
    }

    /// Lifts a scalar initial goodwill into `H` using the past spend `δ`.
    pub fn initial_state(&self, x: f64) -> HilbertPoint {
        embed_initial_state(x, self.injection.b1(), &self.delta).expect("shared grid")
    }
}

/// Conjugate of `L(u) = αu + βu²`: `sup_u (u q - L(u)) = (q - α)²/(4β)`,
/// attained at `(q - α)/(2β)`.
pub fn lstar_quadratic(q: f64, alpha: f64, beta: f64) -> Result<(f64, f64)> {
    if !(beta > 0.0) {
        return Err(Error::invalid("beta", format!("must be > 0, got {beta}")));
    }
    let gap = q - alpha;
    Ok((gap * gap / (4.0 * beta), gap / (2.0 * beta)))
}

/// `h(t_i)` for every grid time.
///
/// The head is the trapezoidal sum `e^{(a-r)(T-t)} σ_T + ∫_t^T e^{(a-r)(s-t)} σ0(s) ds`,
/// accumulated backward one cell at a time. The tail uses the structure of
/// the adjoint semigroup: the source term `(σ0(s), 0)` reaches node `ξ` only
/// through its head, so the Duhamel part of `h1(t, ξ)` is
/// `e^{rξ}` times the same head integral started at `t - ξ`.
pub fn solve_h(problem: &Problem) -> Result<Vec<HilbertPoint>> {
    let p = &problem.params;
    let time = problem.time;
    let grid = problem.segment;
    let n = time.n_steps();
    let dt = time.dt();
    let lambda = p.a - p.r;
    let step = (lambda * dt).exp();
    let sigma0 = time.sample(&p.sigma0);

    // running[m] = ∫_{t_m}^T e^{λ(s - t_m)} σ0(s) ds by the trapezoidal rule.
    let mut running = vec![0.0; n + 1];
    for m in (0..n).rev() {
        running[m] = step * running[m + 1] + 0.5 * dt * (sigma0[m] + step * sigma0[m + 1]);
    }
    let running_at = |u: f64| -> f64 {
        let (m, w) = time.locate(u.min(p.horizon)).expect("inside horizon");
        if w == 0.0 {
            return running[m];
        }
        let span = time.t(m + 1) - u;
        let e = (lambda * span).exp();
        e * running[m + 1] + 0.5 * span * (p.sigma0.eval(u) + e * sigma0[m + 1])
    };

    let spec = problem.adjoint_drift();
    let terminal = HilbertPoint::head_only(p.sigma_terminal, grid);
    let growth: Vec<f64> = grid.nodes().map(|xi| (p.r * xi).exp()).collect();
    let mut out = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let t = time.t(i);
        let mut point = semigroup_a_star(p.horizon - t, &terminal, &spec)?;
        point.head += running[i];
        if !p.sigma0.is_zero() {
            let tail: Vec<f64> = point
                .tail
                .values()
                .iter()
                .zip(grid.nodes())
                .zip(&growth)
                .map(|((&v, xi), &g)| {
                    let u = t - xi;
                    if u >= p.horizon {
                        v
                    } else {
                        v + g * running_at(u)
                    }
                })
                .collect();
            point.tail = TailFunction::new(grid, tail)?;
        }
        out.push(point);
    }
    Ok(out)
}

/// `<b, h(t_i)>` for every grid time.
pub fn pairings(h: &[HilbertPoint], problem: &Problem) -> Result<Vec<f64>> {
    h.iter().map(|x| b_pairing(x, &problem.injection)).collect()
}

/// Equilibrium spend `ū(t_i) = (<b, h(t_i)> - α)/(2β)`.
pub fn optimal_control(h: &[HilbertPoint], problem: &Problem) -> Result<Vec<f64>> {
    let p = &problem.params;
    pairings(h, problem)?
        .into_iter()
        .map(|q| lstar_quadratic(q, p.alpha, p.beta).map(|(_, u)| u))
        .collect()
}

/// Head of `e^{τ(A+Γ0)} b` at lags `τ = 0, Δt, …, T`.
fn injection_response(problem: &Problem) -> Result<Vec<f64>> {
    let b = problem.injection.as_point();
    let spec = problem.mean_drift();
    let time = problem.time;
    (0..=time.n_steps()).map(|l| semigroup_a_head(time.t(l), &b, &spec)).collect()
}

/// Head `μ0(t_i)` of `μ(t) = e^{t(A+Γ0)} μ̄ + ∫_0^t e^{(t-s)(A+Γ0)} ū(s) b ds`.
///
/// The full point at one time is available from [`mu_point`].
pub fn solve_mu(problem: &Problem, u_star: &[f64]) -> Result<Vec<f64>> {
    let time = problem.time;
    check_len(u_star, &time, "u_star")?;
    let spec = problem.mean_drift();
    let response = injection_response(problem)?;
    let dt = time.dt();
    (0..=time.n_steps())
        .map(|i| {
            let free = semigroup_a_head(time.t(i), &problem.mu_bar, &spec)?;
            if i == 0 {
                return Ok(free);
            }
            let interior: f64 = (1..i).map(|m| u_star[m] * response[i - m]).sum();
            let ends = 0.5 * (u_star[0] * response[i] + u_star[i] * response[0]);
            Ok(free + dt * (ends + interior))
        })
        .collect()
}

/// The full mean state `μ(t_i) ∈ H`.
pub fn mu_point(problem: &Problem, u_star: &[f64], i: usize) -> Result<HilbertPoint> {
    let time = problem.time;
    check_len(u_star, &time, "u_star")?;
    let spec = problem.mean_drift();
    let b = problem.injection.as_point();
    let t = time.t(i);
    let mut acc = semigroup_a(t, &problem.mu_bar, &spec)?;
    let dt = time.dt();
    for m in 0..=i {
        if i == 0 {
            break;
        }
        let w = if m == 0 || m == i { 0.5 * dt } else { dt };
        let pushed = semigroup_a(t - time.t(m), &b, &spec)?;
        acc = acc.axpy(w * u_star[m], &pushed)?;
    }
    Ok(acc)
}

/// How the population mean enters a mean-path integration.
#[derive(Debug, Clone, Copy)]
pub enum Field<'a> {
    /// The path is its own population mean: drift `(a + γ0) m`.
    Endogenous,
    /// A given population mean on the control's time grid: drift
    /// `a m + γ0 field(t)`.
    Exogenous(&'a [f64]),
}

/// Mean goodwill under a deterministic schedule:
/// `m' = a m + γ0 (field) + b0 u(t) + ∫ b1(ξ) u(t + ξ) dξ`, `m(0) = m0`.
///
/// Classical RK4 on the control's time grid, with the forcing linearly
/// interpolated at half steps. The delay term is the trapezoidal
/// convolution over `b1`'s nodes. The path starts at grid index `start`
/// (with value `m0`) and the result holds the values from there to `T`.
pub fn integrate_mean(
    params: &ModelParams,
    b1: &TailFunction,
    control: &ControlPath,
    field: Field<'_>,
    start: usize,
    m0: f64,
) -> Result<Vec<f64>> {
    let time = *control.time();
    let u = control.future();
    let (kappa, exogenous) = match field {
        Field::Endogenous => (params.a + params.gamma0, None),
        Field::Exogenous(f) => {
            check_len(f, &time, "mean field")?;
            (params.a, Some(f))
        }
    };
    if start > time.n_steps() {
        return Err(Error::invalid("start", format!("index {start} beyond the time grid")));
    }
    let forcing: Vec<f64> = (start..=time.n_steps())
        .map(|k| {
            let t = time.t(k);
            let mut f = params.b0 * u[k] + delay_convolution(b1, control, t);
            if let Some(field) = exogenous {
                f += params.gamma0 * field[k];
            }
            f
        })
        .collect();
    let dt = time.dt();
    let mut m = Vec::with_capacity(forcing.len());
    m.push(m0);
    let mut x = m0;
    for k in start..time.n_steps() {
        let (f0, f1) = (forcing[k - start], forcing[k - start + 1]);
        let fm = 0.5 * (f0 + f1);
        let k1 = kappa * x + f0;
        let k2 = kappa * (x + 0.5 * dt * k1) + fm;
        let k3 = kappa * (x + 0.5 * dt * k2) + fm;
        let k4 = kappa * (x + dt * k3) + f1;
        x += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if !x.is_finite() {
            return Err(Error::NonFiniteDrift {
                step: k + 1,
                time: time.t(k + 1),
            });
        }
        m.push(x);
    }
    Ok(m)
}

/// `μ0` by direct integration of the delayed mean equation.
pub fn solve_mu_dde(problem: &Problem, u_star: &[f64]) -> Result<Vec<f64>> {
    let control = problem.control(u_star.to_vec())?;
    integrate_mean(
        &problem.params,
        problem.injection.b1(),
        &control,
        Field::Endogenous,
        0,
        problem.params.init_head_mean,
    )
}

/// `k(t_i)` by backward trapezoidal accumulation of
/// `k(t) = e^{-r(T-t)}(c_T + θ_T μ0(T)) + ∫_t^T e^{-r(s-t)} g(s) ds`,
/// `g = μ0 (γ0 h0 + θ) + (<b,h> - α)²/(4β) + c`.
pub fn solve_k(problem: &Problem, h: &[HilbertPoint], bh: &[f64], mu0: &[f64]) -> Result<Vec<f64>> {
    let p = &problem.params;
    let time = problem.time;
    check_len(bh, &time, "bh")?;
    check_len(mu0, &time, "mu0")?;
    if h.len() != time.len() {
        return Err(Error::GridMismatch(format!("h has {} points, grid {}", h.len(), time.len())));
    }
    let n = time.n_steps();
    let g: Vec<f64> = (0..=n)
        .map(|i| {
            let t = time.t(i);
            let (conj, _) = lstar_quadratic(bh[i], p.alpha, p.beta)?;
            Ok(mu0[i] * (p.gamma0 * h[i].head + p.theta.eval(t)) + conj + p.c.eval(t))
        })
        .collect::<Result<_>>()?;
    let dt = time.dt();
    let e = (-p.r * dt).exp();
    let mut k = vec![0.0; n + 1];
    k[n] = p.c_terminal + p.theta_terminal * mu0[n];
    for i in (0..n).rev() {
        k[i] = e * k[i + 1] + 0.5 * dt * (g[i] + e * g[i + 1]);
    }
    Ok(k)
}

fn check_len(v: &[f64], time: &TimeGrid, what: &str) -> Result<()> {
    if v.len() == time.len() {
        Ok(())
    } else {
        Err(Error::GridMismatch(format!(
            "{what} has {} samples, the time grid has {}",
            v.len(),
            time.len()
        )))
    }
}

fn relative_sup_distance(x: &[f64], reference: &[f64]) -> f64 {
    let diff = x.iter().zip(reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale = reference.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if diff == 0.0 {
        0.0
    } else if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// A solved game on a time grid.
#[derive(Debug, Clone)]
pub struct MfgSolution {
    problem: Problem,
    /// `h(t_i)`.
    pub h: Vec<HilbertPoint>,
    /// `<b, h(t_i)>`.
    pub bh: Vec<f64>,
    /// `ū(t_i)`.
    pub u_star: Vec<f64>,
    /// `μ0(t_i)` from the semigroup formula.
    pub mu0: Vec<f64>,
    /// `μ0(t_i)` from the delayed mean equation.
    pub mu0_dde: Vec<f64>,
    /// `k(t_i)`.
    pub k: Vec<f64>,
    /// Relative sup-norm distance between the two mean routes.
    pub crosscheck_residual: f64,
}

impl MfgSolution {
    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn params(&self) -> &ModelParams {
        &self.problem.params
    }

    pub fn time(&self) -> &TimeGrid {
        &self.problem.time
    }

    /// `h(t)`, linearly interpolated between grid times.
    pub fn h_at(&self, t: f64) -> Result<HilbertPoint> {
        let (i, w) = self.problem.time.locate(t)?;
        if w == 0.0 {
            return Ok(self.h[i].clone());
        }
        self.h[i].scaled(1.0 - w).axpy(w, &self.h[i + 1])
    }

    pub fn k_at(&self, t: f64) -> Result<f64> {
        self.problem.time.interpolate(&self.k, t)
    }

    /// `v(t, x) = <h(t), x> + k(t)`.
    pub fn value_at(&self, t: f64, x: &HilbertPoint) -> Result<f64> {
        Ok(inner_product(&self.h_at(t)?, x)? + self.k_at(t)?)
    }

    /// `v(0, (x, x1))` with `x1` embedded from the past spend `δ`.
    pub fn initial_value(&self, x: f64) -> Result<f64> {
        self.value_at(0.0, &self.problem.initial_state(x))
    }

    /// Full mean state `μ(t_i)`.
    pub fn mu_point(&self, i: usize) -> Result<HilbertPoint> {
        mu_point(&self.problem, &self.u_star, i)
    }

    /// The equilibrium schedule with past `δ`.
    pub fn control(&self) -> ControlPath {
        self.problem.control(self.u_star.clone()).expect("grid-consistent control")
    }

    /// Multiplies `h` (and hence `<b,h>`) by `k`, leaving everything else
    /// untouched. Only useful for checking that verification notices.
    #[doc(hidden)]
    pub fn corrupt_h(&mut self, k: f64) {
        for (x, q) in self.h.iter_mut().zip(&mut self.bh) {
            *x = x.scaled(k);
            *q *= k;
        }
    }
}

/// Solves for `(h, ū, μ, k)` and cross-checks the mean.
pub fn solve_all(params: &ModelParams, disc: &Discretization) -> Result<MfgSolution> {
    let problem = Problem::new(params, disc)?;
    let h = solve_h(&problem)?;
    let bh = pairings(&h, &problem)?;
    let u_star = optimal_control(&h, &problem)?;
    let mu0 = solve_mu(&problem, &u_star)?;
    let mu0_dde = solve_mu_dde(&problem, &u_star)?;
    let crosscheck_residual = relative_sup_distance(&mu0, &mu0_dde);
    debug!(
        "solved on {} steps x {} nodes, mean cross-check {crosscheck_residual:.3e}",
        disc.n_steps, disc.n_nodes
    );
    if !(crosscheck_residual <= disc.crosscheck_tolerance) {
        return Err(Error::CrossCheck {
            residual: crosscheck_residual,
            tolerance: disc.crosscheck_tolerance,
        });
    }
    let k = solve_k(&problem, &h, &bh, &mu0)?;
    Ok(MfgSolution {
        problem,
        h,
        bh,
        u_star,
        mu0,
        mu0_dde,
        k,
        crosscheck_residual,
    })
}
