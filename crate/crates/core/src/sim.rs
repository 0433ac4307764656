//! Monte Carlo simulation of the delayed goodwill dynamics.
//!
//! The control is open-loop and the population mean is given, so the drift
//! splits into `a X` plus a deterministic forcing that is the same for every
//! path. The forcing is computed once, walking a ring buffer of past spend
//! through time; each path then costs one multiply-add and one normal draw
//! per step.
//!
//! Paths are independent. Path `i` draws from its own ChaCha8 stream, and
//! blocks of paths are reduced in index order, so results do not depend on
//! the number of threads.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::control::ControlPath;
use crate::error::{Error, Result};
use crate::hilbert::{SegmentGrid, TailFunction};
use crate::operators::step_up;
use crate::params::{steps_per, ModelParams, TimeGrid};
use crate::solver::{integrate_mean, Field};

const BLOCK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub antithetic: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_paths: 10_000,
            dt: 1e-3,
            seed: 0,
            antithetic: false,
        }
    }
}

impl SimConfig {
    /// Time grid and delay grid implied by `dt`.
    pub fn grids(&self, params: &ModelParams) -> Result<(TimeGrid, SegmentGrid)> {
        if self.n_paths == 0 {
            return Err(Error::invalid("n_paths", "need at least one path"));
        }
        if self.antithetic && self.n_paths % 2 == 1 {
            return Err(Error::invalid("n_paths", "antithetic sampling needs an even path count"));
        }
        if !(self.dt > 0.0 && self.dt <= params.d) {
            return Err(Error::invalid(
                "dt",
                format!("must lie in (0, d] = (0, {}], got {}", params.d, self.dt),
            ));
        }
        let lags = steps_per(params.d, self.dt)
            .ok_or_else(|| Error::invalid("dt", format!("step {} does not divide the delay {}", self.dt, params.d)))?;
        let time = TimeGrid::with_step(params.horizon, self.dt)?;
        Ok((time, SegmentGrid::new(params.d, lags + 1)?))
    }
}

/// Summary of a Monte Carlo run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    /// Simulation times, from the start time to `T`.
    pub times: Vec<f64>,
    pub j_hat: f64,
    pub j_se: f64,
    /// Objective evaluated along the exact mean path (no sampling error).
    pub j_deterministic: f64,
    pub mean_path: Vec<f64>,
    pub sd_path: Vec<f64>,
    /// Standard error of `mean_path` at each time.
    pub mean_se: Vec<f64>,
    /// RK4 mean path under the same control and field.
    pub deterministic_mean: Vec<f64>,
    pub n_paths: usize,
}

/// Ring of the last `d/dt + 1` spend values, oldest first.
///
/// Entries hold the left and right limits of `u`; they differ only at
/// `s = 0`, where the past `δ(0)` meets the first chosen spend.
struct History<'a> {
    control: &'a ControlPath,
    grid: SegmentGrid,
    lags: usize,
    ring: VecDeque<(f64, f64)>,
}

impl<'a> History<'a> {
    fn new(control: &'a ControlPath, grid: SegmentGrid, start: usize) -> Self {
        let lags = grid.n_nodes() - 1;
        let mut h = Self {
            control,
            grid,
            lags,
            ring: VecDeque::with_capacity(lags + 1),
        };
        for i in 0..=lags {
            let m = start as isize + i as isize - lags as isize;
            let entry = h.entry(m);
            h.ring.push_back(entry);
        }
        h
    }

    fn entry(&self, m: isize) -> (f64, f64) {
        let future = self.control.future();
        if m < 0 {
            let v = self.control.past().eval_unchecked(self.grid.node((self.lags as isize + m) as usize));
            (v, v)
        } else if m == 0 {
            (self.control.past().eval_unchecked(0.0), future[0])
        } else {
            (future[m as usize], future[m as usize])
        }
    }

    /// `∫ b1(ξ) u(t_k + ξ) dξ` for the current window ending at step `k`.
    fn convolution(&self, b1: &TailFunction, t: f64) -> f64 {
        let values: Vec<f64> = self
            .ring
            .iter()
            .zip(b1.values())
            .enumerate()
            .map(|(j, (&(left, right), &b))| {
                let w = step_up(&self.grid, j, -t);
                b * (w * right + (1.0 - w) * left)
            })
            .collect();
        self.grid.trapezoid(&values)
    }

    fn advance(&mut self, k: usize) {
        self.ring.pop_front();
        let entry = self.entry(k as isize + 1);
        self.ring.push_back(entry);
    }
}

/// Discounted objective as an affine functional of a path:
/// `J(X) = constant + Σ_k weight_k X_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveWeights {
    pub constant: f64,
    pub state: Vec<f64>,
}

impl ObjectiveWeights {
    /// Weights for the objective started at grid index `start`, with the
    /// population mean `mu0_path` on the control's grid.
    pub fn new(params: &ModelParams, control: &ControlPath, mu0_path: &[f64], start: usize) -> Result<Self> {
        let time = *control.time();
        check_field(mu0_path, &time)?;
        let n = time.n_steps();
        if start > n {
            return Err(Error::OutOfHorizon {
                time: start as f64 * time.dt(),
                horizon: time.horizon(),
            });
        }
        let t0 = time.t(start);
        let dt = time.dt();
        let u = control.future();
        let mut constant = 0.0;
        let mut state = vec![0.0; n - start + 1];
        for k in start..=n {
            let t = time.t(k);
            let w = if start == n {
                0.0
            } else if k == start || k == n {
                0.5 * dt
            } else {
                dt
            };
            let disc = (-params.r * (t - t0)).exp();
            let running = params.c.eval(t) + params.theta.eval(t) * mu0_path[k] - (params.alpha * u[k] + params.beta * u[k] * u[k]);
            constant += w * disc * running;
            state[k - start] = w * disc * params.sigma0.eval(t);
        }
        let disc_t = (-params.r * (time.horizon() - t0)).exp();
        constant += disc_t * (params.c_terminal + params.theta_terminal * mu0_path[n]);
        state[n - start] += disc_t * params.sigma_terminal;
        Ok(Self { constant, state })
    }

    pub fn evaluate(&self, path: &[f64]) -> f64 {
        debug_assert_eq!(path.len(), self.state.len());
        self.constant + self.state.iter().zip(path).map(|(w, x)| w * x).sum::<f64>()
    }
}

fn check_field(mu0_path: &[f64], time: &TimeGrid) -> Result<()> {
    if mu0_path.len() != time.len() {
        return Err(Error::GridMismatch(format!(
            "mean field has {} samples, the simulation grid has {}",
            mu0_path.len(),
            time.len()
        )));
    }
    Ok(())
}

/// Sample mean and standard error of the mean.
fn mean_and_se(values: &[f64]) -> (f64, f64) {
    if values.iter().all(|&v| v == values[0]) {
        return (values[0], 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Monte Carlo `(Ĵ, SE)` over explicit paths started at grid index `start`.
pub fn estimate_objective(
    paths: &[Vec<f64>],
    params: &ModelParams,
    control: &ControlPath,
    mu0_path: &[f64],
    start: usize,
) -> Result<(f64, f64)> {
    let weights = ObjectiveWeights::new(params, control, mu0_path, start)?;
    let values: Vec<f64> = paths.iter().map(|p| weights.evaluate(p)).collect();
    Ok(mean_and_se(&values))
}

/// `J` with the state replaced by its mean path. Exact in expectation
/// because the utilities are linear in the state.
pub fn estimate_objective_deterministic(
    params: &ModelParams,
    control: &ControlPath,
    mu0_path: &[f64],
    mean_path: &[f64],
    start: usize,
) -> Result<f64> {
    let weights = ObjectiveWeights::new(params, control, mu0_path, start)?;
    if mean_path.len() != weights.state.len() {
        return Err(Error::GridMismatch(format!(
            "mean path has {} samples, expected {}",
            mean_path.len(),
            weights.state.len()
        )));
    }
    Ok(weights.evaluate(mean_path))
}

/// Per-run precomputation shared by all paths.
pub struct PathSimulator {
    params: ModelParams,
    time: TimeGrid,
    start: usize,
    x0: Option<f64>,
    cfg: SimConfig,
    forcing: Vec<f64>,
    weights: ObjectiveWeights,
    euler_mean: Vec<f64>,
    deterministic_mean: Vec<f64>,
}

impl PathSimulator {
    /// Paths from `t = 0` with the initial goodwill drawn from its law.
    pub fn new(params: &ModelParams, control: &ControlPath, mu0_path: &[f64], cfg: &SimConfig) -> Result<Self> {
        Self::starting_at(params, control, mu0_path, cfg, 0.0, None)
    }

    /// Paths from grid time `t0` at the fixed goodwill `x0` (or the initial
    /// law when `None`), with the spend before `t0` read from `control`.
    pub fn starting_at(
        params: &ModelParams,
        control: &ControlPath,
        mu0_path: &[f64],
        cfg: &SimConfig,
        t0: f64,
        x0: Option<f64>,
    ) -> Result<Self> {
        params.validate()?;
        let (time, grid) = cfg.grids(params)?;
        if control.time().n_steps() != time.n_steps() || control.time().horizon() != time.horizon() {
            return Err(Error::GridMismatch(format!(
                "control has {} steps, the simulation grid has {}",
                control.time().n_steps(),
                time.n_steps()
            )));
        }
        if control.past().grid().delay() != params.d {
            return Err(Error::GridMismatch("past control is not defined on [-d, 0]".into()));
        }
        check_field(mu0_path, &time)?;
        let (start, w) = time.locate(t0)?;
        if w != 0.0 {
            return Err(Error::invalid("t0", format!("start time {t0} is not a simulation grid time")));
        }
        let b1 = params.b1.sample_on(grid);
        let n = time.n_steps();
        let u = control.future();

        let mut forcing = Vec::with_capacity(n - start);
        let mut history = History::new(control, grid, start);
        for k in start..n {
            let t = time.t(k);
            let f = params.gamma0 * mu0_path[k] + params.b0 * u[k] + history.convolution(&b1, t);
            if !f.is_finite() {
                return Err(Error::NonFiniteDrift { step: k, time: t });
            }
            forcing.push(f);
            history.advance(k);
        }

        let m_start = x0.unwrap_or(params.init_head_mean);
        let dt = time.dt();
        let mut euler_mean = Vec::with_capacity(n - start + 1);
        euler_mean.push(m_start);
        let mut m = m_start;
        for (k, f) in forcing.iter().enumerate() {
            m += (params.a * m + f) * dt;
            if !m.is_finite() {
                return Err(Error::NonFiniteDrift {
                    step: start + k + 1,
                    time: time.t(start + k + 1),
                });
            }
            euler_mean.push(m);
        }

        let deterministic_mean = integrate_mean(params, &b1, control, Field::Exogenous(mu0_path), start, m_start)?;
        let weights = ObjectiveWeights::new(params, control, mu0_path, start)?;
        Ok(Self {
            params: params.clone(),
            time,
            start,
            x0,
            cfg: *cfg,
            forcing,
            weights,
            euler_mean,
            deterministic_mean,
        })
    }

    pub fn weights(&self) -> &ObjectiveWeights {
        &self.weights
    }

    /// The Euler recursion without noise, `m_{k+1} = m_k + (a m_k + F_k) dt`.
    pub fn euler_mean(&self) -> &[f64] {
        &self.euler_mean
    }

    fn rng(&self, unit: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(unit as u64);
        rng
    }

    fn n_units(&self) -> usize {
        if self.cfg.antithetic {
            self.cfg.n_paths / 2
        } else {
            self.cfg.n_paths
        }
    }

    /// Simulates sampling unit `unit` into `out` (one path, or an
    /// antithetic pair written to `out` and `mirror`).
    fn simulate_unit(&self, unit: usize, out: &mut [f64], mut mirror: Option<&mut [f64]>) {
        let p = &self.params;
        let mut rng = self.rng(unit);
        let dt = self.time.dt();
        let noise = p.sigma * dt.sqrt();
        let (x, xm) = match self.x0 {
            Some(x0) => (x0, x0),
            None => {
                let z: f64 = rng.sample(StandardNormal);
                (
                    p.init_head_mean + p.init_head_sd * z,
                    p.init_head_mean - p.init_head_sd * z,
                )
            }
        };
        out[0] = x;
        if let Some(m) = mirror.as_deref_mut() {
            m[0] = xm;
        }
        let growth = 1.0 + p.a * dt;
        for (k, f) in self.forcing.iter().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            out[k + 1] = growth * out[k] + f * dt + noise * z;
            if let Some(m) = mirror.as_deref_mut() {
                m[k + 1] = growth * m[k] + f * dt - noise * z;
            }
        }
    }

    /// Path number `index` (under antithetic sampling, odd indices are the
    /// mirrors of the preceding even ones).
    pub fn path(&self, index: usize) -> Vec<f64> {
        let len = self.forcing.len() + 1;
        let mut a = vec![0.0; len];
        if self.cfg.antithetic {
            let mut b = vec![0.0; len];
            self.simulate_unit(index / 2, &mut a, Some(&mut b));
            if index % 2 == 1 {
                return b;
            }
        } else {
            self.simulate_unit(index, &mut a, None);
        }
        a
    }

    pub fn run(&self) -> SimOutput {
        let len = self.forcing.len() + 1;
        let units = self.n_units();
        let n_blocks = units.div_ceil(BLOCK);
        let blocks: Vec<BlockStats> = (0..n_blocks)
            .into_par_iter()
            .map(|b| self.run_block(b * BLOCK..((b + 1) * BLOCK).min(units), len))
            .collect();

        let mut s1 = vec![0.0; len];
        let mut s2 = vec![0.0; len];
        let mut su2 = vec![0.0; len];
        let mut j_units = Vec::with_capacity(units);
        for b in blocks {
            for k in 0..len {
                s1[k] += b.s1[k];
                s2[k] += b.s2[k];
                su2[k] += b.su2[k];
            }
            j_units.extend(b.j);
        }
        let n = self.cfg.n_paths as f64;
        let nu = units as f64;
        let mut mean_path = Vec::with_capacity(len);
        let mut sd_path = Vec::with_capacity(len);
        let mut mean_se = Vec::with_capacity(len);
        for k in 0..len {
            let shift = s1[k] / n;
            mean_path.push(self.euler_mean[k] + shift);
            let var = if self.cfg.n_paths > 1 {
                ((s2[k] - n * shift * shift) / (n - 1.0)).max(0.0)
            } else {
                0.0
            };
            sd_path.push(var.sqrt());
            let unit_var = if units > 1 {
                ((su2[k] - nu * shift * shift) / (nu - 1.0)).max(0.0)
            } else {
                0.0
            };
            mean_se.push((unit_var / nu).sqrt());
        }
        let (j_hat, j_se) = mean_and_se(&j_units);
        SimOutput {
            times: (self.start..=self.time.n_steps()).map(|k| self.time.t(k)).collect(),
            j_hat,
            j_se,
            j_deterministic: self.weights.evaluate(&self.deterministic_mean),
            mean_path,
            sd_path,
            mean_se,
            deterministic_mean: self.deterministic_mean.clone(),
            n_paths: self.cfg.n_paths,
        }
    }

    fn run_block(&self, units: std::ops::Range<usize>, len: usize) -> BlockStats {
        let mut stats = BlockStats {
            s1: vec![0.0; len],
            s2: vec![0.0; len],
            su2: vec![0.0; len],
            j: Vec::with_capacity(units.len()),
        };
        let mut a = vec![0.0; len];
        let mut b = vec![0.0; len];
        for unit in units {
            if self.cfg.antithetic {
                self.simulate_unit(unit, &mut a, Some(&mut b));
                for k in 0..len {
                    let (da, db) = (a[k] - self.euler_mean[k], b[k] - self.euler_mean[k]);
                    stats.s1[k] += da + db;
                    stats.s2[k] += da * da + db * db;
                    let du = 0.5 * (da + db);
                    stats.su2[k] += du * du;
                }
                stats.j.push(0.5 * (self.weights.evaluate(&a) + self.weights.evaluate(&b)));
            } else {
                self.simulate_unit(unit, &mut a, None);
                for k in 0..len {
                    let da = a[k] - self.euler_mean[k];
                    stats.s1[k] += da;
                    stats.s2[k] += da * da;
                    stats.su2[k] += da * da;
                }
                stats.j.push(self.weights.evaluate(&a));
            }
        }
        stats
    }
}

struct BlockStats {
    s1: Vec<f64>,
    s2: Vec<f64>,
    su2: Vec<f64>,
    j: Vec<f64>,
}

/// Runs the full Monte Carlo estimate from `t = 0`.
pub fn simulate_paths(
    params: &ModelParams,
    control: &ControlPath,
    mu0_path: &[f64],
    cfg: &SimConfig,
) -> Result<SimOutput> {
    Ok(PathSimulator::new(params, control, mu0_path, cfg)?.run())
}
