//! The `solve`, `simulate` and `verify` pipelines and the files they write.
//!
//! Every number goes out with 17 significant digits so that files
//! round-trip to the same doubles.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;

use crate::config::RunConfig;
use crate::control::ControlPath;
use crate::error::{Error, Result};
use crate::hilbert::{HilbertPoint, TailFunction};
use crate::params::PiecewiseLinear;
use crate::sim::simulate_paths;
use crate::solver::{solve_all, Discretization, MfgSolution};
use crate::verify::{run_verification, tied_discretization, VerifyConfig, VerifyReport};

pub const SOLUTION_HEADER: [&str; 6] = ["t", "h0", "bh", "u_star", "mu0", "k"];
pub const PATHS_HEADER: [&str; 3] = ["t", "mean", "sd"];

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Row indices for a tail matrix: about `rows` evenly spaced, always
/// including both ends.
pub fn tail_row_indices(n_steps: usize, rows: usize) -> Vec<usize> {
    let stride = n_steps.div_ceil(rows.max(2) - 1).max(1);
    let mut idx: Vec<usize> = (0..n_steps).step_by(stride).collect();
    idx.push(n_steps);
    idx
}

fn write_tail_matrix(path: &Path, solution: &MfgSolution, rows: &[usize], point: impl Fn(usize) -> Result<HilbertPoint>) -> Result<()> {
    let mut w = csv_writer(path)?;
    let grid = solution.problem().segment();
    let mut header = vec!["t".to_string()];
    header.extend(grid.nodes().map(num));
    w.write_record(&header)?;
    for &i in rows {
        let x = point(i)?;
        let mut record = vec![num(solution.time().t(i))];
        record.extend(x.tail.values().iter().copied().map(num));
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveSummary {
    /// `v(0, (μ̄0, x1))`.
    pub value_at_start: f64,
    pub init_head_mean: f64,
    pub h0_start: f64,
    pub k_start: f64,
    pub u_star_start: f64,
    pub mu0_terminal: f64,
    pub crosscheck_residual: f64,
    pub n_steps: usize,
    pub n_nodes: usize,
}

impl SolveSummary {
    pub fn new(solution: &MfgSolution) -> Result<Self> {
        let p = solution.params();
        Ok(Self {
            value_at_start: solution.initial_value(p.init_head_mean)?,
            init_head_mean: p.init_head_mean,
            h0_start: solution.h[0].head,
            k_start: solution.k[0],
            u_star_start: solution.u_star[0],
            mu0_terminal: *solution.mu0.last().expect("nonempty grid"),
            crosscheck_residual: solution.crosscheck_residual,
            n_steps: solution.time().n_steps(),
            n_nodes: solution.problem().segment().n_nodes(),
        })
    }
}

/// Writes `solution.csv` (one row per grid time).
pub fn write_solution_csv(path: &Path, solution: &MfgSolution) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(SOLUTION_HEADER)?;
    for (i, t) in solution.time().times().enumerate() {
        w.write_record([
            num(t),
            num(solution.h[i].head),
            num(solution.bh[i]),
            num(solution.u_star[i]),
            num(solution.mu0[i]),
            num(solution.k[i]),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Solves the game on the configured grids and writes `solution.csv`,
/// `h_tail.csv`, `mu_tail.csv` and `summary.json` under `out`.
pub fn cmd_solve(cfg: &RunConfig, out: &Path) -> Result<SolveSummary> {
    cfg.validate()?;
    create_dir(out)?;
    let solution = solve_all(&cfg.model, &cfg.numerics.discretization())?;
    write_solution_csv(&out.join("solution.csv"), &solution)?;
    let rows = tail_row_indices(solution.time().n_steps(), cfg.outputs.tail_rows);
    write_tail_matrix(&out.join("h_tail.csv"), &solution, &rows, |i| Ok(solution.h[i].clone()))?;
    write_tail_matrix(&out.join("mu_tail.csv"), &solution, &rows, |i| solution.mu_point(i))?;
    let summary = SolveSummary::new(&solution)?;
    write_json(&out.join("summary.json"), &summary)?;
    info!("value at start {:.10}", summary.value_at_start);
    Ok(summary)
}

/// Where `simulate` takes the spend schedule from.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlSource {
    Optimal,
    /// A two-column `t,u` CSV covering `[-d, T]`.
    File(PathBuf),
}

/// Reads a `t,u` table into a schedule on `[-d, T]`.
///
/// Times must be nondecreasing; `t = 0` may appear twice, the first row
/// being the last past value and the second the first chosen one.
/// Between rows the spend is linear.
pub fn read_control_file(path: &Path, d: f64, horizon: f64) -> Result<(PiecewiseLinear, PiecewiseLinear)> {
    let bad = |msg: String| Error::ControlFile(format!("{}: {msg}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let mut rows: Vec<(f64, f64)> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        if record.len() != 2 {
            return Err(bad(format!("row {} has {} columns, expected 2 (t, u)", line + 1, record.len())));
        }
        let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| bad(format!("row {}: {e}", line + 1)));
        let (t, u) = (parse(&record[0])?, parse(&record[1])?);
        if !t.is_finite() || !u.is_finite() {
            return Err(bad(format!("row {} is not finite", line + 1)));
        }
        rows.push((t, u));
    }
    if rows.windows(2).any(|w| w[1].0 < w[0].0 || (w[1].0 == w[0].0 && w[0].0 != 0.0)) {
        return Err(bad("times must increase (only t = 0 may repeat)".into()));
    }
    let tol = 1e-9 * horizon.max(d);
    let (first, last) = match (rows.first(), rows.last()) {
        (Some(f), Some(l)) => (f.0, l.0),
        _ => return Err(bad("no rows".into())),
    };
    if first > -d + tol || last < horizon - tol {
        return Err(bad(format!("rows span [{first}, {last}] but must cover [-{d}, {horizon}]")));
    }
    let zero_rows: Vec<usize> = rows.iter().enumerate().filter(|(_, r)| r.0 == 0.0).map(|(i, _)| i).collect();
    let (past_rows, future_rows): (Vec<(f64, f64)>, Vec<(f64, f64)>) = match zero_rows.as_slice() {
        [first_zero, second_zero] => (rows[..=*first_zero].to_vec(), rows[*second_zero..].to_vec()),
        _ => (
            rows.iter().copied().filter(|r| r.0 <= 0.0).collect(),
            rows.iter().copied().filter(|r| r.0 >= 0.0).collect(),
        ),
    };
    let build = |part: Vec<(f64, f64)>, what: &str| {
        if part.is_empty() {
            return Err(bad(format!("no rows for the {what}")));
        }
        let (knots, values) = part.into_iter().unzip();
        PiecewiseLinear::knots(knots, values).map_err(|e| bad(e.to_string()))
    };
    // A row strictly inside a segment on only one side still needs the
    // segment bridged to 0: interpolate across 0 when it is missing.
    let mut past_rows = past_rows;
    let mut future_rows = future_rows;
    if past_rows.last().map(|r| r.0) != Some(0.0) || future_rows.first().map(|r| r.0) != Some(0.0) {
        let before = rows.iter().rev().find(|r| r.0 < 0.0).copied();
        let after = rows.iter().find(|r| r.0 > 0.0).copied();
        if let (Some(b), Some(a)) = (before, after) {
            let at_zero = b.1 + (a.1 - b.1) * (-b.0) / (a.0 - b.0);
            if past_rows.last().map(|r| r.0) != Some(0.0) {
                past_rows.push((0.0, at_zero));
            }
            if future_rows.first().map(|r| r.0) != Some(0.0) {
                future_rows.insert(0, (0.0, at_zero));
            }
        }
    }
    Ok((build(past_rows, "past segment")?, build(future_rows, "horizon")?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectiveRecord {
    pub j_hat: f64,
    pub j_se: f64,
    pub j_deterministic: f64,
    /// `v(0, (μ̄0, x1))` of the equilibrium, for comparison.
    pub value_at_start: f64,
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub antithetic: bool,
}

/// Simulates the dynamics under the chosen schedule, with the equilibrium
/// mean as the population field, and writes `paths_summary.csv` and
/// `objective.json`.
pub fn cmd_simulate(cfg: &RunConfig, source: &ControlSource, out: &Path) -> Result<ObjectiveRecord> {
    cfg.validate()?;
    create_dir(out)?;
    let params = &cfg.model;
    let sim_cfg = cfg.numerics.sim();
    let disc = Discretization {
        crosscheck_tolerance: cfg.numerics.crosscheck_tolerance,
        ..tied_discretization(params, sim_cfg.dt)?
    };
    let solution = solve_all(params, &disc)?;
    let control = match source {
        ControlSource::Optimal => solution.control(),
        ControlSource::File(path) => {
            let (past, future) = read_control_file(path, params.d, params.horizon)?;
            let grid = *solution.problem().segment();
            ControlPath::from_fn(TailFunction::from_fn(grid, |xi| past.eval(xi)), *solution.time(), |t| future.eval(t))?
        }
    };
    let output = simulate_paths(params, &control, &solution.mu0, &sim_cfg)?;

    let path = out.join("paths_summary.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(PATHS_HEADER)?;
    for k in 0..output.times.len() {
        w.write_record([num(output.times[k]), num(output.mean_path[k]), num(output.sd_path[k])])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let record = ObjectiveRecord {
        j_hat: output.j_hat,
        j_se: output.j_se,
        j_deterministic: output.j_deterministic,
        value_at_start: solution.initial_value(params.init_head_mean)?,
        n_paths: output.n_paths,
        dt: sim_cfg.dt,
        seed: sim_cfg.seed,
        antithetic: sim_cfg.antithetic,
    };
    write_json(&out.join("objective.json"), &record)?;
    info!("J = {:.8} ± {:.2e}", record.j_hat, record.j_se);
    Ok(record)
}

/// Runs the verification suite and writes `verify_report.txt`.
pub fn cmd_verify(cfg: &RunConfig, out: &Path, corrupt_h: f64) -> Result<VerifyReport> {
    cfg.validate()?;
    create_dir(out)?;
    let report = run_verification(
        &cfg.model,
        &VerifyConfig {
            sim: cfg.numerics.sim(),
            corrupt_h,
        },
    )?;
    let path = out.join("verify_report.txt");
    let mut file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    write!(file, "{report}").map_err(|e| Error::io(&path, e))?;
    Ok(report)
}
