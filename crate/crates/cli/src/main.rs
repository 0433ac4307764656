use std::path::PathBuf;
use std::process::ExitCode;

use carryover_mfg::commands::{cmd_simulate, cmd_solve, cmd_verify, ControlSource};
use carryover_mfg::config::RunConfig;
use carryover_mfg::Error;
use clap::{Args, Parser, Subcommand};

/// Solve, simulate and verify the linear-quadratic advertising game with
/// carryover effects.
///
/// Log verbosity follows `RUST_LOG` (for example `RUST_LOG=info`).
#[derive(Parser, Debug)]
#[command(name = "carryover-mfg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve for h, k, the equilibrium spend and the population mean.
    Solve(Common),
    /// Monte Carlo the state under the equilibrium or a given spend.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// `t,u` CSV covering the past segment and the horizon; defaults to
        /// the equilibrium spend.
        #[arg(long)]
        control: Option<PathBuf>,
    },
    /// Cross-check the solver against the simulator.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Scale h after solving (test hook; verification must then fail).
        #[arg(long, hide = true, default_value_t = 1.0)]
        corrupt_h: f64,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `outputs.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of Monte Carlo paths.
    #[arg(long)]
    paths: Option<usize>,
    /// Step for `simulate` and `verify`.
    #[arg(long)]
    dt: Option<f64>,
    /// Time steps for `solve`.
    #[arg(long)]
    steps: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<(RunConfig, PathBuf), Error> {
        let mut cfg = RunConfig::load(&self.config)?;
        let n = &mut cfg.numerics;
        if let Some(seed) = self.seed {
            n.seed = seed;
        }
        if let Some(paths) = self.paths {
            n.n_paths = paths;
        }
        if let Some(dt) = self.dt {
            n.dt = dt;
        }
        if let Some(steps) = self.steps {
            n.n_steps = steps;
        }
        if let Some(out) = &self.out {
            cfg.outputs.dir = out.clone();
        }
        cfg.validate()?;
        let out = cfg.outputs.dir.clone();
        Ok((cfg, out))
    }
}

fn is_input_error(e: &Error) -> bool {
    matches!(
        e,
        Error::InvalidParameter { .. } | Error::Config(_) | Error::ControlFile(_) | Error::GridMismatch(_)
    )
}

fn report(e: &Error) {
    eprintln!("error: {e}");
}

/// Any failure to read or validate the configuration is an input error.
fn load(common: &Common) -> Option<(RunConfig, PathBuf)> {
    common.load().map_err(|e| report(&e)).ok()
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Solve(common) => {
            let Some((cfg, out)) = load(&common) else {
                return Ok(ExitCode::from(2));
            };
            let s = cmd_solve(&cfg, &out)?;
            println!("v(0) = {:.12e}", s.value_at_start);
            println!("u_star(0) = {:.12e}", s.u_star_start);
            println!("mu0(T) = {:.12e}", s.mu0_terminal);
            println!("outputs written to {}", out.display());
        }
        Command::Simulate { common, control } => {
            let Some((cfg, out)) = load(&common) else {
                return Ok(ExitCode::from(2));
            };
            let source = control.map_or(ControlSource::Optimal, ControlSource::File);
            let rec = cmd_simulate(&cfg, &source, &out)?;
            println!("j_hat = {:.12e} (se {:.3e})", rec.j_hat, rec.j_se);
            println!("j_deterministic = {:.12e}", rec.j_deterministic);
            println!("outputs written to {}", out.display());
        }
        Command::Verify { common, corrupt_h } => {
            let Some((cfg, out)) = load(&common) else {
                return Ok(ExitCode::from(2));
            };
            let report = cmd_verify(&cfg, &out, corrupt_h)?;
            print!("{report}");
            if !report.passed() {
                eprintln!("verification failed: {}", report.failures().join(", "));
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            report(&e);
            ExitCode::from(if is_input_error(&e) { 2 } else { 1 })
        }
    }
}
