//! Run configuration files.
//!
//! A config is TOML with three sections. `[model]` holds every coefficient
//! (see [`ModelParams`]); schedules and delay profiles are either a bare
//! number or a `{ knots = [...], values = [...] }` table. `[numerics]` and
//! `[outputs]` are optional.
//!
//! ```toml
//! [model]
//! a = -0.5
//! b0 = 1.0
//! b1 = { knots = [-1.0, 0.0], values = [0.0, 1.0] }
//! # ...
//!
//! [numerics]
//! dt = 1e-3
//! n_paths = 100000
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::sim::SimConfig;
use crate::solver::Discretization;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Numerics {
    /// Time steps for `solve`.
    pub n_steps: usize,
    /// Delay-segment nodes for `solve`.
    pub n_nodes: usize,
    /// Step for `simulate` and `verify` (which tie the solver grids to it).
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub antithetic: bool,
    pub crosscheck_tolerance: f64,
}

impl Default for Numerics {
    fn default() -> Self {
        let disc = Discretization::default();
        Self {
            n_steps: disc.n_steps,
            n_nodes: disc.n_nodes,
            dt: 1e-3,
            n_paths: 100_000,
            seed: 0,
            antithetic: false,
            crosscheck_tolerance: disc.crosscheck_tolerance,
        }
    }
}

impl Numerics {
    pub fn discretization(&self) -> Discretization {
        Discretization {
            n_steps: self.n_steps,
            n_nodes: self.n_nodes,
            crosscheck_tolerance: self.crosscheck_tolerance,
        }
    }

    pub fn sim(&self) -> SimConfig {
        SimConfig {
            n_paths: self.n_paths,
            dt: self.dt,
            seed: self.seed,
            antithetic: self.antithetic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Outputs {
    pub dir: PathBuf,
    /// Number of time rows in the tail matrices (`h_tail.csv`, `mu_tail.csv`).
    pub tail_rows: usize,
}

impl Default for Outputs {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            tail_rows: 101,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelParams,
    #[serde(default)]
    pub numerics: Numerics,
    #[serde(default)]
    pub outputs: Outputs,
}

impl RunConfig {
    pub fn new(model: ModelParams) -> Self {
        Self {
            model,
            numerics: Numerics::default(),
            outputs: Outputs::default(),
        }
    }

    /// Parses and validates.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let n = &self.numerics;
        if n.n_steps < 2 {
            return Err(Error::invalid("n_steps", format!("need at least 2, got {}", n.n_steps)));
        }
        if n.n_nodes < 2 {
            return Err(Error::invalid("n_nodes", format!("need at least 2, got {}", n.n_nodes)));
        }
        if !(n.crosscheck_tolerance > 0.0) {
            return Err(Error::invalid("crosscheck_tolerance", "must be > 0"));
        }
        if self.outputs.tail_rows < 2 {
            return Err(Error::invalid("tail_rows", "need at least 2"));
        }
        n.sim().grids(&self.model)?;
        Ok(())
    }
}
