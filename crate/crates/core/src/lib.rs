//! Linear-quadratic mean field game of advertising with carryover effects.
//!
//! The delayed goodwill dynamics are lifted to the Hilbert space
//! `ℝ × L²([-d, 0])`, where the value function is affine in the state and
//! the equilibrium comes out of linear backward and forward equations.
//! [`solver::solve_all`] computes it; [`sim`] simulates the original
//! delayed equation by Monte Carlo; [`verify`] checks one against the
//! other. The guide under `book/` walks through each piece.

pub mod commands;
pub mod config;
pub mod control;
pub mod error;
pub mod hilbert;
pub mod operators;
pub mod params;
pub mod sim;
pub mod solver;
pub mod verify;

pub use error::{Error, Result};

// Compile and run the guide's code blocks as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/state-space.md")]
    mod state_space {}
    #[doc = include_str!("../../../book/src/semigroups.md")]
    mod semigroups {}
    #[doc = include_str!("../../../book/src/solving.md")]
    mod solving {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
