//! Simulated-moments estimation for parameterized monotone Markov
//! processes on box state spaces.
//!
//! The crate simulates random dynamical systems `s_n = phi(s_{n-1},
//! eps_n, theta)` whose transition is increasing in the state, estimates
//! parameters by matching simulated moments of the invariant distribution
//! to data moments, and ships a diagnostics suite that checks the
//! structural assumptions behind the estimator's consistency: exact
//! envelope dominance, pathwise sandwich inequalities, monotone coupling,
//! a uniform law of large numbers over the parameter box, and convergence
//! of the estimator under numerical approximation of the map.
//!
//! Everything is deterministic given named seeds: shocks are base
//! uniforms pushed through strictly increasing quantile transforms, one
//! shared uniform stream serves every candidate parameter (common random
//! numbers), and parallel studies reduce in a fixed order.

pub mod approx;
pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod envelopes;
pub mod error;
pub mod estimator;
pub mod io;
pub mod models;
pub mod moments;
pub mod shocks;
pub mod simulate;
pub mod state_space;

pub use error::{Result, SmeError};

// The guide's code blocks run as doctests, so book and library cannot
// drift apart. `cargo test --doc` (part of `cargo test`) executes them.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }
    chapter!(introduction, "../../../book/src/introduction.md");
    chapter!(state_spaces, "../../../book/src/state-spaces.md");
    chapter!(dynamics, "../../../book/src/dynamics.md");
    chapter!(envelopes, "../../../book/src/envelopes.md");
    chapter!(simulation, "../../../book/src/simulation.md");
    chapter!(moments, "../../../book/src/moments.md");
    chapter!(estimation, "../../../book/src/estimation.md");
    chapter!(approximation, "../../../book/src/approximation.md");
    chapter!(diagnostics, "../../../book/src/diagnostics.md");
    chapter!(cli, "../../../book/src/cli.md");
}
