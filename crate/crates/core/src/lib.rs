//! Hamiltonian Monte Carlo with static and dynamic integration times.
//!
//! The crate is organised bottom-up:
//!
//! * [`targets`]: differentiable target densities (Gaussian families, 1-PL IRT).
//! * [`phase`]: phase-space points, kinetic energy, the Hamiltonian and the virial.
//! * [`integrator`]: leapfrog integration, divergence detection and the exact
//!   Gaussian flow used to validate it.
//! * [`termination`]: mergeable segment statistics, the No-U-Turn and
//!   exhaustion criteria, and forward criterion traces.
//! * [`trajectory`]: static and dynamic (multiplicative doubling) transitions.
//! * [`chain`]: seeded Markov chains and a coarse step-size search.
//! * [`diagnostics`]: effective sample size, autocorrelation and energy diagnostics.
//!
//! With the default `parallel` feature, independent chains and batch jobs run on
//! the rayon thread pool; without it they run sequentially. Results are identical
//! either way.

pub mod chain;
pub mod diagnostics;
pub mod error;
pub mod integrator;
pub mod parallel;
pub mod phase;
pub mod targets;
pub mod termination;
pub mod trajectory;

pub use chain::{
    run_chain, run_chain_with, run_chains, Algorithm, ChainOutput, Init, SamplerConfig,
};
pub use error::{Error, Result};
pub use phase::{EuclideanMetric, HamiltonianSystem, PhasePoint, PhaseState};
pub use targets::{FlatModel, GaussianModel, IrtModel, Target};
