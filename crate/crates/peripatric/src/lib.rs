//! Simulation and verification toolkit for peripatric metapopulations: one
//! large population of size `N` surrounded by short-lived colonies of size
//! `eps * N` founded by emigration and destroyed by fusion.
//!
//! The crate provides:
//!
//! - [`colony`]: the colony-count birth-death chain, its stationary law,
//!   and its deterministic fluid limit;
//! - [`ancestral`]: exact event-driven simulation of the backward ancestral
//!   chain of a finite sample, reported in rescaled time;
//! - [`forward`]: a small-scale individual-based forward simulator with
//!   full event logging and backward ancestry extraction, used as an
//!   independent oracle for the ancestral chain;
//! - [`coalescent`]: the two-state censored coalescent and the time-changed
//!   Kingman coalescent, with exact finite-state distributions via
//!   uniformization;
//! - [`stats`] and [`studies`]: empirical distributions, TV/KS distances,
//!   and the convergence studies tying the finite-size simulators to their
//!   limits, with machine-readable reports.

pub mod ancestral;
pub mod colony;
pub mod coalescent;
pub mod error;
pub mod forward;
pub mod params;
pub mod rng;
pub mod stats;
pub mod studies;

pub use error::{Error, Result};
pub use params::ModelParams;
pub use rng::Rng;
