//! Exact desk-scale laboratory for the exponential-utility price-impact model.
//!
//! Everything lives on a full binary tree (see [`lattice`]): equilibrium
//! prices come from an explicit backward tilt recursion ([`pricer`]), the
//! coupled quadratic BSDE is solved explicitly and by Picard iteration
//! ([`bsde`]), and [`norms`] / [`verify`] turn the theory's inequalities into
//! executable checks.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bsde;
pub mod cli;
pub mod error;
pub mod lattice;
pub mod norms;
pub mod output;
pub mod pricer;
pub mod scenario;
pub mod verify;

pub use error::{Error, Result};
pub use lattice::{AdaptedProcess, Lattice, Martingale, PredictableProcess, Terminal};
pub use pricer::{price_equilibrium, EquilibriumSolution};
pub use scenario::{DemandSpec, DividendSpec, Instance, MarketConfig, StoppingTime};
