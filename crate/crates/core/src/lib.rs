//! SIR epidemic model with demography, its two explicit ISS Lyapunov
//! functions (disease-free and endemic equilibria), and a numerical
//! certification harness.
//!
//! The crate is `no_std` and only needs `alloc`. File formats and the
//! command-line front end live in the `sir-iss` companion crate.
//!
//! Coordinates follow the usual convention: `x = (S, I, R)` is the absolute
//! state and `x̃ = x - x̂` the [`Deviation`] from a chosen [`Equilibrium`].
//! The newborn/immigration rate `B(t)` is the input and `ũ = B - B̂` its
//! perturbation.

#![cfg_attr(not(test), no_std)]
// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod error;
pub mod levelset;
pub mod lyap;
pub mod lyap_df;
pub mod lyap_en;
mod math;
pub mod model;
pub mod ode;
pub mod verify;

pub use error::Error;
pub use lyap::IssLyapunov;
pub use lyap_df::{DfLyapParams, DfLyapunov, DfOverrides, DfRegion};
pub use lyap_en::{EnDerivedConstants, EnLyapParams, EnLyapunov, EnRegion, EnTarget, X3Sign};
pub use model::{Deviation, Equilibrium, EquilibriumKind, ModelParams, Regime, State};
pub use ode::{InputSignal, Trajectory};
pub use verify::{CheckResult, Location, VerificationReport};

/// Result alias used throughout the crate.
pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Default seed for every sampled check (ASCII "SIR1").
pub const DEFAULT_SEED: u64 = 0x5349_5231;
