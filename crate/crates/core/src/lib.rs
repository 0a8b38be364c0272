//! Desk-scale simulator for the regularized chemotaxis-Navier-Stokes system
//!
//! ```text
//! n_t + u.grad n = Lap n - div(n grad c) + f(n) - eps n^2
//! c_t + u.grad c = Lap c - c + n / (1 + eps n)
//! u_t + kappa (u.grad) u = Lap u + grad P + n grad phi,   div u = 0
//! ```
//!
//! on a rectangle with zero-flux conditions for `n`, `c` and no-slip for `u`,
//! together with monitors for the energy-type functionals, weak-form
//! residuals and comparison bounds that govern its long-time behavior.

// `!(x > 0.0)` style checks are how NaN gets rejected alongside bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod initial;
pub mod mesh;
pub mod ops;
pub mod oracles;
pub mod params;
pub mod spectral;
pub mod stepper;
pub mod stokes;

pub use diagnostics::{compute_record, Bases, DiagnosticsRecord, Trajectory};
pub use error::{Error, Result};
pub use harness::{run_single, RunConfig, RunOptions, RunOutcome, RunSummary};
pub use mesh::{integrate, lp_norm, DomainSpec, ScalarField, VectorField};
pub use params::{Params, Reaction};
pub use spectral::{NeumannBasis, SpectralBasis, TransformKind};
pub use stepper::{SimState, StepReport, Stepper};
pub use stokes::StokesBasis;
