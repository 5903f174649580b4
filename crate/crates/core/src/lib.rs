//! Equilibria of linear-quadratic mean-field models in which agents mix
//! cooperative and non-cooperative behavior.
//!
//! Two models are covered:
//!
//! * **mixed individual** (MI): every agent blends a selfish and an
//!   altruistic view of the population mean, weighted by `lambda`;
//! * **mixed population** (MP): a fraction `p` of the agents play a Nash
//!   game while the remaining agents jointly minimize their social cost.
//!
//! Equilibria are computed from backward Riccati systems under the affine
//! ansatz `Y = A X + B Xbar + C`, checked against the forward-backward
//! drift identities, and validated on finite-population simulations.
//!
//! ```
//! use mfmix::{equilibrium, MiParams, TimeGrid, Variant};
//!
//! let params = MiParams::unit(0.5).validate().unwrap();
//! let grid = TimeGrid::new(params.horizon, 2000).unwrap();
//! let (solution, policy) = equilibrium::solve_mi(&params, &grid, Variant::FbsdeConsistent).unwrap();
//! assert_eq!(solution.a[grid.n_steps()], params.c_t);
//! assert_eq!(policy.gain_self.len(), grid.len());
//! ```

// Small fixed-size matrix code reads best with explicit indices.
#![allow(clippy::needless_range_loop)]

pub mod conditions;
pub mod equilibrium;
pub mod error;
pub mod exec;
pub mod grid;
pub mod linalg;
pub mod model;
pub mod riccati;
pub mod rng;
pub mod sim;

pub use error::{Error, ParamError, RiccatiError, SimError};
pub use grid::TimeGrid;
pub use linalg::{Mat2, Vec2};
pub use model::{GroupParams, MiParams, MpMatrices, MpParams};
pub use riccati::{RiccatiSolutionMi, RiccatiSolutionMp, Variant};
