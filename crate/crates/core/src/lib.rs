//! Numerical toolkit for nonlinear Fokker-Planck equations
//!
//! ```text
//! rho_t - Lap beta(rho) + div(D(x) b(rho) rho) = 0
//! ```
//!
//! on a bounded box, built around the nonlinear resolvent and the
//! exponential formula `S(t) rho0 = lim (I + t/n A)^(-n) rho0`.
//!
//! The modules stack as follows: [`grid`] holds fields and discrete
//! operators, [`coefficients`] the model functions, [`resolvent`] the
//! regularized elliptic solver, [`semigroup`] the time stepping,
//! [`diagnostics`] the uniqueness functional and reference solutions, and
//! [`mckean`] the particle side.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

mod linalg;

pub mod coefficients;
pub mod diagnostics;
pub mod grid;
pub mod mckean;
pub mod resolvent;
pub mod semigroup;

pub use coefficients::{CoefficientSet, DriftField, Diffusion, Mobility};
pub use grid::{Boundary, Field, GridSpec};

#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
mod readme {}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/coefficients.md")]
    mod coefficients {}
    #[doc = include_str!("../../../book/src/grid.md")]
    mod grid {}
    #[doc = include_str!("../../../book/src/resolvent.md")]
    mod resolvent {}
    #[doc = include_str!("../../../book/src/semigroup.md")]
    mod semigroup {}
    #[doc = include_str!("../../../book/src/diagnostics.md")]
    mod diagnostics {}
    #[doc = include_str!("../../../book/src/mckean.md")]
    mod mckean {}
}
