//! Identification of the observable low-frequency parameters of a battery
//! equivalent-circuit model (series resistance plus a constant phase element)
//! from low-rate voltage/current records.
//!
//! The CPE is replaced by a geometrically scaled RC ladder ([`cpe`]), the
//! ladder is embedded in a forward-Euler state-space cell model ([`ecm`]), and
//! the reduced parameter vector `[R_Σ, R₁, a, f_max]` is fitted by a
//! box-constrained Levenberg-Marquardt solver inside an outer loop that grows
//! the branch count until the estimate settles ([`estimation`]).
//!
//! [`excitation`] produces frequency-containment-reserve current profiles and
//! noisy synthetic measurements; [`harness`] runs Monte-Carlo campaigns and
//! residual checks on top of everything else.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cpe;
pub mod ecm;
pub mod error;
pub mod estimation;
pub mod excitation;
pub mod harness;
pub mod io;

pub use error::{Error, Result};
