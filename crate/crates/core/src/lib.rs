//! Traveling invasion waves of a ratio-dependent Holling–Tanner
//! predator–prey system with nonlocal dispersal and a strong Allee effect.
//!
//! The crate builds every constructive object behind the existence theory of
//! these waves: the minimal speed `c*` ([`dispersion`]), explicit upper and
//! lower solutions ([`bounds`]), the squeeze sequence pinning the
//! right-hand limit ([`squeeze`]), a monotone fixed-point profile solver
//! ([`profile`]), and a time-domain simulator with front tracking
//! ([`evolve`]).

// `!(x > 0.0)` style checks also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod dispersion;
pub mod error;
pub mod evolve;
pub mod io;
pub mod kernel;
pub mod model;
mod numeric;
pub mod profile;
pub mod squeeze;

pub use error::{Error, Result};
pub use kernel::{Extension, Kernel};
pub use model::Params;
