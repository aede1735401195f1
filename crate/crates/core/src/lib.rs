//! Group-structured distributionally robust training.
//!
//! Perturbations act on a whole group of `m` samples at once and are priced
//! by a group transportation cost whose non-smooth part forces them to be
//! universal, column-sparse or low-rank. Training alternates an ADMM inner
//! maximization with a gradient step on the model.

pub mod attacks;
pub mod cli;
pub mod data;
pub mod error;
pub mod gdadmm;
pub mod groupcost;
pub mod io;
pub mod linalg;
pub mod models;
pub mod ot_oracle;
pub mod prox;

pub use error::{Error, Result};
pub use groupcost::{CostKind, GroupCostSpec};
pub use linalg::Matrix;
