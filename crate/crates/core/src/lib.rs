//! Latent-space control benchmark: sampling and gradient planners against a
//! goal-conditioned inverse-dynamics controller on self-trained latent world
//! models.

pub mod cli;
pub mod diagnostics;
pub mod env;
pub mod error;
pub mod eval;
pub mod gc_idm;
pub mod linalg;
pub mod nn;
pub mod pairwise_idm;
pub mod rng;
pub mod solvers;
pub mod world_model;

pub use error::{Error, Result};
