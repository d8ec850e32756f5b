//! Dense numerical core: parameter storage, the fixed layer set with
//! hand-written backward passes, initializers, AdamW and checkpoints.

pub mod checkpoint;
pub mod finite_diff;
pub mod init;
pub mod layers;
pub mod optim;
pub mod params;
pub mod real;

pub use init::Init;
pub use layers::{AdaLnZero, DenseStack, LayerNorm, Linear, Mlp, Mode};
pub use optim::{AdamWConfig, CosineSchedule, OptimState};
pub use params::{Grads, ParamId, ParamSet, Params, Tensor};
pub use real::Real;
