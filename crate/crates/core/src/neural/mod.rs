//! Small fully connected networks trained from scratch: the stand-in for
//! both the posterior-mean regressor and the flow vector fields.

pub mod checkpoint;
mod ema;
mod mlp;
mod optim;
mod train;

pub use ema::EmaParams;
pub use mlp::{mlp_init, time_frequencies, Batch, Dense, Grads, MlpParams, MlpShape};
pub use optim::{adamw_step, AdamWConfig, OptimState};
pub use train::{fit, TrainConfig, TrainReport};
