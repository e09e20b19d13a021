//! Differentiable feed-forward substrate: tape, dense networks, optimizers.

mod fnn;
mod optim;
mod tape;

pub use fnn::{Activation, Dense, Fnn, FnnVars};
pub use optim::{Adam, AdamConfig, PlateauConfig, PlateauScheduler};
pub use tape::{BackwardFn, Gradients, Tape, Var};
