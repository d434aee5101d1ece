//! Small neural-network engine: dense, conv2d, max-pool, LSTM, activations,
//! flatten and the learnable compression front end, with hand-written
//! backward passes, MSE loss, Adam and a finite-difference gradient checker.

pub mod checkpoint;
pub mod compression;
pub mod gradcheck;
pub mod layers;
pub mod lstm;
pub mod model;
pub mod optim;
pub mod tensor;

pub use compression::{min_max, LinearCompression};
pub use gradcheck::{grad_check, grad_check_report, GradCheckReport};
pub use layers::{ActKind, Activation, Conv2d, Dense, Flatten, Layer, MaxPool2d, Padding};
pub use lstm::Lstm;
pub use model::{mse, ForwardCache, Gradients, LayerSpec, Model};
pub use optim::{Adam, ReduceOnPlateau};
pub use tensor::{argmax, Tensor};

#[cfg(test)]
mod tests;
