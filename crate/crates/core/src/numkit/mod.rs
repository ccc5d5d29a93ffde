//! Dense numerical kernel: matrices, softmax/cross-entropy, Adam and the
//! seeded generator. Everything runs in `f64`.

mod adam;
mod matrix;
mod ops;
mod rng;

pub use adam::{AdamConfig, AdamState};
pub use matrix::{axpy, dot, Matrix};
pub use ops::{argmax, argmin, cross_entropy, softmax, LOG_FLOOR};
pub use rng::Rng;
