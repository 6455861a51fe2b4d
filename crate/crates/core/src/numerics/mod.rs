//! Linear algebra, the gradient tape, seeded randomness, Adam, and the
//! finite-difference checker.

mod adam;
mod gradcheck;
pub mod linalg;
mod matrix;
mod rng;
mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{check_gradients, relative_error, GradCheckReport, RELATIVE_FLOOR};
pub use matrix::Matrix;
pub use rng::{Rng, Stream};
pub use tape::{sigmoid, softplus, Gradients, Tape, Var};
