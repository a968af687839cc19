//! Dense linear algebra and reverse-mode differentiation.

mod gradcheck;
mod matrix;
pub mod ops;
mod rng;
mod tape;

pub use gradcheck::{finite_diff_grad, relative_error};
pub use matrix::{dot, norm2, Matrix};
pub use rng::{Rng, RNG_ALGORITHM};
pub use tape::{BatchStats, Gradients, Tape, Var};
