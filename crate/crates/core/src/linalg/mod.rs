//! Dense linear algebra and seeded randomness, in double precision.

mod matrix;
pub mod rng;

pub use matrix::{dot, l2_norm, solve_spd, DenseMatrix};
pub use rng::{derive_seed, rand_normal, SeededRng};
