//! Dense linear algebra, seeded randomness and null-space projectors.

mod matrix;
mod projector;
mod random;
mod svd;

pub use matrix::{matmul, Matrix};
pub use projector::{
    default_rank_tolerance, null_projector_closed_form, null_projector_svd,
    rank_from_singular_values, NullProjector, ProjectorInfo, MAX_GRAM_CONDITION,
};
pub use random::{derive_seed, rng_from_seed, seeded_gaussian};
pub(crate) use random::gaussian_from;
pub use svd::{svd, SvdResult};
