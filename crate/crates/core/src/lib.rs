//! Null-space projected adversarial training for small ReLU networks.
//!
//! The last layer `y = M·h + b` of a trained classifier defines a projector
//! `P` onto the null space of `M`. Perturbations or weight updates filtered
//! through `P` leave the standard model's logits untouched, which is the basis
//! of the NPDA and NPGD trainers.

pub mod attacks;
pub mod error;
pub mod harness;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod trainers;

pub use error::{Error, Result};
pub use model::{init_model, load_model, save_model, NetworkModel};
pub use numerics::{null_projector_closed_form, null_projector_svd, svd, Matrix, NullProjector};
pub use trainers::{train, Method, TrainReport, TrainSpec};
