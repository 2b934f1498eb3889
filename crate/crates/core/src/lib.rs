//! Preimage pooling and refinement, scale-shift-invariant training losses and
//! an affine-invariant monocular depth evaluation toolkit.

pub mod bench;
pub mod cli;
pub mod combine;
pub mod error;
pub mod gradsuite;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod preimage;
pub mod refiner;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Gradients, Graph, Scalar, Tensor};
