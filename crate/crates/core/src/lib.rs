//! Polynomial-preserving affine processes: exact moments through the
//! generator matrix, Dynkin expansions with certified remainders, and weak
//! time-stepping schemes.

pub mod cli;
pub mod error;
pub mod generator;
pub mod linalg;
pub mod model;
pub mod polyalg;
pub mod scheme;
pub mod semigroup;
pub mod verify;

pub use error::{Error, Result};
pub use generator::{generator_matrix, GeneratorMatrix};
pub use model::{load_model, load_model_file, AffineModel};
pub use polyalg::{MultiIndex, Polynomial};
