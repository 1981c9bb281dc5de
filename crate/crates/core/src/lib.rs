//! Finite-codebook complexity: exact bit codes, dyadic distributions, prefix
//! codebooks, conditional feature-mechanism programs, coding-length models,
//! model selection and a two-part-code file format.

pub mod bigjson;
pub mod bitcode;
pub mod cfmp;
pub mod codec;
pub mod coding;
pub mod dist;
pub mod error;
pub mod select;
pub mod ufcc;

pub use bitcode::{BitString, Nat};
pub use cfmp::Cfmp;
pub use coding::Codebook;
pub use dist::{DiscreteDistribution, Dyadic, MultiEnvSystem};
pub use error::{Error, Result};
pub use ufcc::FcBreakdown;
