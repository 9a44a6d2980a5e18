//! Contextual word sense disambiguation on top of a frozen transformer
//! encoder.
//!
//! The pipeline runs corpus loading ([`corpus`]), context framing and
//! encoding ([`encoder`]), a disambiguation head ([`heads`]), training
//! ([`trainer`]) and scoring ([`eval`]).

pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod features;
pub mod heads;
pub mod store;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
