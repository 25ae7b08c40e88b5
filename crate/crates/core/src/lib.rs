//! Partitioned variational autoencoder for paired spoken and written digits.
//!
//! The crate carries its own reverse-mode autodiff ([`graph`]), the model
//! ([`networks`]), its training objectives ([`objectives`]), a synthetic
//! parallel dataset ([`data`]), the Adam trainer ([`trainer`]) and the
//! clustering and generation evaluations ([`eval`]).

pub mod error;
pub mod gaussian;
pub mod graph;
pub mod networks;
pub mod objectives;
pub mod params;
pub mod tensor;
pub mod data;
mod binio;
pub mod checkpoint;
pub mod trainer;
pub mod eval;
pub mod config;
pub mod verify;

pub use error::{Error, Result};
pub use graph::{Graph, Gradients, Var};
pub use tensor::Tensor;
