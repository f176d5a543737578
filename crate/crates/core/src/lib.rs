//! Graph-based dependency parsing with biaffine scoring, plus tools for
//! studying how score scaling and encoder depth shape training.

pub mod analysis;
pub mod config;
pub mod data;
pub mod decode;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod model;
pub mod numerics;
pub mod synth;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
