//! Deterministic planar musculoskeletal running environment.

pub mod analysis;
pub mod bench;
pub mod contact;
pub mod dynamics;
pub mod environment;
pub mod error;
pub mod grader;
pub mod model;
pub mod muscle;
pub mod rng;
pub mod trajectory;

pub use error::{Error, Result};
