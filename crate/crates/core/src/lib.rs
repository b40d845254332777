//! Range/null decomposition of posterior uncertainty in linear inverse
//! problems, cascade posterior models, and calibration diagnostics for the
//! null-model conditional.

pub mod calibration;
pub mod error;
pub mod gaussian;
pub mod linalg;
pub mod nn;
pub mod operator;
pub mod rng;
pub mod synthetic;

pub use error::{Error, Result};
