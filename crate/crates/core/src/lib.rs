//! Hermite–Sobolev coefficient calculus for distribution-valued semimartingales.

pub mod error;
pub mod hermite;
pub mod integration;
pub mod ito;
pub mod levy;
pub mod operators;
pub mod paths;
pub mod rng;
pub mod sobolev;

pub use error::{Error, Result};
pub use hermite::{MultiIndex, QuadratureRule};
pub use operators::{CoeffOperator, Translator};
pub use sobolev::{HermiteCoeffs, SobolevOrder};
